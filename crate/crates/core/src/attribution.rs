//! Average causal effect (ACE) of latent features on a class logit.
//!
//! For a classifier `g` over latent features `z ∈ ℝⁿ`, intervening with
//! `do(zʲ = α)` while every other coordinate `zᵏ` stays independent and
//! uniform on `[lowᵏ, highᵏ]` gives the interventional expectation
//! `E[y | do(zʲ = α)]`. The baseline averages that expectation over
//! `α ~ Uniform(lowʲ, highʲ)`, and the ACE is their difference. An ACE
//! vector collects the effect of every coordinate at a sample's own
//! feature values, targeting the logit of that sample's class.
//!
//! Three estimators are available:
//!
//! - **analytic-affine**: exact closed form for an affine head,
//!   `ACE = W[y, j] · (α − μⱼ)` with `μⱼ` the interval midpoint.
//! - **monte-carlo**: `K` uniform draws fixed by the configured seed and
//!   shared between the intervened and baseline terms, so the estimate
//!   is a deterministic, differentiable function of `α` and the head.
//! - **quadrature**: midpoint rule on a product grid. Cost grows as
//!   `Gⁿ`, so it is limited to `n ≤ 4` and meant for cross-checking.
//!
//! Bounds are plain values: no gradient ever flows into them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{BoundModel, ModelBundle};
use crate::numcore::{Tape, Tensor, Var};

/// Largest latent width the quadrature estimator accepts.
pub const QUADRATURE_MAX_DIM: usize = 4;

/// Rows evaluated per classifier call in the quadrature estimator.
const QUADRATURE_CHUNK: usize = 1 << 15;

/// Per-coordinate intervention interval `[lowʲ, highʲ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBounds {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl FeatureBounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() {
            return Err(Error::Dimension(format!(
                "bounds: {} lows and {} highs",
                low.len(),
                high.len()
            )));
        }
        for (j, (l, h)) in low.iter().zip(&high).enumerate() {
            if !l.is_finite() || !h.is_finite() || l > h {
                return Err(Error::Contract(format!(
                    "bounds for coordinate {j} are not an interval: [{l}, {h}]"
                )));
            }
        }
        Ok(Self { low, high })
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn midpoint(&self, j: usize) -> f64 {
        0.5 * (self.low[j] + self.high[j])
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| self.midpoint(j)).collect()
    }

    pub fn width(&self, j: usize) -> f64 {
        self.high[j] - self.low[j]
    }

    pub fn contains(&self, j: usize, alpha: f64) -> bool {
        self.low[j] <= alpha && alpha <= self.high[j]
    }

    /// Number of entries of `z` (row-major `b × n`) outside their interval.
    pub fn count_outside(&self, z: &[f64]) -> usize {
        let n = self.dim();
        z.iter()
            .enumerate()
            .filter(|(i, &a)| !self.contains(i % n, a))
            .count()
    }
}

/// Per-coordinate min/max of a `b × n` feature batch, widened on each
/// side by `epsilon · (range + 1)`.
pub fn compute_bounds(features: &Tensor, epsilon: f64) -> Result<FeatureBounds> {
    if features.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "bounds need a b×n matrix, got {:?}",
            features.shape()
        )));
    }
    let (b, n) = (features.rows(), features.cols());
    if b == 0 {
        return Err(Error::Contract("cannot compute bounds of an empty batch".into()));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("bounds epsilon must be >= 0, got {epsilon}")));
    }
    let mut low = vec![f64::INFINITY; n];
    let mut high = vec![f64::NEG_INFINITY; n];
    for i in 0..b {
        for (j, &v) in features.row(i).iter().enumerate() {
            low[j] = low[j].min(v);
            high[j] = high[j].max(v);
        }
    }
    for j in 0..n {
        let pad = epsilon * (high[j] - low[j] + 1.0);
        low[j] -= pad;
        high[j] += pad;
    }
    FeatureBounds::new(low, high)
}

/// `do(z[coordinate] = value)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterventionSpec {
    pub coordinate: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorMode {
    AnalyticAffine,
    MonteCarlo,
    Quadrature,
}

impl std::str::FromStr for EstimatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" | "analytic-affine" => Ok(Self::AnalyticAffine),
            "mc" | "monte-carlo" => Ok(Self::MonteCarlo),
            "quadrature" => Ok(Self::Quadrature),
            other => Err(Error::Config(format!("unknown estimator mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for EstimatorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::AnalyticAffine => "analytic-affine",
            Self::MonteCarlo => "monte-carlo",
            Self::Quadrature => "quadrature",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AceEstimatorConfig {
    pub mode: EstimatorMode,
    /// Monte-Carlo draw count `K`.
    pub samples: usize,
    /// Quadrature points per axis `G`.
    pub grid_points: usize,
    pub seed: u64,
}

impl AceEstimatorConfig {
    pub fn analytic() -> Self {
        Self {
            mode: EstimatorMode::AnalyticAffine,
            samples: 64,
            grid_points: 64,
            seed: 0,
        }
    }

    pub fn monte_carlo(samples: usize, seed: u64) -> Self {
        Self {
            mode: EstimatorMode::MonteCarlo,
            samples,
            seed,
            ..Self::analytic()
        }
    }

    pub fn quadrature(grid_points: usize) -> Self {
        Self {
            mode: EstimatorMode::Quadrature,
            grid_points,
            ..Self::analytic()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("Monte-Carlo sample count must be >= 1".into()));
        }
        if self.grid_points < 2 {
            return Err(Error::Config("quadrature needs at least 2 grid points".into()));
        }
        Ok(())
    }
}

/// An estimate with its Monte-Carlo standard error (0 for exact modes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
        }
    }

    fn from_samples(samples: &[f64]) -> Self {
        let k = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / k;
        let var = if samples.len() > 1 {
            samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        Self {
            value: mean,
            std_error: (var / k).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AceVector {
    pub values: Vec<f64>,
    pub target_class: usize,
    pub sample_id: usize,
}

fn check_call(model: &ModelBundle, bounds: &FeatureBounds, cfg: &AceEstimatorConfig, target: usize) -> Result<()> {
    cfg.validate()?;
    let n = model.latent_dim();
    if bounds.dim() != n {
        return Err(Error::Dimension(format!(
            "bounds cover {} coordinates, latent width is {n}",
            bounds.dim()
        )));
    }
    if target >= model.classes() {
        return Err(Error::Index(format!(
            "target class {target} with {} classes",
            model.classes()
        )));
    }
    match cfg.mode {
        EstimatorMode::AnalyticAffine if model.affine_head().is_none() => Err(Error::Estimator(
            "analytic-affine mode requires an affine classifier head".into(),
        )),
        EstimatorMode::Quadrature if n > QUADRATURE_MAX_DIM => Err(Error::Estimator(format!(
            "quadrature supports latent width <= {QUADRATURE_MAX_DIM}, got {n}"
        ))),
        _ => Ok(()),
    }
}

fn check_coordinate(model: &ModelBundle, j: usize) -> Result<()> {
    if j >= model.latent_dim() {
        return Err(Error::Index(format!(
            "coordinate {j} with latent width {}",
            model.latent_dim()
        )));
    }
    Ok(())
}

/// `K × n` uniform draws on the bounds, fixed by `seed`.
pub fn uniform_draws(bounds: &FeatureBounds, samples: usize, seed: u64) -> Tensor {
    let n = bounds.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(samples * n);
    for _ in 0..samples {
        for j in 0..n {
            let u: f64 = rng.gen();
            data.push(bounds.low[j] + u * bounds.width(j));
        }
    }
    Tensor::from_parts_unchecked(vec![samples, n], data)
}

fn target_column(logits: &Tensor, target: usize) -> impl Iterator<Item = f64> + '_ {
    let c = logits.cols();
    logits.data().iter().skip(target).step_by(c).copied()
}

/// Weighted sum `Σₖ W[t,k] μₖ + b[t]` with coordinate `j` (if any) set to `alpha`.
fn affine_expectation(model: &ModelBundle, bounds: &FeatureBounds, target: usize, fixed: Option<(usize, f64)>) -> f64 {
    let (w, b) = model.affine_head().expect("checked affine head");
    let row = w.row(target);
    let mut acc = 0.0;
    for (k, &wk) in row.iter().enumerate() {
        let v = match fixed {
            Some((j, alpha)) if j == k => alpha,
            _ => bounds.midpoint(k),
        };
        acc += wk * v;
    }
    acc + b.data()[target]
}

fn midpoint_grid(bounds: &FeatureBounds, j: usize, g: usize) -> Vec<f64> {
    let step = bounds.width(j) / g as f64;
    (0..g).map(|i| bounds.low[j] + (i as f64 + 0.5) * step).collect()
}

/// Mean target logit over the product grid of all coordinates except
/// `fixed`, which is pinned to its value.
fn quadrature_mean(model: &ModelBundle, bounds: &FeatureBounds, target: usize, g: usize, fixed: Option<(usize, f64)>) -> Result<f64> {
    let n = bounds.dim();
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|k| match fixed {
            Some((j, alpha)) if j == k => vec![alpha],
            _ => midpoint_grid(bounds, k, g),
        })
        .collect();
    let total: usize = axes.iter().map(Vec::len).product();
    let mut sum = 0.0;
    let mut start = 0;
    while start < total {
        let end = (start + QUADRATURE_CHUNK).min(total);
        let mut rows = Vec::with_capacity((end - start) * n);
        for flat in start..end {
            let mut rem = flat;
            let base = rows.len();
            rows.resize(base + n, 0.0);
            for k in (0..n).rev() {
                let len = axes[k].len();
                rows[base + k] = axes[k][rem % len];
                rem /= len;
            }
        }
        let logits = model.classify_values(&Tensor::from_parts_unchecked(vec![end - start, n], rows))?;
        sum += target_column(&logits, target).sum::<f64>();
        start = end;
    }
    Ok(sum / total as f64)
}

fn mc_logits(model: &ModelBundle, draws: &Tensor, fixed: Option<(usize, f64)>) -> Result<Tensor> {
    match fixed {
        None => model.classify_values(draws),
        Some((j, alpha)) => {
            let n = draws.cols();
            let mut rows = draws.clone();
            for r in rows.data_mut().chunks_mut(n) {
                r[j] = alpha;
            }
            model.classify_values(&rows)
        }
    }
}

/// `E[y_target | do(zʲ = α)]`.
pub fn interventional_expectation(
    model: &ModelBundle,
    intervention: InterventionSpec,
    bounds: &FeatureBounds,
    cfg: &AceEstimatorConfig,
    target: usize,
) -> Result<Estimate> {
    check_call(model, bounds, cfg, target)?;
    let InterventionSpec { coordinate: j, value: alpha } = intervention;
    check_coordinate(model, j)?;
    if !alpha.is_finite() {
        return Err(Error::NonFinite("intervention value".into()));
    }
    match cfg.mode {
        EstimatorMode::AnalyticAffine => Ok(Estimate::exact(affine_expectation(model, bounds, target, Some((j, alpha))))),
        EstimatorMode::MonteCarlo => {
            let draws = uniform_draws(bounds, cfg.samples, cfg.seed);
            let logits = mc_logits(model, &draws, Some((j, alpha)))?;
            Ok(Estimate::from_samples(&target_column(&logits, target).collect::<Vec<_>>()))
        }
        EstimatorMode::Quadrature => Ok(Estimate::exact(quadrature_mean(
            model,
            bounds,
            target,
            cfg.grid_points,
            Some((j, alpha)),
        )?)),
    }
}

/// `E_α[E[y_target | do(zʲ = α)]]` with `α ~ Uniform(lowʲ, highʲ)`.
///
/// Because every other coordinate is already uniform and independent, the
/// value does not depend on `j` beyond its bounds check.
pub fn baseline_expectation(
    model: &ModelBundle,
    coordinate: usize,
    bounds: &FeatureBounds,
    cfg: &AceEstimatorConfig,
    target: usize,
) -> Result<Estimate> {
    check_call(model, bounds, cfg, target)?;
    check_coordinate(model, coordinate)?;
    match cfg.mode {
        EstimatorMode::AnalyticAffine => Ok(Estimate::exact(affine_expectation(model, bounds, target, None))),
        EstimatorMode::MonteCarlo => {
            let draws = uniform_draws(bounds, cfg.samples, cfg.seed);
            let logits = mc_logits(model, &draws, None)?;
            Ok(Estimate::from_samples(&target_column(&logits, target).collect::<Vec<_>>()))
        }
        EstimatorMode::Quadrature => Ok(Estimate::exact(quadrature_mean(model, bounds, target, cfg.grid_points, None)?)),
    }
}

/// ACE of coordinate `j` at value `α` on the target logit.
pub fn ace_value(
    model: &ModelBundle,
    intervention: InterventionSpec,
    bounds: &FeatureBounds,
    cfg: &AceEstimatorConfig,
    target: usize,
) -> Result<Estimate> {
    check_call(model, bounds, cfg, target)?;
    let InterventionSpec { coordinate: j, value: alpha } = intervention;
    check_coordinate(model, j)?;
    if !alpha.is_finite() {
        return Err(Error::NonFinite("intervention value".into()));
    }
    match cfg.mode {
        EstimatorMode::AnalyticAffine => {
            let (w, _) = model.affine_head().expect("checked affine head");
            Ok(Estimate::exact(w.at(target, j) * (alpha - bounds.midpoint(j))))
        }
        EstimatorMode::MonteCarlo => {
            let draws = uniform_draws(bounds, cfg.samples, cfg.seed);
            let base = mc_logits(model, &draws, None)?;
            let hit = mc_logits(model, &draws, Some((j, alpha)))?;
            let diffs: Vec<f64> = target_column(&hit, target)
                .zip(target_column(&base, target))
                .map(|(a, b)| a - b)
                .collect();
            Ok(Estimate::from_samples(&diffs))
        }
        EstimatorMode::Quadrature => {
            let ie = quadrature_mean(model, bounds, target, cfg.grid_points, Some((j, alpha)))?;
            let base = quadrature_mean(model, bounds, target, cfg.grid_points, None)?;
            Ok(Estimate::exact(ie - base))
        }
    }
}

/// ACE of coordinate `j` over many intervention values, sharing one
/// baseline evaluation.
pub fn ace_curve(
    model: &ModelBundle,
    coordinate: usize,
    alphas: &[f64],
    bounds: &FeatureBounds,
    cfg: &AceEstimatorConfig,
    target: usize,
) -> Result<Vec<f64>> {
    check_call(model, bounds, cfg, target)?;
    check_coordinate(model, coordinate)?;
    match cfg.mode {
        EstimatorMode::Quadrature => {
            let base = quadrature_mean(model, bounds, target, cfg.grid_points, None)?;
            alphas
                .iter()
                .map(|&a| Ok(quadrature_mean(model, bounds, target, cfg.grid_points, Some((coordinate, a)))? - base))
                .collect()
        }
        _ => alphas
            .iter()
            .map(|&a| {
                ace_value(
                    model,
                    InterventionSpec {
                        coordinate,
                        value: a,
                    },
                    bounds,
                    cfg,
                    target,
                )
                .map(|e| e.value)
            })
            .collect(),
    }
}

/// ACE vector of one sample: entry `j` is the ACE of coordinate `j` at
/// `α = z[j]`. Values outside the bounds are used as-is.
pub fn ace_vector(
    model: &ModelBundle,
    z: &[f64],
    target: usize,
    bounds: &FeatureBounds,
    cfg: &AceEstimatorConfig,
    sample_id: usize,
) -> Result<AceVector> {
    check_call(model, bounds, cfg, target)?;
    if z.len() != model.latent_dim() {
        return Err(Error::Dimension(format!(
            "latent vector of length {}, expected {}",
            z.len(),
            model.latent_dim()
        )));
    }
    let outside = bounds.count_outside(z);
    if outside > 0 {
        log::debug!("sample {sample_id}: {outside} latent coordinates outside the intervention bounds");
    }
    let values = match cfg.mode {
        EstimatorMode::MonteCarlo => {
            // one shared baseline pass for all coordinates
            let draws = uniform_draws(bounds, cfg.samples, cfg.seed);
            let base: Vec<f64> = target_column(&mc_logits(model, &draws, None)?, target).collect();
            let mut out = Vec::with_capacity(z.len());
            for (j, &alpha) in z.iter().enumerate() {
                let hit = mc_logits(model, &draws, Some((j, alpha)))?;
                let diffs: Vec<f64> = target_column(&hit, target).zip(&base).map(|(a, b)| a - b).collect();
                out.push(Estimate::from_samples(&diffs).value);
            }
            out
        }
        _ => z
            .iter()
            .enumerate()
            .map(|(j, &alpha)| {
                ace_value(
                    model,
                    InterventionSpec {
                        coordinate: j,
                        value: alpha,
                    },
                    bounds,
                    cfg,
                    target,
                )
                .map(|e| e.value)
            })
            .collect::<Result<_>>()?,
    };
    Ok(AceVector {
        values,
        target_class: target,
        sample_id,
    })
}

/// ACE vectors for a batch of latent features, recorded on a tape.
pub struct AceBatch {
    /// `b × n` ACE values.
    pub values: Var,
    /// Latent entries that fell outside the bounds (not clamped).
    pub out_of_bounds: usize,
}

/// Differentiable ACE vectors of `z: b × n` for the given target classes.
///
/// Gradients reach `z` and the classifier parameters; the bounds and the
/// Monte-Carlo draws are constants.
pub fn ace_batch(
    tape: &mut Tape,
    model: &BoundModel,
    z: Var,
    targets: &[usize],
    bounds: &FeatureBounds,
    cfg: &AceEstimatorConfig,
) -> Result<AceBatch> {
    cfg.validate()?;
    let shape = tape.shape(z).to_vec();
    let [b, n] = shape[..] else {
        return Err(Error::Dimension(format!("latent batch must be b×n, got {shape:?}")));
    };
    if targets.len() != b {
        return Err(Error::Dimension(format!("{} targets for {b} samples", targets.len())));
    }
    if bounds.dim() != n {
        return Err(Error::Dimension(format!(
            "bounds cover {} coordinates, latent width is {n}",
            bounds.dim()
        )));
    }
    let out_of_bounds = bounds.count_outside(tape.value(z));
    if out_of_bounds > 0 {
        log::debug!("{out_of_bounds} latent entries outside the intervention bounds");
    }
    let values = match cfg.mode {
        EstimatorMode::AnalyticAffine => {
            let (w, _) = model.affine_head().ok_or_else(|| {
                Error::Estimator("analytic-affine mode requires an affine classifier head".into())
            })?;
            let rows = tape.gather_rows(w, targets)?;
            let mu = bounds.midpoints();
            let centers: Vec<f64> = (0..b).flat_map(|_| mu.iter().copied()).collect();
            let centers = tape.constant(Tensor::from_parts_unchecked(vec![b, n], centers));
            let offsets = tape.sub(z, centers)?;
            tape.mul(rows, offsets)?
        }
        EstimatorMode::MonteCarlo => {
            let k = cfg.samples;
            let draws = uniform_draws(bounds, k, cfg.seed);

            let rows = tape.intervene(z, &draws)?;
            let logits = model.classify(tape, rows)?;
            let picks: Vec<usize> = targets.iter().flat_map(|&t| std::iter::repeat_n(t, n * k)).collect();
            let picked = tape.gather_cols(logits, &picks)?;
            let ie = tape.mean_groups(picked, k)?;
            let ie = tape.reshape(ie, &[b, n])?;

            let draws_var = tape.constant(draws);
            let base_logits = model.classify(tape, draws_var)?;
            let avg = tape.constant(Tensor::filled(&[1, k], 1.0 / k as f64));
            let class_means = tape.matmul(avg, base_logits)?;
            let classes = tape.shape(class_means)[1];
            let class_means = tape.reshape(class_means, &[classes, 1])?;
            let base = tape.gather_rows(class_means, targets)?;
            let spread = tape.constant(Tensor::filled(&[1, n], 1.0));
            let base = tape.matmul(base, spread)?;
            tape.sub(ie, base)?
        }
        EstimatorMode::Quadrature => {
            return Err(Error::Estimator(
                "quadrature is an oracle-only estimator and is not differentiable".into(),
            ))
        }
    };
    Ok(AceBatch { values, out_of_bounds })
}

/// ACE vectors of every row of `z: b × n` as a `b × n` matrix, for any
/// estimator mode. Row `i` targets class `targets[i]`.
pub fn ace_matrix(
    model: &ModelBundle,
    z: &Tensor,
    targets: &[usize],
    bounds: &FeatureBounds,
    cfg: &AceEstimatorConfig,
) -> Result<Tensor> {
    if z.shape().len() != 2 || z.rows() != targets.len() {
        return Err(Error::Dimension(format!(
            "latent matrix {:?} with {} targets",
            z.shape(),
            targets.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= model.classes()) {
        return Err(Error::Index(format!("target class {t} with {} classes", model.classes())));
    }
    if cfg.mode == EstimatorMode::Quadrature {
        let mut data = Vec::with_capacity(z.len());
        for (i, &t) in targets.iter().enumerate() {
            data.extend(ace_vector(model, z.row(i), t, bounds, cfg, i)?.values);
        }
        return Tensor::new(z.shape().to_vec(), data);
    }
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let zv = tape.constant(z.clone());
    let ace = ace_batch(&mut tape, &bound, zv, targets, bounds, cfg)?;
    Ok(tape.tensor(ace.values))
}
