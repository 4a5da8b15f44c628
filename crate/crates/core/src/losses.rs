//! Training objective: cross-entropy plus a triplet hinge over ACE vectors.
//!
//! For sample `i`, a positive `p` (same label) and a negative `n`
//! (different label) are drawn uniformly from the current minibatch. With
//! Manhattan distance `d`, the per-sample term is
//! `max(d(cᵢ, c_p) − d(cᵢ, c_n) + δ, 0)`, and the batch objective is
//! `mean CE + ρ · mean term`. Samples lacking a positive or a negative
//! contribute 0.

use rand::Rng;

use crate::attribution::{ace_batch, compute_bounds, AceEstimatorConfig, AceVector, FeatureBounds};
use crate::error::{Error, Result};
use crate::models::BoundModel;
use crate::numcore::{Tape, Tensor, Var};

/// Same-label and different-label index sets for every batch position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletSets {
    positives: Vec<Vec<usize>>,
    negatives: Vec<Vec<usize>>,
}

impl TripletSets {
    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn positives(&self, i: usize) -> &[usize] {
        &self.positives[i]
    }

    pub fn negatives(&self, i: usize) -> &[usize] {
        &self.negatives[i]
    }
}

pub fn build_triplet_sets(labels: &[usize]) -> TripletSets {
    let mut positives = vec![Vec::new(); labels.len()];
    let mut negatives = vec![Vec::new(); labels.len()];
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if i == j {
                continue;
            }
            if yi == yj {
                positives[i].push(j);
            } else {
                negatives[i].push(j);
            }
        }
    }
    TripletSets {
        positives,
        negatives,
    }
}

/// Batch positions of one positive and one negative partner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairDraw {
    pub positive: Option<usize>,
    pub negative: Option<usize>,
}

impl PairDraw {
    pub fn complete(&self) -> Option<(usize, usize)> {
        Some((self.positive?, self.negative?))
    }
}

pub fn sample_pair<R: Rng + ?Sized>(sets: &TripletSets, i: usize, rng: &mut R) -> PairDraw {
    let mut pick = |set: &[usize]| {
        if set.is_empty() {
            None
        } else {
            Some(set[rng.gen_range(0..set.len())])
        }
    };
    let positive = pick(&sets.positives[i]);
    let negative = pick(&sets.negatives[i]);
    PairDraw { positive, negative }
}

/// One pair draw per batch position, in position order.
pub fn sample_pairs<R: Rng + ?Sized>(sets: &TripletSets, rng: &mut R) -> Vec<PairDraw> {
    (0..sets.len()).map(|i| sample_pair(sets, i, rng)).collect()
}

pub fn manhattan_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "distance between vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}

pub fn manhattan(a: &AceVector, b: &AceVector) -> Result<f64> {
    manhattan_slices(&a.values, &b.values)
}

/// `max(d(cᵢ, c_p) − d(cᵢ, c_n) + δ, 0)`, or 0 when a partner is missing.
pub fn contrastive_ace_term(
    anchor: &AceVector,
    positive: Option<&AceVector>,
    negative: Option<&AceVector>,
    margin: f64,
) -> Result<f64> {
    let (Some(p), Some(n)) = (positive, negative) else {
        return Ok(0.0);
    };
    let dp = manhattan(anchor, p)?;
    let dn = manhattan(anchor, n)?;
    Ok((dp - dn + margin).max(0.0))
}

/// `erm + ρ · contrastive`.
pub fn combine(erm: f64, contrastive: f64, weight: f64) -> f64 {
    erm + weight * contrastive
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveConfig {
    /// Hinge margin δ.
    pub margin: f64,
    /// Regularizer weight ρ.
    pub weight: f64,
    /// Seed of the pair-sampling stream.
    pub seed: u64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            margin: 0.05,
            weight: 1.0,
            seed: 0,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be > 0, got {}", self.margin)));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::Config(format!("weight must be >= 0, got {}", self.weight)));
        }
        Ok(())
    }
}

/// Where the intervention bounds come from.
#[derive(Debug, Clone)]
pub enum BoundsSource {
    /// Min/max of the batch's own latent features, widened by `epsilon`.
    Batch { epsilon: f64 },
    Fixed(FeatureBounds),
}

/// A labeled minibatch; `ids` are dataset-wide sample ids.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct LossParts {
    pub total: Var,
    pub erm: f64,
    /// Mean hinge term over the batch, before weighting.
    pub contrastive: f64,
    /// Samples whose hinge was strictly positive.
    pub active: usize,
    /// Samples that had both a positive and a negative partner.
    pub with_pairs: usize,
    pub out_of_bounds: usize,
}

/// Records the full objective on `tape`.
///
/// The batch is processed in ascending sample-id order, so any
/// permutation of the batch together with its pair draws yields a
/// bitwise-identical loss. `pairs[i]` refers to batch positions.
pub fn total_loss(
    tape: &mut Tape,
    model: &BoundModel,
    batch: &Batch,
    pairs: &[PairDraw],
    bounds: &BoundsSource,
    estimator: &AceEstimatorConfig,
    contrastive: &ContrastiveConfig,
) -> Result<LossParts> {
    contrastive.validate()?;
    let b = batch.len();
    if b == 0 {
        return Err(Error::Contract("loss of an empty batch".into()));
    }
    if batch.ids.len() != b || batch.features.rows() != b || pairs.len() != b {
        return Err(Error::Dimension(format!(
            "batch parts disagree: {} ids, {} feature rows, {} labels, {} pair draws",
            batch.ids.len(),
            batch.features.rows(),
            b,
            pairs.len()
        )));
    }

    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by_key(|&i| batch.ids[i]);
    let mut rank = vec![0; b];
    for (c, &i) in order.iter().enumerate() {
        rank[i] = c;
    }
    let d = batch.features.cols();
    let mut feats = Vec::with_capacity(b * d);
    for &i in &order {
        feats.extend_from_slice(batch.features.row(i));
    }
    let labels: Vec<usize> = order.iter().map(|&i| batch.labels[i]).collect();

    let x = tape.constant(Tensor::from_parts_unchecked(vec![b, d], feats));
    let z = model.encode(tape, x)?;
    let logits = model.classify(tape, z)?;
    let erm = tape.softmax_cross_entropy(logits, &labels)?;
    let erm_value = tape.scalar(erm)?;

    if contrastive.weight == 0.0 {
        return Ok(LossParts {
            total: erm,
            erm: erm_value,
            contrastive: 0.0,
            active: 0,
            with_pairs: 0,
            out_of_bounds: 0,
        });
    }

    let bounds = match bounds {
        BoundsSource::Batch { epsilon } => compute_bounds(&tape.tensor(z), *epsilon)?,
        BoundsSource::Fixed(fixed) => fixed.clone(),
    };
    let ace = ace_batch(tape, model, z, &labels, &bounds, estimator)?;

    let (mut anchors, mut pos, mut neg) = (Vec::new(), Vec::new(), Vec::new());
    for (c, &i) in order.iter().enumerate() {
        if let Some((p, n)) = pairs[i].complete() {
            if p >= b || n >= b {
                return Err(Error::Index(format!("pair ({p}, {n}) outside a batch of {b}")));
            }
            anchors.push(c);
            pos.push(rank[p]);
            neg.push(rank[n]);
        }
    }
    if anchors.is_empty() {
        return Ok(LossParts {
            total: erm,
            erm: erm_value,
            contrastive: 0.0,
            active: 0,
            with_pairs: 0,
            out_of_bounds: ace.out_of_bounds,
        });
    }

    let ca = tape.gather_rows(ace.values, &anchors)?;
    let cp = tape.gather_rows(ace.values, &pos)?;
    let cn = tape.gather_rows(ace.values, &neg)?;
    let dp = manhattan_rows(tape, ca, cp)?;
    let dn = manhattan_rows(tape, ca, cn)?;
    let gap = tape.sub(dp, dn)?;
    let gap = tape.add_const(gap, contrastive.margin)?;
    let hinge = tape.max_with_zero(gap)?;
    let active = tape.value(hinge).iter().filter(|v| **v > 0.0).count();
    let hinge_sum = tape.sum(hinge)?;
    let hinge_mean = tape.scale(hinge_sum, 1.0 / b as f64)?;
    let contrastive_value = tape.scalar(hinge_mean)?;
    let weighted = tape.scale(hinge_mean, contrastive.weight)?;
    let total = tape.add(erm, weighted)?;
    Ok(LossParts {
        total,
        erm: erm_value,
        contrastive: contrastive_value,
        active,
        with_pairs: anchors.len(),
        out_of_bounds: ace.out_of_bounds,
    })
}

/// Row-wise Manhattan distances of two `r × n` matrices.
pub fn manhattan_rows(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let diff = tape.sub(a, b)?;
    let abs = tape.abs(diff)?;
    tape.sum_rows(abs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::EstimatorMode;
    use rand::Rng;
    use crate::models::{ClassifierSpec, EncoderSpec, ModelBundle};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ace(values: Vec<f64>) -> AceVector {
        AceVector {
            values,
            target_class: 0,
            sample_id: 0,
        }
    }

    #[test]
    fn triplet_sets_from_labels() {
        let s = build_triplet_sets(&[0, 1, 0, 2]);
        assert_eq!(s.positives(0), &[2]);
        assert_eq!(s.negatives(0), &[1, 3]);
        assert!(s.positives(1).is_empty());
        assert_eq!(s.negatives(1), &[0, 2, 3]);

        let same = build_triplet_sets(&[4, 4, 4]);
        assert!((0..3).all(|i| same.negatives(i).is_empty()));
        let distinct = build_triplet_sets(&[0, 1, 2]);
        assert!((0..3).all(|i| distinct.positives(i).is_empty()));
    }

    #[test]
    fn pair_sampling_is_uniform() {
        let s = build_triplet_sets(&[0, 1, 0, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = 10_000;
        let mut ones = 0usize;
        for _ in 0..draws {
            let d = sample_pair(&s, 0, &mut rng);
            assert_eq!(d.positive, Some(2));
            match d.negative {
                Some(1) => ones += 1,
                Some(3) => {}
                other => panic!("unexpected negative {other:?}"),
            }
        }
        // chi-square with one degree of freedom, 99.9% critical value 10.83
        let expected = draws as f64 / 2.0;
        let chi2 = 2.0 * (ones as f64 - expected).powi(2) / expected;
        assert!(chi2 < 10.83, "chi2 = {chi2}");

        let d = sample_pair(&s, 1, &mut rng);
        assert_eq!(d.positive, None);
        assert!(d.negative.is_some());
    }

    #[test]
    fn pair_sampling_is_deterministic_per_seed() {
        let s = build_triplet_sets(&[0, 1, 0, 2, 1, 1, 0]);
        let a = sample_pairs(&s, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_pairs(&s, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn manhattan_definition() {
        assert_eq!(manhattan(&ace(vec![1.0, 2.0]), &ace(vec![3.0, 5.0])).unwrap(), 5.0);
        let a = ace(vec![0.3, -2.0, 4.0]);
        assert_eq!(manhattan(&a, &a).unwrap(), 0.0);
        assert!(manhattan(&a, &ace(vec![1.0])).is_err());
    }

    #[test]
    fn contrastive_term_cases() {
        let ci = ace(vec![1.0, 2.0]);
        let t = contrastive_ace_term(&ci, Some(&ace(vec![1.0, 1.0])), Some(&ace(vec![3.0, 2.0])), 0.05).unwrap();
        assert_eq!(t, 0.0);
        let t = contrastive_ace_term(&ci, Some(&ace(vec![1.0, 1.0])), Some(&ace(vec![1.0, 3.0])), 0.05).unwrap();
        assert!((t - 0.05).abs() < 1e-15);
        let t = contrastive_ace_term(&ci, Some(&ci), Some(&ace(vec![1.0, 2.5])), 0.05).unwrap();
        assert_eq!(t, 0.0);
        assert_eq!(contrastive_ace_term(&ci, None, Some(&ci), 0.05).unwrap(), 0.0);
    }

    #[test]
    fn combined_objective_arithmetic() {
        assert!((combine(0.7, 0.05, 1.0) - 0.75).abs() < 1e-15);
        assert_eq!(combine(0.7, 0.05, 0.0), 0.7);
    }

    fn toy_model(seed: u64) -> ModelBundle {
        ModelBundle::init(EncoderSpec::new(5, vec![6], 4), ClassifierSpec::linear(4, 3), seed).unwrap()
    }

    fn toy_batch(b: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..b * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Batch {
            ids: (0..b).map(|i| 100 + 3 * i).collect(),
            features: Tensor::matrix(b, 5, data).unwrap(),
            labels: (0..b).map(|i| i % 3).collect(),
        }
    }

    fn loss_value(model: &ModelBundle, batch: &Batch, pairs: &[PairDraw], bounds: &BoundsSource, est: &AceEstimatorConfig, cc: &ContrastiveConfig) -> (f64, LossParts) {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let parts = total_loss(&mut tape, &bound, batch, pairs, bounds, est, cc).unwrap();
        (tape.scalar(parts.total).unwrap(), parts)
    }

    #[test]
    fn zero_weight_is_exactly_erm() {
        let m = toy_model(1);
        let batch = toy_batch(9, 2);
        let pairs = sample_pairs(&build_triplet_sets(&batch.labels), &mut ChaCha8Rng::seed_from_u64(3));
        let cc = ContrastiveConfig { weight: 0.0, ..Default::default() };
        let (v, parts) = loss_value(&m, &batch, &pairs, &BoundsSource::Batch { epsilon: 0.01 }, &AceEstimatorConfig::analytic(), &cc);
        assert_eq!(parts.contrastive, 0.0);
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let x = tape.constant(batch.features.clone());
        let z = bound.encode(&mut tape, x).unwrap();
        let y = bound.classify(&mut tape, z).unwrap();
        let ce = tape.softmax_cross_entropy(y, &batch.labels).unwrap();
        assert_eq!(v.to_bits(), tape.scalar(ce).unwrap().to_bits());
    }

    #[test]
    fn batch_permutation_is_bitwise_invariant() {
        let m = toy_model(4);
        let batch = toy_batch(12, 5);
        let pairs = sample_pairs(&build_triplet_sets(&batch.labels), &mut ChaCha8Rng::seed_from_u64(6));
        let est = AceEstimatorConfig::analytic();
        let cc = ContrastiveConfig::default();
        let bounds = BoundsSource::Batch { epsilon: 0.01 };
        let (base, _) = loss_value(&m, &batch, &pairs, &bounds, &est, &cc);

        let perm = [7, 2, 11, 0, 5, 9, 1, 3, 10, 4, 8, 6];
        let mut inv = [0; 12];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let shuffled = Batch {
            ids: perm.iter().map(|&i| batch.ids[i]).collect(),
            features: Tensor::from_rows(&perm.iter().map(|&i| batch.features.row(i).to_vec()).collect::<Vec<_>>()).unwrap(),
            labels: perm.iter().map(|&i| batch.labels[i]).collect(),
        };
        let shuffled_pairs: Vec<PairDraw> = perm
            .iter()
            .map(|&i| PairDraw {
                positive: pairs[i].positive.map(|p| inv[p]),
                negative: pairs[i].negative.map(|n| inv[n]),
            })
            .collect();
        let (again, _) = loss_value(&m, &shuffled, &shuffled_pairs, &bounds, &est, &cc);
        assert_eq!(base.to_bits(), again.to_bits());
    }

    #[test]
    fn identical_class_ace_vectors_give_zero_term() {
        // affine encoder-free setting: equal latents within a class give
        // equal ACE vectors; classes far apart clear the margin
        let mut m = ModelBundle::init(EncoderSpec::new(2, vec![], 2), ClassifierSpec::linear(2, 2), 0).unwrap();
        m.encoder[0].weight = Tensor::identity(2);
        m.classifier[0].weight = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let batch = Batch {
            ids: vec![0, 1, 2, 3],
            features: Tensor::from_rows(&[vec![4.0, 0.0], vec![0.0, 4.0], vec![4.0, 0.0], vec![0.0, 4.0]]).unwrap(),
            labels: vec![0, 1, 0, 1],
        };
        let pairs = sample_pairs(&build_triplet_sets(&batch.labels), &mut ChaCha8Rng::seed_from_u64(0));
        let (_, parts) = loss_value(
            &m,
            &batch,
            &pairs,
            &BoundsSource::Batch { epsilon: 0.0 },
            &AceEstimatorConfig::analytic(),
            &ContrastiveConfig::default(),
        );
        assert_eq!(parts.contrastive, 0.0);
        assert_eq!(parts.with_pairs, 4);
        assert_eq!(parts.active, 0);
    }

    #[test]
    fn degenerate_batches_skip_the_term() {
        let m = toy_model(2);
        let mut batch = toy_batch(5, 1);
        batch.labels = vec![1; 5];
        let pairs = sample_pairs(&build_triplet_sets(&batch.labels), &mut ChaCha8Rng::seed_from_u64(0));
        let (_, parts) = loss_value(&m, &batch, &pairs, &BoundsSource::Batch { epsilon: 0.01 }, &AceEstimatorConfig::analytic(), &ContrastiveConfig::default());
        assert_eq!(parts.with_pairs, 0);
        assert_eq!(parts.contrastive, 0.0);
    }

    fn grad_check(mode: EstimatorMode) -> f64 {
        let mut m = ModelBundle::init(EncoderSpec::new(5, vec![6], 4), ClassifierSpec { latent_dim: 4, classes: 3, hidden: if mode == EstimatorMode::MonteCarlo { vec![5] } else { vec![] } }, 11).unwrap();
        // nonzero biases keep all-dead latent rows off the ReLU kink of the head
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for layer in m.encoder.iter_mut().chain(m.classifier.iter_mut()) {
            for v in layer.bias.data_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
        let batch = toy_batch(10, 12);
        let pairs = sample_pairs(&build_triplet_sets(&batch.labels), &mut ChaCha8Rng::seed_from_u64(13));
        let est = AceEstimatorConfig { mode, samples: 32, grid_points: 8, seed: 14 };
        let z = m.encode_values(&batch.features).unwrap();
        let bounds = BoundsSource::Fixed(compute_bounds(&z, 0.05).unwrap());
        let cc = ContrastiveConfig { margin: 0.05, weight: 1.0, seed: 0 };

        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let parts = total_loss(&mut tape, &bound, &batch, &pairs, &bounds, &est, &cc).unwrap();
        assert!(parts.with_pairs > 0);
        let grads = bound.gradients(&tape.backward(parts.total).unwrap());
        let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();

        let h = 1e-6;
        let mut fd = Vec::new();
        let n_params = m.parameters().len();
        for p in 0..n_params {
            for k in 0..m.parameters()[p].len() {
                let mut plus = m.clone();
                plus.parameters_mut()[p].data_mut()[k] += h;
                let mut minus = m.clone();
                minus.parameters_mut()[p].data_mut()[k] -= h;
                let fp = loss_value(&plus, &batch, &pairs, &bounds, &est, &cc).0;
                let fm = loss_value(&minus, &batch, &pairs, &bounds, &est, &cc).0;
                fd.push((fp - fm) / (2.0 * h));
            }
        }
        let diff: f64 = analytic.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(fd.iter().map(|a| a * a).sum::<f64>().sqrt());
        diff / norm
    }

    #[test]
    fn total_loss_gradient_analytic_mode() {
        let err = grad_check(EstimatorMode::AnalyticAffine);
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn total_loss_gradient_monte_carlo_mode() {
        let err = grad_check(EstimatorMode::MonteCarlo);
        assert!(err <= 1e-3, "{err}");
    }

    proptest! {
        #[test]
        fn term_is_nonnegative_and_zero_past_margin(
            ci in prop::collection::vec(-5.0f64..5.0, 4),
            cp in prop::collection::vec(-5.0f64..5.0, 4),
            cn in prop::collection::vec(-5.0f64..5.0, 4),
            margin in 1e-4f64..1.0,
        ) {
            let (a, p, n) = (ace(ci), ace(cp), ace(cn));
            let t = contrastive_ace_term(&a, Some(&p), Some(&n), margin).unwrap();
            prop_assert!(t >= 0.0);
            let gap = manhattan(&a, &n).unwrap() - manhattan(&a, &p).unwrap();
            if gap >= margin {
                prop_assert_eq!(t, 0.0);
            }
        }

        #[test]
        fn manhattan_is_symmetric(
            a in prop::collection::vec(-1e3f64..1e3, 6),
            b in prop::collection::vec(-1e3f64..1e3, 6),
        ) {
            prop_assert_eq!(manhattan_slices(&a, &b).unwrap(), manhattan_slices(&b, &a).unwrap());
        }

        #[test]
        fn vanishing_margin_with_tied_distances(margin in 1e-12f64..1e-3) {
            let a = ace(vec![0.0, 0.0]);
            let p = ace(vec![1.0, 0.0]);
            let n = ace(vec![0.0, -1.0]);
            let t = contrastive_ace_term(&a, Some(&p), Some(&n), margin).unwrap();
            prop_assert!((t - margin).abs() < 1e-15);
        }

        #[test]
        fn sets_partition_the_batch(labels in prop::collection::vec(0usize..4, 1..20)) {
            let s = build_triplet_sets(&labels);
            for i in 0..labels.len() {
                prop_assert!(!s.positives(i).contains(&i) && !s.negatives(i).contains(&i));
                prop_assert_eq!(s.positives(i).len() + s.negatives(i).len() + 1, labels.len());
                prop_assert!(s.positives(i).iter().all(|&j| labels[j] == labels[i]));
                prop_assert!(s.negatives(i).iter().all(|&j| labels[j] != labels[i]));
            }
        }
    }
}
