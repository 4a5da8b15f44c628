//! Rotation domains built from a single-domain digit dataset.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DomainDataset, LabeledSample, IMAGE_PIXELS, IMAGE_SIDE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RotationDomainSpec {
    pub angles: Vec<f64>,
    pub per_domain: usize,
    pub seed: u64,
}

impl RotationDomainSpec {
    /// 0°, 15°, …, 75°.
    pub fn standard(per_domain: usize, seed: u64) -> Self {
        Self {
            angles: (0..6).map(|i| 15.0 * i as f64).collect(),
            per_domain,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.angles.is_empty() || self.per_domain == 0 {
            return Err(Error::Config("rotation spec needs angles and a positive per-domain count".into()));
        }
        for (i, a) in self.angles.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::Config(format!("angle {a} is not finite")));
            }
            if self.angles[..i].contains(a) {
                return Err(Error::Config(format!("angle {a} listed twice")));
            }
        }
        Ok(())
    }
}

fn quarter_turn(image: &[f64]) -> Vec<f64> {
    let s = IMAGE_SIDE;
    let mut out = vec![0.0; IMAGE_PIXELS];
    for y in 0..s {
        for x in 0..s {
            out[y * s + x] = image[(s - 1 - x) * s + y];
        }
    }
    out
}

/// Rotates a 28×28 row-major image about its center. Output pixel `(x, y)`
/// samples the source at `c + R(θ)ᵀ((x, y) − c)` with bilinear weights and
/// zero outside the frame. Multiples of 90° are applied as exact pixel
/// permutations.
pub fn rotate(image: &[f64], degrees: f64) -> Result<Vec<f64>> {
    if image.len() != IMAGE_PIXELS {
        return Err(Error::Dimension(format!("rotate expects {IMAGE_PIXELS} pixels, got {}", image.len())));
    }
    if !degrees.is_finite() {
        return Err(Error::NonFinite("rotation angle".into()));
    }
    let turns = degrees / 90.0;
    if turns.fract() == 0.0 {
        let k = (turns as i64).rem_euclid(4);
        let mut out = image.to_vec();
        for _ in 0..k {
            out = quarter_turn(&out);
        }
        return Ok(out);
    }

    let s = IMAGE_SIDE as isize;
    let c = (IMAGE_SIDE as f64 - 1.0) / 2.0;
    let (sin, cos) = degrees.to_radians().sin_cos();
    let pixel = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= s || y >= s {
            0.0
        } else {
            image[(y * s + x) as usize]
        }
    };
    let mut out = vec![0.0; IMAGE_PIXELS];
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let dx = x as f64 - c;
            let dy = y as f64 - c;
            let sx = c + dx * cos + dy * sin;
            let sy = c - dx * sin + dy * cos;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = (1.0 - fx) * (1.0 - fy) * pixel(x0, y0)
                + fx * (1.0 - fy) * pixel(x0 + 1, y0)
                + (1.0 - fx) * fy * pixel(x0, y0 + 1)
                + fx * fy * pixel(x0 + 1, y0 + 1);
            out[y * IMAGE_SIDE + x] = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Largest-remainder split of `total` in proportion to `weights`.
fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    let mut out: Vec<usize> = weights.iter().map(|w| total * w / sum).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(total * weights[i] % sum), i));
    let short = total - out.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        out[i] += 1;
    }
    out
}

/// One disjoint, label-stratified subsample per angle, rotated by that angle.
/// Domain ids follow the angle order; sample ids are carried over from `base`.
pub fn make_rotated_domains(base: &DomainDataset, spec: &RotationDomainSpec) -> Result<DomainDataset> {
    spec.validate()?;
    if base.domains().len() != 1 {
        return Err(Error::Data(format!(
            "rotation needs a single-domain base, got {} domains",
            base.domains().len()
        )));
    }
    if base.feature_dim() != IMAGE_PIXELS {
        return Err(Error::Dimension(format!("base features have dim {}", base.feature_dim())));
    }
    let n_domains = spec.angles.len();
    let needed = spec.per_domain * n_domains;
    if needed > base.len() {
        return Err(Error::Data(format!(
            "{n_domains} domains × {} samples needs {needed}, base has {}",
            spec.per_domain,
            base.len()
        )));
    }

    let classes = base.classes();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, s) in base.samples().iter().enumerate() {
        pools[s.label].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }
    let weights: Vec<usize> = pools.iter().map(Vec::len).collect();
    let quota = apportion(spec.per_domain, &weights);
    for (c, (&q, pool)) in quota.iter().zip(&pools).enumerate() {
        if q * n_domains > pool.len() {
            return Err(Error::Data(format!(
                "class {c} has {} samples, stratified quota needs {}",
                pool.len(),
                q * n_domains
            )));
        }
    }

    let mut samples = Vec::with_capacity(needed);
    for (d, &angle) in spec.angles.iter().enumerate() {
        let mut picked: Vec<usize> = Vec::with_capacity(spec.per_domain);
        for (pool, &q) in pools.iter().zip(&quota) {
            picked.extend_from_slice(&pool[d * q..(d + 1) * q]);
        }
        picked.shuffle(&mut rng);
        for i in picked {
            let src = &base.samples()[i];
            samples.push(LabeledSample {
                id: src.id,
                features: rotate(&src.features, angle)?,
                label: src.label,
                domain: d,
            });
        }
    }
    DomainDataset::new(samples, classes, IMAGE_PIXELS, (0..n_domains).collect())
}
