//! Leave-one-domain-out partitions and mean/std normalization.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DomainDataset;
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    /// Every non-target domain.
    pub train: DomainDataset,
    /// Target-domain part used for model selection.
    pub val: DomainDataset,
    /// Target-domain part used for reporting.
    pub test: DomainDataset,
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("fraction {fraction} must lie in (0, 1)")))
    }
}

/// Validation size is `round(fraction · n_target)`, drawn by a seeded shuffle.
pub fn leave_one_out_split(ds: &DomainDataset, target: usize, val_fraction: f64, seed: u64) -> Result<Splits> {
    check_fraction(val_fraction)?;
    if !ds.domains().contains(&target) {
        return Err(Error::UnknownDomain(target));
    }
    if ds.domains().len() < 2 {
        return Err(Error::Data("leave-one-out needs at least 2 domains".into()));
    }
    let (mut target_pos, train_pos): (Vec<usize>, Vec<usize>) =
        (0..ds.len()).partition(|&i| ds.samples()[i].domain == target);
    target_pos.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (val_fraction * target_pos.len() as f64).round() as usize;
    if n_val == 0 || n_val == target_pos.len() {
        return Err(Error::Data(format!(
            "target domain {target} has {} samples, too few for a validation fraction of {val_fraction}",
            target_pos.len()
        )));
    }
    let (val, test) = target_pos.split_at(n_val);
    let mut val = val.to_vec();
    let mut test = test.to_vec();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Splits {
        train: ds.subset(&train_pos),
        val: ds.subset(&val),
        test: ds.subset(&test),
    })
}

/// Seeded `(kept, held_out)` split with `round(fraction · n)` held out.
pub fn hold_out(ds: &DomainDataset, fraction: f64, seed: u64) -> Result<(DomainDataset, DomainDataset)> {
    check_fraction(fraction)?;
    let mut pos: Vec<usize> = (0..ds.len()).collect();
    pos.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = (fraction * ds.len() as f64).round() as usize;
    if n == 0 || n == ds.len() {
        return Err(Error::Data(format!("{} samples cannot be split at fraction {fraction}", ds.len())));
    }
    let (held, kept) = pos.split_at(n);
    let mut held = held.to_vec();
    let mut kept = kept.to_vec();
    held.sort_unstable();
    kept.sort_unstable();
    Ok((ds.subset(&kept), ds.subset(&held)))
}

/// Per-feature affine map `(x − mean) / max(std, STD_FLOOR)`, with the
/// population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizeTransform {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizeTransform {
    pub fn fit(ds: &DomainDataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::Data("cannot fit normalization on an empty split".into()));
        }
        let n = ds.len() as f64;
        let d = ds.feature_dim();
        let mut mean = vec![0.0; d];
        for s in ds.samples() {
            for (m, v) in mean.iter_mut().zip(&s.features) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for s in ds.samples() {
            for ((acc, v), m) in var.iter_mut().zip(&s.features).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Malformed(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: Self = serde_json::from_str(&text).map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))?;
        if t.mean.len() != t.std.len() || t.std.iter().any(|s| s.is_nan() || *s < STD_FLOOR) {
            return Err(Error::Malformed(format!("{}: inconsistent normalizer", path.display())));
        }
        Ok(t)
    }

    pub fn apply_features(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, ds: &DomainDataset) -> Result<DomainDataset> {
        if ds.feature_dim() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "transform has dim {}, dataset {}",
                self.mean.len(),
                ds.feature_dim()
            )));
        }
        Ok(ds.map_features(|x| self.apply_features(x)))
    }
}

/// Fits on `splits.train` only and applies the same map to all three parts.
pub fn normalize_mean_std(splits: &Splits) -> Result<(NormalizeTransform, Splits)> {
    let t = NormalizeTransform::fit(&splits.train)?;
    let out = Splits {
        train: t.apply(&splits.train)?,
        val: t.apply(&splits.val)?,
        test: t.apply(&splits.test)?,
    };
    Ok((t, out))
}
