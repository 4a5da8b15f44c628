//! Labeled multi-domain datasets: IDX digit ingestion, rotation domains,
//! a synthetic Gaussian generator, normalization and leave-one-out splits.

mod idx;
mod rotate;
mod split;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub use idx::{load_idx, write_idx, IMAGE_SIDE, IMAGE_PIXELS};
pub use rotate::{make_rotated_domains, rotate, RotationDomainSpec};
pub use split::{hold_out, leave_one_out_split, normalize_mean_std, NormalizeTransform, Splits, STD_FLOOR};
pub use synthetic::{make_synthetic_domains, SyntheticSpec, SIGNAL_DIMS, SYNTHETIC_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    /// Dataset-wide identifier, stable across splits.
    pub id: usize,
    pub features: Vec<f64>,
    pub label: usize,
    pub domain: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    samples: Vec<LabeledSample>,
    classes: usize,
    feature_dim: usize,
    domains: Vec<usize>,
}

impl DomainDataset {
    pub fn new(samples: Vec<LabeledSample>, classes: usize, feature_dim: usize, domains: Vec<usize>) -> Result<Self> {
        for s in &samples {
            if s.features.len() != feature_dim {
                return Err(Error::Data(format!(
                    "sample {} has {} features, expected {feature_dim}",
                    s.id,
                    s.features.len()
                )));
            }
            if s.label >= classes {
                return Err(Error::Data(format!("sample {} has label {} with {classes} classes", s.id, s.label)));
            }
            if !domains.contains(&s.domain) {
                return Err(Error::Data(format!("sample {} has undeclared domain {}", s.id, s.domain)));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("sample {} has non-finite features", s.id)));
            }
        }
        for &d in &domains {
            if !samples.iter().any(|s| s.domain == d) {
                return Err(Error::Data(format!("declared domain {d} has no samples")));
            }
        }
        Ok(Self {
            samples,
            classes,
            feature_dim,
            domains,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn domains(&self) -> &[usize] {
        &self.domains
    }

    /// Samples at the given positions; the domain list shrinks to the
    /// domains still present, in their original order.
    pub fn subset(&self, positions: &[usize]) -> Self {
        let samples: Vec<LabeledSample> = positions.iter().map(|&i| self.samples[i].clone()).collect();
        let domains = self
            .domains
            .iter()
            .copied()
            .filter(|d| samples.iter().any(|s| s.domain == *d))
            .collect();
        Self {
            samples,
            classes: self.classes,
            feature_dim: self.feature_dim,
            domains,
        }
    }

    pub(crate) fn map_features(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|s| LabeledSample {
                features: f(&s.features),
                ..s.clone()
            })
            .collect();
        Self { samples, ..self.clone() }
    }

    /// `len × feature_dim` feature matrix of the given positions.
    pub fn features_of(&self, positions: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(positions.len() * self.feature_dim);
        for &i in positions {
            data.extend_from_slice(&self.samples[i].features);
        }
        Tensor::from_parts_unchecked(vec![positions.len(), self.feature_dim], data)
    }

    pub fn features(&self) -> Tensor {
        self.features_of(&(0..self.len()).collect::<Vec<_>>())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.id).collect()
    }

    /// `domain → class → count`.
    pub fn class_counts(&self) -> BTreeMap<usize, BTreeMap<usize, usize>> {
        let mut out: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
        for s in &self.samples {
            *out.entry(s.domain).or_default().entry(s.label).or_default() += 1;
        }
        out
    }

    /// Plain-text `key = value` summary of sizes per domain and class.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let _ = writeln!(out, "samples = {}", self.len());
        let _ = writeln!(out, "classes = {}", self.classes);
        let _ = writeln!(out, "feature_dim = {}", self.feature_dim);
        let _ = writeln!(out, "domains = {}", join(&self.domains));
        let counts = self.class_counts();
        for d in &self.domains {
            let per = &counts[d];
            let _ = writeln!(out, "domain.{d}.samples = {}", per.values().sum::<usize>());
            for c in 0..self.classes {
                let _ = writeln!(out, "domain.{d}.class.{c} = {}", per.get(&c).copied().unwrap_or(0));
            }
        }
        out
    }

    /// CSV with header `id,domain,label,f0,...`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("id,domain,label");
        for j in 0..self.feature_dim {
            let _ = write!(out, ",f{j}");
        }
        out.push('\n');
        for s in &self.samples {
            let _ = write!(out, "{},{},{}", s.id, s.domain, s.label);
            for v in &s.features {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Malformed(format!("{}: empty dataset file", path.display())))?;
        let feature_dim = header
            .split(',')
            .count()
            .checked_sub(3)
            .ok_or_else(|| Error::Malformed("dataset header needs id,domain,label columns".into()))?;
        let mut samples = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Malformed(format!("{} line {}: {what}", path.display(), n + 2));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != feature_dim + 3 {
                return Err(bad("wrong column count"));
            }
            let int = |s: &str| s.trim().parse::<usize>().map_err(|_| bad("bad integer"));
            let features = fields[3..]
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|_| bad("bad number")))
                .collect::<Result<Vec<_>>>()?;
            samples.push(LabeledSample {
                id: int(fields[0])?,
                domain: int(fields[1])?,
                label: int(fields[2])?,
                features,
            });
        }
        let classes = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
        let mut domains: Vec<usize> = samples.iter().map(|s| s.domain).collect();
        domains.sort_unstable();
        domains.dedup();
        Self::new(samples, classes, feature_dim, domains)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_manifest() {
        let ds = make_synthetic_domains(3, 20, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        ds.write_csv(&p).unwrap();
        let back = DomainDataset::read_csv(&p).unwrap();
        assert_eq!(ds, back);
        let m = ds.manifest();
        assert!(m.contains("samples = 60"));
        assert!(m.contains("domain.2.samples = 20"));
        assert!(m.contains("domain.1.class.0 = 10"));
    }

    #[test]
    fn validation_rejects_bad_samples() {
        let s = LabeledSample {
            id: 0,
            features: vec![0.0; 2],
            label: 3,
            domain: 0,
        };
        assert!(DomainDataset::new(vec![s.clone()], 2, 2, vec![0]).is_err());
        let ok = LabeledSample { label: 1, ..s };
        assert!(DomainDataset::new(vec![ok.clone()], 2, 2, vec![0, 1]).is_err());
        assert!(DomainDataset::new(vec![ok], 2, 2, vec![0]).is_ok());
    }
}
