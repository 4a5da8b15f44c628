//! JSON checkpoints. Floats are written in shortest round-trip form, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassifierSpec, Dense, EncoderSpec, ModelBundle};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const CHECKPOINT_VERSION: &str = "contrastive-ace-checkpoint/1";

#[derive(Serialize, Deserialize)]
struct ParameterRecord {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: String,
    encoder_spec: EncoderSpec,
    classifier_spec: ClassifierSpec,
    parameters: Vec<ParameterRecord>,
}

fn records(prefix: &str, layers: &[Dense]) -> Vec<ParameterRecord> {
    layers
        .iter()
        .enumerate()
        .flat_map(|(i, l)| {
            [
                ParameterRecord {
                    name: format!("{prefix}.{i}.weight"),
                    shape: l.weight.shape().to_vec(),
                    values: l.weight.data().to_vec(),
                },
                ParameterRecord {
                    name: format!("{prefix}.{i}.bias"),
                    shape: l.bias.shape().to_vec(),
                    values: l.bias.data().to_vec(),
                },
            ]
        })
        .collect()
}

impl ModelBundle {
    pub fn to_checkpoint_string(&self) -> Result<String> {
        let mut parameters = records("encoder", &self.encoder);
        parameters.extend(records("classifier", &self.classifier));
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION.to_string(),
            encoder_spec: self.encoder_spec.clone(),
            classifier_spec: self.classifier_spec.clone(),
            parameters,
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Malformed(e.to_string()))
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
        match raw.get("version").and_then(|v| v.as_str()) {
            Some(CHECKPOINT_VERSION) => {}
            Some(other) => {
                return Err(Error::Version {
                    found: other.to_string(),
                    expected: CHECKPOINT_VERSION.to_string(),
                })
            }
            None => return Err(Error::Malformed("missing version tag".into())),
        }
        let file: CheckpointFile =
            serde_json::from_value(raw).map_err(|e| Error::Malformed(e.to_string()))?;

        // Rebuild from the specs, then overwrite with stored values so every
        // shape is checked against the declared architecture.
        let mut model = ModelBundle::init(file.encoder_spec, file.classifier_spec, 0)?;
        let expected: Vec<Vec<usize>> = model.parameters().iter().map(|p| p.shape().to_vec()).collect();
        if expected.len() != file.parameters.len() {
            return Err(Error::Dimension(format!(
                "checkpoint lists {} parameter arrays, architecture needs {}",
                file.parameters.len(),
                expected.len()
            )));
        }
        for ((slot, record), shape) in model
            .parameters_mut()
            .into_iter()
            .zip(file.parameters)
            .zip(expected)
        {
            if record.shape != shape {
                return Err(Error::Dimension(format!(
                    "{}: stored shape {:?}, architecture needs {:?}",
                    record.name, record.shape, shape
                )));
            }
            *slot = Tensor::new(record.shape, record.values)
                .map_err(|e| Error::Dimension(format!("{}: {e}", record.name)))?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bundle(seed: u64) -> ModelBundle {
        ModelBundle::init(
            EncoderSpec::new(6, vec![5], 4),
            ClassifierSpec {
                latent_dim: 4,
                classes: 3,
                hidden: vec![2],
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn save_load_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = bundle(9);
        m.save(&path).unwrap();
        let back = ModelBundle::load(&path).unwrap();
        for (a, b) in m.parameters().iter().zip(back.parameters()) {
            let ab: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert_eq!(m, back);
    }

    #[test]
    fn truncated_file_is_malformed() {
        let text = bundle(1).to_checkpoint_string().unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(ModelBundle::from_checkpoint_str(cut), Err(Error::Malformed(_))));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let text = bundle(1)
            .to_checkpoint_string()
            .unwrap()
            .replace(CHECKPOINT_VERSION, "contrastive-ace-checkpoint/0");
        assert!(matches!(ModelBundle::from_checkpoint_str(&text), Err(Error::Version { .. })));
    }

    #[test]
    fn inconsistent_shapes_are_rejected() {
        let m = bundle(1);
        let mut v: serde_json::Value = serde_json::from_str(&m.to_checkpoint_string().unwrap()).unwrap();
        v["parameters"][0]["shape"] = serde_json::json!([6, 5]);
        let text = serde_json::to_string(&v).unwrap();
        assert!(matches!(ModelBundle::from_checkpoint_str(&text), Err(Error::Dimension(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_random_bundles(seed in any::<u64>(), scale in -1e3f64..1e3) {
            let mut m = bundle(seed);
            for p in m.parameters_mut() {
                for v in p.data_mut() {
                    *v *= scale;
                }
            }
            let back = ModelBundle::from_checkpoint_str(&m.to_checkpoint_string().unwrap()).unwrap();
            prop_assert_eq!(m, back);
        }
    }
}
