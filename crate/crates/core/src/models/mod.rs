//! Encoder `f_θ` (input → latent features) and classifier `g_φ`
//! (latent features → class logits), both plain ReLU MLPs.
//!
//! A classifier without hidden layers is affine, `logits = W z + b`, which
//! is what the closed-form attribution estimator relies on.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{matmul_values, Gradients, Tape, Tensor, Var};

pub use checkpoint::CHECKPOINT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub activation: Activation,
}

impl EncoderSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, latent_dim: usize) -> Self {
        Self {
            input_dim,
            hidden,
            latent_dim,
            activation: Activation::Relu,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!("invalid encoder spec {self:?}")));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w.push(self.latent_dim);
        w
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub latent_dim: usize,
    pub classes: usize,
    /// Empty means an affine head.
    pub hidden: Vec<usize>,
}

impl ClassifierSpec {
    pub fn linear(latent_dim: usize, classes: usize) -> Self {
        Self {
            latent_dim,
            classes,
            hidden: Vec::new(),
        }
    }

    pub fn is_affine(&self) -> bool {
        self.hidden.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.classes == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!("invalid classifier spec {self:?}")));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.latent_dim];
        w.extend(&self.hidden);
        w.push(self.classes);
        w
    }
}

/// Fully connected layer; `weight` is `out × in`, `bias` has `out` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self {
            weight: Tensor::from_parts_unchecked(vec![fan_out, fan_in], w),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    fn forward_values(&self, x: &Tensor, relu: bool) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.inputs() {
            return Err(Error::Dimension(format!(
                "layer expects {} inputs, got shape {:?}",
                self.inputs(),
                x.shape()
            )));
        }
        let rows = x.rows();
        let out = self.outputs();
        let mut y = matmul_values(x.data(), rows, self.inputs(), self.weight.data(), out, true);
        let b = self.bias.data();
        for row in y.chunks_mut(out) {
            for (v, bi) in row.iter_mut().zip(b) {
                *v += bi;
                if relu {
                    *v = v.max(0.0);
                }
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dense layer".into()));
        }
        Ok(Tensor::from_parts_unchecked(vec![rows, out], y))
    }
}

/// Parameters of both networks plus their architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub encoder_spec: EncoderSpec,
    pub classifier_spec: ClassifierSpec,
    pub encoder: Vec<Dense>,
    pub classifier: Vec<Dense>,
}

fn build_layers(widths: &[usize], rng: &mut ChaCha8Rng) -> Vec<Dense> {
    widths
        .windows(2)
        .map(|w| Dense::init(w[0], w[1], rng))
        .collect()
}

impl ModelBundle {
    /// Fan-in scaled uniform weights (bound `√(6/fan_in)`), zero biases.
    pub fn init(encoder_spec: EncoderSpec, classifier_spec: ClassifierSpec, seed: u64) -> Result<Self> {
        encoder_spec.validate()?;
        classifier_spec.validate()?;
        if encoder_spec.latent_dim != classifier_spec.latent_dim {
            return Err(Error::Config(format!(
                "encoder latent width {} differs from classifier input width {}",
                encoder_spec.latent_dim, classifier_spec.latent_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = build_layers(&encoder_spec.widths(), &mut rng);
        let classifier = build_layers(&classifier_spec.widths(), &mut rng);
        Ok(Self {
            encoder_spec,
            classifier_spec,
            encoder,
            classifier,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder_spec.latent_dim
    }

    pub fn classes(&self) -> usize {
        self.classifier_spec.classes
    }

    pub fn input_dim(&self) -> usize {
        self.encoder_spec.input_dim
    }

    /// `(W, b)` of the classifier when it is affine.
    pub fn affine_head(&self) -> Option<(&Tensor, &Tensor)> {
        match self.classifier.as_slice() {
            [only] => Some((&only.weight, &only.bias)),
            _ => None,
        }
    }

    /// Parameters in declaration order: encoder layers, then classifier
    /// layers, each as weight followed by bias.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.encoder
            .iter()
            .chain(&self.classifier)
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.encoder
            .iter_mut()
            .chain(self.classifier.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn encoder_parameter_count(&self) -> usize {
        self.encoder.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn classifier_parameter_count(&self) -> usize {
        self.classifier.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn encode_values(&self, x: &Tensor) -> Result<Tensor> {
        forward_stack(&self.encoder, x, true)
    }

    pub fn classify_values(&self, z: &Tensor) -> Result<Tensor> {
        forward_stack(&self.classifier, z, false)
    }

    pub fn logits_values(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.encode_values(x)?;
        self.classify_values(&z)
    }

    /// Registers every parameter as a differentiable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let mut bind_layers = |layers: &[Dense]| -> Vec<BoundLayer> {
            layers
                .iter()
                .map(|l| BoundLayer {
                    weight: tape.leaf(l.weight.clone()),
                    bias: tape.leaf(
                        Tensor::from_parts_unchecked(vec![1, l.outputs()], l.bias.data().to_vec()),
                    ),
                    outputs: l.outputs(),
                })
                .collect()
        };
        let encoder = bind_layers(&self.encoder);
        let classifier = bind_layers(&self.classifier);
        BoundModel {
            encoder,
            classifier,
        }
    }
}

/// Encoder runs ReLU after every layer; the classifier leaves its output
/// layer linear.
fn forward_stack(layers: &[Dense], x: &Tensor, relu_last: bool) -> Result<Tensor> {
    let mut h = x.clone();
    for (i, l) in layers.iter().enumerate() {
        let last = i + 1 == layers.len();
        h = l.forward_values(&h, !last || relu_last)?;
    }
    Ok(h)
}

#[derive(Debug, Clone)]
struct BoundLayer {
    weight: Var,
    bias: Var,
    outputs: usize,
}

impl BoundLayer {
    fn forward(&self, tape: &mut Tape, x: Var, relu: bool) -> Result<Var> {
        let rows = tape.shape(x).first().copied().unwrap_or(1);
        let h = tape.matmul_nt(x, self.weight)?;
        let ones = tape.constant(Tensor::filled(&[rows, 1], 1.0));
        let bias_rows = tape.matmul(ones, self.bias)?;
        debug_assert_eq!(tape.shape(bias_rows), &[rows, self.outputs]);
        let h = tape.add(h, bias_rows)?;
        if relu {
            tape.relu(h)
        } else {
            Ok(h)
        }
    }
}

/// A [`ModelBundle`]'s parameters registered on a tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    encoder: Vec<BoundLayer>,
    classifier: Vec<BoundLayer>,
}

impl BoundModel {
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for l in &self.encoder {
            h = l.forward(tape, h, true)?;
        }
        Ok(h)
    }

    pub fn classify(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let mut h = z;
        let n = self.classifier.len();
        for (i, l) in self.classifier.iter().enumerate() {
            h = l.forward(tape, h, i + 1 < n)?;
        }
        Ok(h)
    }

    /// Classifier weight `C × n` and bias `1 × C` of an affine head.
    pub fn affine_head(&self) -> Option<(Var, Var)> {
        match self.classifier.as_slice() {
            [only] => Some((only.weight, only.bias)),
            _ => None,
        }
    }

    pub fn parameter_vars(&self) -> Vec<Var> {
        self.encoder
            .iter()
            .chain(&self.classifier)
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }

    /// Gradients in [`ModelBundle::parameters`] order and shapes.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.encoder
            .iter()
            .chain(&self.classifier)
            .flat_map(|l| {
                let w = grads.wrt(l.weight);
                let b = grads.wrt(l.bias);
                let b = Tensor::from_parts_unchecked(vec![l.outputs], b.into_data());
                [w, b]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelBundle {
        ModelBundle::init(
            EncoderSpec::new(5, vec![7], 3),
            ClassifierSpec::linear(3, 4),
            42,
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = small();
        let b = small();
        assert_eq!(a, b);
        for p in a.encoder.iter().chain(&a.classifier) {
            assert!(p.bias.data().iter().all(|v| *v == 0.0));
            let bound = (6.0 / p.inputs() as f64).sqrt();
            assert!(p.weight.data().iter().all(|v| v.abs() <= bound));
        }
        let c = ModelBundle::init(
            EncoderSpec::new(5, vec![7], 3),
            ClassifierSpec::linear(3, 4),
            43,
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn affine_head_parameter_count() {
        let m = small();
        assert_eq!(m.classifier_parameter_count(), 3 * 4 + 4);
        assert!(m.affine_head().is_some());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(ModelBundle::init(EncoderSpec::new(5, vec![0], 3), ClassifierSpec::linear(3, 2), 0).is_err());
        assert!(ModelBundle::init(EncoderSpec::new(5, vec![], 0), ClassifierSpec::linear(0, 2), 0).is_err());
        assert!(ModelBundle::init(EncoderSpec::new(5, vec![], 3), ClassifierSpec::linear(4, 2), 0).is_err());
    }

    #[test]
    fn encode_shape_and_zero_input() {
        let m = small();
        let x = Tensor::zeros(&[6, 5]);
        let z = m.encode_values(&x).unwrap();
        assert_eq!(z.shape(), &[6, 3]);
        assert!(z.data().iter().all(|v| *v == 0.0));
        assert!(m.encode_values(&Tensor::zeros(&[6, 4])).is_err());
    }

    #[test]
    fn affine_head_arithmetic_and_bias_shift() {
        let mut m = ModelBundle::init(EncoderSpec::new(2, vec![], 2), ClassifierSpec::linear(2, 1), 0).unwrap();
        m.classifier[0].weight = Tensor::matrix(1, 2, vec![2.0, -1.0]).unwrap();
        m.classifier[0].bias = Tensor::vector(vec![0.5]).unwrap();
        let z = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(m.classify_values(&z).unwrap().data(), &[1.5]);
        m.classifier[0].bias.data_mut()[0] += 3.0;
        assert_eq!(m.classify_values(&z).unwrap().data(), &[4.5]);
    }

    #[test]
    fn classify_batch_shape() {
        let m = ModelBundle::init(EncoderSpec::new(10, vec![], 64), ClassifierSpec::linear(64, 10), 1).unwrap();
        let z = Tensor::filled(&[64, 64], 0.1);
        assert_eq!(m.classify_values(&z).unwrap().shape(), &[64, 10]);
    }

    #[test]
    fn tape_and_value_paths_agree_bitwise() {
        let m = ModelBundle::init(
            EncoderSpec::new(6, vec![5, 4], 3),
            ClassifierSpec {
                latent_dim: 3,
                classes: 2,
                hidden: vec![4],
            },
            3,
        )
        .unwrap();
        let x = Tensor::new(vec![4, 6], (0..24).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let z = bound.encode(&mut tape, xv).unwrap();
        let y = bound.classify(&mut tape, z).unwrap();
        assert_eq!(tape.value(z), m.encode_values(&x).unwrap().data());
        assert_eq!(tape.value(y), m.logits_values(&x).unwrap().data());
    }

    #[test]
    fn encoder_jacobian_matches_finite_differences() {
        let m = ModelBundle::init(EncoderSpec::new(4, vec![6], 3), ClassifierSpec::linear(3, 2), 5).unwrap();
        let x = Tensor::matrix(1, 4, vec![0.3, -0.7, 1.1, 0.2]).unwrap();
        let h = 1e-6;
        for out in 0..3 {
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape);
            let xv = tape.leaf(x.clone());
            let z = bound.encode(&mut tape, xv).unwrap();
            let picked = tape.gather_cols(z, &[out]).unwrap();
            let s = tape.sum(picked).unwrap();
            let g = tape.backward(s).unwrap().wrt(xv);
            for i in 0..4 {
                let mut p = x.clone();
                p.data_mut()[i] += h;
                let mut q = x.clone();
                q.data_mut()[i] -= h;
                let fd = (m.encode_values(&p).unwrap().at(0, out) - m.encode_values(&q).unwrap().at(0, out)) / (2.0 * h);
                assert!((fd - g.data()[i]).abs() < 1e-6, "out {out} in {i}: {fd} vs {}", g.data()[i]);
            }
        }
    }

    #[test]
    fn gradients_follow_parameter_order_and_shapes() {
        let m = small();
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let x = tape.constant(Tensor::filled(&[2, 5], 0.5));
        let z = bound.encode(&mut tape, x).unwrap();
        let y = bound.classify(&mut tape, z).unwrap();
        let l = tape.softmax_cross_entropy(y, &[0, 3]).unwrap();
        let g = bound.gradients(&tape.backward(l).unwrap());
        let shapes: Vec<_> = m.parameters().iter().map(|p| p.shape().to_vec()).collect();
        let gshapes: Vec<_> = g.iter().map(|p| p.shape().to_vec()).collect();
        assert_eq!(shapes, gshapes);
    }
}
