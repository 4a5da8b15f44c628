//! Adam without weight decay.

use crate::error::{Error, Result};
use crate::numcore::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments shaped like `params`.
    pub fn new(params: &[&Tensor]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }
}

/// One bias-corrected update. Non-finite gradients abort before any
/// parameter or moment is touched; the caller fills in the epoch and step.
pub fn adam_step(state: &mut AdamState, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "{} parameters, {} gradients, optimizer tracks {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].len() != p.len() {
            return Err(Error::Dimension(format!(
                "parameter {i}: shape {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if let Some(k) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                epoch: 0,
                step: state.step as usize + 1,
                detail: format!("gradient of parameter {i} has {} at entry {k}", g.data()[k]),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = state.beta1 * *m + (1.0 - state.beta1) * g;
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap();
        let before = p.clone();
        let mut s = AdamState::new(&[&p]);
        for _ in 0..5 {
            adam_step(&mut s, &mut [&mut p], &[Tensor::zeros(&[3])], 0.1).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        for g in [0.3, -2.0, 1e-3] {
            let mut p = Tensor::vector(vec![0.5]).unwrap();
            let mut s = AdamState::new(&[&p]);
            let lr = 1e-3;
            adam_step(&mut s, &mut [&mut p], &[Tensor::vector(vec![g]).unwrap()], lr).unwrap();
            // m̂ = g and v̂ = g² after correction
            let m = 0.1 * g;
            let v = 0.001 * g * g;
            let expected = 0.5 - lr * (m / 0.1) / ((v / (1.0 - 0.999)).sqrt() + 1e-8);
            assert!((p.data()[0] - expected).abs() < 1e-15);
            assert!((p.data()[0] - (0.5 - lr * g / (g.abs() + 1e-8))).abs() < 1e-12);
        }
    }

    #[test]
    fn nan_gradient_aborts_untouched() {
        let mut p = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let mut s = AdamState::new(&[&p]);
        let bad = Tensor::from_parts_unchecked(vec![2], vec![0.1, f64::NAN]);
        let err = adam_step(&mut s, &mut [&mut p], &[bad], 0.1).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 1, .. }));
        assert_eq!(s.step, 0);
        assert_eq!(p.data(), &[1.0, 2.0]);
    }

    #[test]
    fn trajectories_are_reproducible() {
        let run = || {
            let mut p = Tensor::vector(vec![1.0, -1.0]).unwrap();
            let mut s = AdamState::new(&[&p]);
            for k in 0..50 {
                let g: Vec<f64> = p.data().iter().map(|w| 2.0 * w + (k as f64).sin()).collect();
                adam_step(&mut s, &mut [&mut p], &[Tensor::vector(g).unwrap()], 0.01).unwrap();
            }
            p.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Tensor::vector(vec![1.0]).unwrap();
        let mut s = AdamState::new(&[&p]);
        assert!(adam_step(&mut s, &mut [&mut p], &[Tensor::zeros(&[2])], 0.1).is_err());
    }
}
