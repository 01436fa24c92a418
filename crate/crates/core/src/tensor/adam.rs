//! Adam with global gradient-norm clipping.

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Moment buffers and step counter for Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed moments for parameters of the given lengths.
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn from_parts(config: AdamConfig, step: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) -> Result<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::invalid("adam moment buffers disagree in shape"));
        }
        Ok(Self { config, step, m, v })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update using explicit gradients.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&[T]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "adam tracks {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != p.len() {
                return Err(Error::shape("adam_step", p.shape(), &[g.len()]));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, x) in p.data_mut().iter_mut().enumerate() {
                let gj = g[j];
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let mhat = m[j].as_f64() / bc1;
                let vhat = v[j].as_f64() / bc2;
                *x -= T::of(lr * mhat / (vhat.sqrt() + eps));
            }
        }
        Ok(())
    }

    /// One update reading each parameter's stored gradient (missing = zero).
    pub fn step_stored(&mut self, params: &mut [&mut Tensor<T>]) -> Result<()> {
        let grads: Vec<Vec<T>> = params
            .iter()
            .map(|p| p.grad().map(|g| g.to_vec()).unwrap_or_else(|| vec![T::zero(); p.len()]))
            .collect();
        let refs: Vec<&[T]> = grads.iter().map(|g| g.as_slice()).collect();
        self.step(params, &refs)
    }
}

/// Multiplies the learning rate by `factor` every `every` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub base_lr: f64,
    pub factor: f64,
    pub every: usize,
}

impl StepDecay {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.every == 0 {
            return self.base_lr;
        }
        self.base_lr * self.factor.powi((epoch / self.every) as i32)
    }
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::<f64>::new(&[1], vec![0.5]).unwrap();
        let mut st = AdamState::new(AdamConfig { lr: 1e-3, eps: 1e-12, ..Default::default() }, &[1]);
        st.step(&mut [&mut p], &[&[1.0]]).unwrap();
        assert!((p.data()[0] - (0.5 - 1e-3)).abs() < 1e-9);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::<f32>::new(&[3], vec![1.0, -2.0, 3.0]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(AdamConfig::default(), &[3]);
        st.step(&mut [&mut p], &[&[0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(p.data(), before.data());
    }

    #[test]
    fn converges_on_quadratic() {
        let mut w = Tensor::<f64>::new(&[1], vec![0.0]).unwrap();
        let mut st = AdamState::new(AdamConfig { lr: 0.1, ..Default::default() }, &[1]);
        for _ in 0..200 {
            let g = 2.0 * (w.data()[0] - 3.0);
            st.step(&mut [&mut w], &[&[g]]).unwrap();
        }
        assert!((w.data()[0] - 3.0).abs() < 0.1, "w = {}", w.data()[0]);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut p = Tensor::<f32>::zeros(&[2]);
        let mut st = AdamState::new(AdamConfig::default(), &[2]);
        assert!(st.step(&mut [&mut p], &[&[1.0]]).is_err());
    }

    #[test]
    fn step_counter_increases() {
        let mut p = Tensor::<f32>::zeros(&[1]);
        let mut st = AdamState::new(AdamConfig::default(), &[1]);
        let mut last = st.steps();
        for _ in 0..5 {
            st.step(&mut [&mut p], &[&[0.3]]).unwrap();
            assert!(st.steps() > last);
            last = st.steps();
        }
    }

    #[test]
    fn decay_halves_on_schedule() {
        let d = StepDecay { base_lr: 5e-4, factor: 0.5, every: 20 };
        assert_eq!(d.lr_at(0), 5e-4);
        assert_eq!(d.lr_at(19), 5e-4);
        assert_eq!(d.lr_at(20), 2.5e-4);
        assert_eq!(d.lr_at(45), 1.25e-4);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![vec![3.0f64], vec![4.0]];
        let n = clip_grad_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-12 && (g[1][0] - 0.8).abs() < 1e-12);
    }
}
