//! Central finite-difference gradient checks.
//!
//! Runs in `f64`: the reverse-mode gradient of a scalar function is compared
//! against `(f(x + h) - f(x - h)) / 2h` element by element.

use rand::seq::index::sample;
use rand::Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Result of one gradient check.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Options for [`check`].
#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub h: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    /// Check at most this many randomly chosen elements per input.
    pub per_input: Option<usize>,
    /// Further step sizes tried per element; the best agreement counts.
    /// Large steps can straddle a kink and small ones drown in rounding, but
    /// neither makes a wrong gradient agree, so a short ladder covers
    /// piecewise-smooth losses of large magnitude.
    pub extra_steps: &'static [f64],
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-3,
            floor: 1e-6,
            per_input: None,
            extra_steps: &[],
        }
    }
}

/// Compares the tape gradient of `f` at `inputs` with central differences.
pub fn check<F, R>(name: &str, inputs: &[Tensor<f64>], opts: CheckOptions, rng: &mut R, f: F) -> Result<GradReport>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
    R: Rng + ?Sized,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<f64>> = xs.iter().map(|x| tape.param(x)).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let tape = Tape::new();
    let vars: Vec<Var<f64>> = inputs.iter().map(|x| tape.param(x)).collect();
    let loss = f(&tape, &vars)?;
    let grads = loss.backward()?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|v| grads.get_or_zeros(v)).collect();
    drop(grads);
    drop(loss);

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let idx: Vec<usize> = match opts.per_input {
            Some(k) if k < input.len() => sample(rng, input.len(), k).into_vec(),
            _ => (0..input.len()).collect(),
        };
        for j in idx {
            let x0 = input.data()[j];
            let mut best = f64::INFINITY;
            for &h in std::iter::once(&opts.h).chain(opts.extra_steps) {
                work[i].data_mut()[j] = x0 + h;
                let up = eval(&work)?;
                work[i].data_mut()[j] = x0 - h;
                let down = eval(&work)?;
                work[i].data_mut()[j] = x0;
                let numeric = (up - down) / (2.0 * h);
                best = best.min(rel_err(analytic[i][j], numeric, opts.floor));
            }
            worst = worst.max(best);
            checked += 1;
        }
    }
    Ok(GradReport {
        name: name.to_string(),
        max_rel_err: worst,
        checked,
    })
}
