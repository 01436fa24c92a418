//! Matérn-3/2 Gaussian-process prior in state-space form.
//!
//! The latent state is `(z, dz/dt)`. Steps of length `Δ` use the closed-form
//! transition `Φ = exp(ΔA)` and process noise `Q = Σ₀ − ΦΣ₀Φᵀ`, so a Kalman
//! filter over `T` observations costs O(T). The dense O(T³) regression path
//! is kept as a reference.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Var};

pub type Mat2 = [[f64; 2]; 2];

const JITTER: f64 = 1e-8;
const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Magnitude, length scale and observation noise of a Matérn-3/2 kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaternHyper {
    pub sigma: f64,
    pub ell: f64,
    pub noise_var: f64,
}

impl MaternHyper {
    pub fn new(sigma: f64, ell: f64, noise_var: f64) -> Result<Self> {
        if !(sigma > 0.0 && ell > 0.0 && noise_var >= 0.0) {
            return Err(Error::invalid(format!(
                "matern hyperparameters need sigma > 0, ell > 0, noise >= 0 (got {sigma}, {ell}, {noise_var})"
            )));
        }
        Ok(Self { sigma, ell, noise_var })
    }

    fn lambda(&self) -> f64 {
        SQRT3 / self.ell
    }
}

/// Choice of initial state covariance `Σ₀`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatePrior {
    /// `diag(σ²/2, 3σ²/l²)`.
    #[default]
    Nominal,
    /// `diag(σ²/2, 3σ²/(2l²))`, the stationary covariance of the SDE.
    Stationary,
}

impl StatePrior {
    pub fn sigma0(self, hp: &MaternHyper) -> Mat2 {
        let v = hp.sigma * hp.sigma;
        let d = match self {
            StatePrior::Nominal => 3.0 * v / (hp.ell * hp.ell),
            StatePrior::Stationary => 1.5 * v / (hp.ell * hp.ell),
        };
        [[v / 2.0, 0.0], [0.0, d]]
    }
}

/// Which state component the likelihood observes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Observe {
    #[default]
    Value,
    Derivative,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterOptions {
    pub prior: StatePrior,
    pub observe: Observe,
}

/// Mean and covariance of `(z, dz/dt)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GPState {
    pub mean: [f64; 2],
    pub cov: Mat2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionPair {
    pub phi: Mat2,
    pub q: Mat2,
}

/// One filter step: predicted state, updated state and gain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KalmanStep {
    pub predicted: GPState,
    pub filtered: GPState,
    pub gain: [f64; 2],
}

/// Posterior means and marginal variances at the observed positions.
#[derive(Clone, Debug, PartialEq)]
pub struct DensePosterior {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

fn sandwich(a: &Mat2, s: &Mat2) -> Mat2 {
    mul(&mul(a, s), &transpose(a))
}

/// Eigenvalues of a symmetric 2×2 matrix, ascending.
pub fn sym_eigenvalues(m: &Mat2) -> [f64; 2] {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    [tr / 2.0 - disc, tr / 2.0 + disc]
}

/// `σ (1 + √3 d/l) exp(−√3 d/l)`.
pub fn matern_kernel(d: f64, hp: &MaternHyper) -> Result<f64> {
    if d < 0.0 || d.is_nan() {
        return Err(Error::invalid(format!("kernel distance must be >= 0, got {d}")));
    }
    let r = hp.lambda() * d;
    Ok(hp.sigma * (1.0 + r) * (-r).exp())
}

/// Drift matrix `A` and diffusion vector `b` of the Matérn-3/2 SDE.
pub fn transition_matrix(hp: &MaternHyper) -> (Mat2, [f64; 2]) {
    let l = hp.ell;
    ([[0.0, 1.0], [-3.0 / (l * l), -2.0 * SQRT3 / l]], [0.0, 1.0])
}

/// Truncated power series of `exp(m)`.
pub fn expm_series(m: &Mat2, terms: usize) -> Mat2 {
    let mut out = [[1.0, 0.0], [0.0, 1.0]];
    let mut term = out;
    for k in 1..terms {
        term = mul(&term, m);
        for row in term.iter_mut() {
            for x in row.iter_mut() {
                *x /= k as f64;
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] += term[i][j];
            }
        }
    }
    out
}

/// `exp(ΔA)` for the repeated eigenvalue `−λ`, `λ = √3/l`.
pub fn transition(delta: f64, hp: &MaternHyper) -> Mat2 {
    let lam = hp.lambda();
    let x = lam * delta;
    if !x.is_finite() {
        let (a, _) = transition_matrix(hp);
        return expm_series(&[[a[0][0] * delta, a[0][1] * delta], [a[1][0] * delta, a[1][1] * delta]], 60);
    }
    let e = (-x).exp();
    [[e * (1.0 + x), e * delta], [-e * lam * x, e * (1.0 - x)]]
}

pub fn discretize(delta: f64, hp: &MaternHyper) -> Result<TransitionPair> {
    discretize_with(delta, hp, StatePrior::Nominal)
}

pub fn discretize_with(delta: f64, hp: &MaternHyper, prior: StatePrior) -> Result<TransitionPair> {
    if delta < 0.0 || delta.is_nan() {
        return Err(Error::invalid(format!("step must be >= 0, got {delta}")));
    }
    let phi = transition(delta, hp);
    let s0 = prior.sigma0(hp);
    let m = sandwich(&phi, &s0);
    let mut q = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            q[i][j] = s0[i][j] - m[i][j];
        }
    }
    q[0][1] = 0.5 * (q[0][1] + q[1][0]);
    q[1][0] = q[0][1];
    Ok(TransitionPair { phi, q })
}

/// Kalman filter with the value component observed and the nominal prior.
pub fn kalman_filter(obs: &[f64], deltas: &[f64], hp: &MaternHyper) -> Result<Vec<KalmanStep>> {
    kalman_filter_with(obs, deltas, hp, FilterOptions::default())
}

pub fn kalman_filter_with(obs: &[f64], deltas: &[f64], hp: &MaternHyper, opts: FilterOptions) -> Result<Vec<KalmanStep>> {
    if obs.is_empty() {
        return Err(Error::invalid("kalman_filter needs at least one observation"));
    }
    if deltas.len() + 1 != obs.len() {
        return Err(Error::invalid(format!(
            "{} observations need {} gaps, got {}",
            obs.len(),
            obs.len() - 1,
            deltas.len()
        )));
    }
    let h = match opts.observe {
        Observe::Value => [1.0, 0.0],
        Observe::Derivative => [0.0, 1.0],
    };
    let s0 = opts.prior.sigma0(hp);
    let mut state = GPState { mean: [0.0; 2], cov: s0 };
    let mut out = Vec::with_capacity(obs.len());
    for (t, &y) in obs.iter().enumerate() {
        let predicted = if t == 0 {
            state
        } else {
            let TransitionPair { phi, q } = discretize_with(deltas[t - 1], hp, opts.prior)?;
            let m = state.mean;
            let p = sandwich(&phi, &state.cov);
            GPState {
                mean: [
                    phi[0][0] * m[0] + phi[0][1] * m[1],
                    phi[1][0] * m[0] + phi[1][1] * m[1],
                ],
                cov: [
                    [p[0][0] + q[0][0], p[0][1] + q[0][1]],
                    [p[1][0] + q[1][0], p[1][1] + q[1][1]],
                ],
            }
        };
        let c = predicted.cov;
        let ph = [c[0][0] * h[0] + c[0][1] * h[1], c[1][0] * h[0] + c[1][1] * h[1]];
        let s = h[0] * ph[0] + h[1] * ph[1] + hp.noise_var + JITTER;
        let gain = [ph[0] / s, ph[1] / s];
        let innov = y - (h[0] * predicted.mean[0] + h[1] * predicted.mean[1]);
        let mean = [
            predicted.mean[0] + gain[0] * innov,
            predicted.mean[1] + gain[1] * innov,
        ];
        // Σ − k hᵀΣ, with hᵀΣ = phᵀ by symmetry
        let mut cov = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] = c[i][j] - gain[i] * ph[j];
            }
        }
        cov[0][1] = 0.5 * (cov[0][1] + cov[1][0]);
        cov[1][0] = cov[0][1];
        state = GPState { mean, cov };
        out.push(KalmanStep {
            predicted,
            filtered: state,
            gain,
        });
    }
    Ok(out)
}

/// Kernel used by the dense path: the value-value covariance of the state
/// space model, i.e. a Matérn-3/2 kernel of magnitude `Σ₀[0,0] = σ²/2`.
fn state_kernel(d: f64, hp: &MaternHyper) -> Result<f64> {
    let scaled = MaternHyper {
        sigma: hp.sigma * hp.sigma / 2.0,
        ..*hp
    };
    matern_kernel(d, &scaled)
}

/// Dense GP regression posterior at the observed positions.
pub fn dense_gp_posterior(obs: &[f64], positions: &[f64], hp: &MaternHyper) -> Result<DensePosterior> {
    let n = obs.len();
    if n == 0 || positions.len() != n {
        return Err(Error::invalid(format!(
            "dense posterior needs matching non-empty obs/positions, got {} and {}",
            n,
            positions.len()
        )));
    }
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] = state_kernel((positions[i] - positions[j]).abs(), hp)?;
        }
    }
    let mut ky = k.clone();
    for i in 0..n {
        ky[(i, i)] += hp.noise_var + JITTER;
    }
    let chol = ky
        .cholesky()
        .ok_or_else(|| Error::invalid("gram matrix is not positive definite"))?;
    let alpha = chol.solve(&DVector::from_column_slice(obs));
    let mean = &k * &alpha;
    let w = chol.solve(&k);
    let var = (0..n).map(|i| k[(i, i)] - k.column(i).dot(&w.column(i))).collect();
    Ok(DensePosterior {
        mean: mean.iter().copied().collect(),
        var,
    })
}

/// Filtering means from the dense path: entry `t` is the posterior mean of
/// `z_t` given observations `0..=t`.
pub fn dense_filtering_means(obs: &[f64], deltas: &[f64], hp: &MaternHyper) -> Result<Vec<f64>> {
    if deltas.len() + 1 != obs.len() {
        return Err(Error::invalid("gap count must be one less than observation count"));
    }
    let mut positions = vec![0.0];
    for d in deltas {
        positions.push(positions.last().unwrap() + d);
    }
    (1..=obs.len())
        .map(|t| Ok(*dense_gp_posterior(&obs[..t], &positions[..t], hp)?.mean.last().unwrap()))
        .collect()
}

/// Per-channel GP hyperparameters on the tape, each of shape `[C]` and
/// already positive.
pub struct GpVars<'a, T: Scalar> {
    pub sigma: &'a Var<T>,
    pub ell: &'a Var<T>,
    pub noise: &'a Var<T>,
}

/// Value-component Kalman gains for every `(t, p, c)` series.
///
/// `deltas` has shape `[T−1, P]`; the result holds `T` gains of shape
/// `[P, C]` (the first broadcast from `[C]`).
pub fn latent_gains<T: Scalar>(deltas: Option<&Var<T>>, steps: usize, patches: usize, hp: &GpVars<T>, opts: FilterOptions) -> Result<Vec<Var<T>>> {
    let tape = hp.sigma.tape().clone();
    let c = hp.sigma.shape().to_vec();
    if c.len() != 1 || hp.ell.shape() != c.as_slice() || hp.noise.shape() != c.as_slice() {
        return Err(Error::shape("filter_latent", hp.sigma.shape(), hp.ell.shape()));
    }
    if let Some(d) = deltas {
        if d.shape() != [steps - 1, patches] {
            return Err(Error::shape("filter_latent", d.shape(), &[steps - 1, patches]));
        }
    }
    let var = hp.sigma.square();
    let p0 = var.scale(T::of(0.5));
    let p1_scale = match opts.prior {
        StatePrior::Nominal => 3.0,
        StatePrior::Stationary => 1.5,
    };
    let inv_ell = tape.scalar(T::one()).div(hp.ell)?;
    let p1 = var.mul(&inv_ell.square())?.scale(T::of(p1_scale));
    let lam = inv_ell.scale(T::of(SQRT3));
    let noise = hp.noise.shift(T::of(JITTER));

    let update = |a: &Var<T>, b: &Var<T>, c: &Var<T>| -> Result<(Var<T>, [Var<T>; 3])> {
        match opts.observe {
            Observe::Value => {
                let s = a.add(&noise)?;
                let k0 = a.div(&s)?;
                let k1 = b.div(&s)?;
                let na = a.sub(&k0.mul(a)?)?;
                let nb = b.sub(&k0.mul(b)?)?;
                let nc = c.sub(&k1.mul(b)?)?;
                Ok((k0, [na, nb, nc]))
            }
            Observe::Derivative => {
                let s = c.add(&noise)?;
                let k0 = b.div(&s)?;
                let k1 = c.div(&s)?;
                let na = a.sub(&k0.mul(b)?)?;
                let nb = b.sub(&k0.mul(c)?)?;
                let nc = c.sub(&k1.mul(c)?)?;
                Ok((k0, [na, nb, nc]))
            }
        }
    };

    let (k, mut cov) = update(&p0, &p0.scale(T::zero()), &p1)?;
    let mut gains = Vec::with_capacity(steps);
    gains.push(k);
    for t in 1..steps {
        let d = match deltas {
            Some(d) => d.select(t - 1)?.reshape(&[patches, 1])?,
            None => tape.constant_from(&[patches, 1], vec![T::one(); patches])?,
        };
        let x = d.mul(&lam)?;
        let e = x.neg().exp();
        let f00 = e.mul(&x.shift(T::one()))?;
        let f01 = e.mul(&d)?;
        let f10 = e.mul(&lam.mul(&x)?)?.neg();
        let f11 = e.mul(&x.neg().shift(T::one()))?;
        // Σ̄ = Φ(Σ − Σ₀)Φᵀ + Σ₀
        let d00 = cov[0].sub(&p0)?;
        let d01 = &cov[1];
        let d11 = cov[2].sub(&p1)?;
        let two = T::of(2.0);
        let a = f00
            .square()
            .mul(&d00)?
            .add(&f00.mul(&f01)?.mul(d01)?.scale(two))?
            .add(&f01.square().mul(&d11)?)?
            .add(&p0)?;
        let b = f00
            .mul(&f10)?
            .mul(&d00)?
            .add(&f00.mul(&f11)?.add(&f01.mul(&f10)?)?.mul(d01)?)?
            .add(&f01.mul(&f11)?.mul(&d11)?)?;
        let c = f10
            .square()
            .mul(&d00)?
            .add(&f10.mul(&f11)?.mul(d01)?.scale(two))?
            .add(&f11.square().mul(&d11)?)?
            .add(&p1)?;
        let (k, next) = update(&a, &b, &c)?;
        gains.push(k);
        cov = next;
    }
    Ok(gains)
}

/// `ReLU(k_t ⊙ z_t)` for a latent sequence `z` of shape `[T, P, C]`, where
/// `k_t` is the value-component Kalman gain of each scalar series.
/// Without `deltas` every gap is one.
pub fn filter_latent<T: Scalar>(z: &Var<T>, deltas: Option<&Var<T>>, hp: &GpVars<T>, opts: FilterOptions) -> Result<Var<T>> {
    let &[steps, patches, channels] = z.shape() else {
        return Err(Error::shape("filter_latent", z.shape(), &[0, 0, 0]));
    };
    if hp.sigma.shape() != [channels] {
        return Err(Error::shape("filter_latent", z.shape(), hp.sigma.shape()));
    }
    let gains = latent_gains(deltas, steps, patches, hp, opts)?;
    let mut out = Vec::with_capacity(steps);
    for (t, k) in gains.iter().enumerate() {
        out.push(z.select(t)?.mul(k)?.relu());
    }
    Var::stack(&out.iter().collect::<Vec<_>>())
}
