//! Latent codes to velocity fields.

use std::rc::Rc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::embed::PatchGrid;
use super::params::{Bound, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Mean, log-variance and drawn sample, each `[rank, spatial...]`.
#[derive(Clone, Debug)]
pub struct VelocityOut<T: Scalar> {
    pub mu: Var<T>,
    pub logvar: Var<T>,
    pub sample: Var<T>,
}

pub struct HeadParams<T: Scalar> {
    pub mu_w: Var<T>,
    pub mu_b: Var<T>,
    pub lv_w: Var<T>,
    pub lv_b: Var<T>,
    pub smooth: Var<T>,
}

impl<T: Scalar> HeadParams<T> {
    /// Mean head starts at zero so the initial fields are the identity.
    pub fn init(store: &mut ParamStore<T>, prefix: &str, c: usize, grid: &PatchGrid, logvar_bias: f64) -> Result<()> {
        let out = grid.rank() * grid.local();
        store.insert(format!("{prefix}.mu.w"), Tensor::zeros(&[c, out]))?;
        store.insert(format!("{prefix}.mu.b"), Tensor::zeros(&[out]))?;
        store.insert(format!("{prefix}.lv.w"), Tensor::zeros(&[c, out]))?;
        store.insert(format!("{prefix}.lv.b"), Tensor::full(&[out], T::of(logvar_bias)))?;
        store.insert(format!("{prefix}.smooth"), smoothing_init(grid.rank()))?;
        Ok(())
    }

    pub fn bind(params: &Bound<T>, prefix: &str) -> Result<Self> {
        let v = |n: &str| params.var(&format!("{prefix}.{n}")).cloned();
        Ok(Self {
            mu_w: v("mu.w")?,
            mu_b: v("mu.b")?,
            lv_w: v("lv.w")?,
            lv_b: v("lv.b")?,
            smooth: v("smooth")?,
        })
    }
}

/// Binomial `[1,2,1]` kernel per component, normalized, shape `[rank, 3^rank]`.
pub fn smoothing_init<T: Scalar>(rank: usize) -> Tensor<T> {
    let taps = 3usize.pow(rank as u32);
    let norm = 4f64.powi(rank as i32);
    Tensor::from_fn(&[rank, taps], |s| {
        let mut code = s % taps;
        let mut w = 1.0;
        for _ in 0..rank {
            w *= [1.0, 2.0, 1.0][code % 3];
            code /= 3;
        }
        T::of(w / norm)
    })
}

/// Per-component 3×3(×3) convolution with clamped borders.
/// `x`: `[K, spatial...]`, `kernel`: `[K, 3^rank]`.
pub fn depthwise_smooth<T: Scalar>(x: &Var<T>, kernel: &Var<T>, grid: &PatchGrid) -> Result<Var<T>> {
    let n = grid.pixels();
    let taps = 3usize.pow(grid.rank() as u32);
    let k = x.len() / n;
    if x.shape()[1..] != *grid.spatial() || kernel.shape() != [k, taps] {
        return Err(Error::shape("depthwise_smooth", x.shape(), kernel.shape()));
    }
    let nb = grid.neighbors();
    let (xv, wv) = (Rc::clone(&x.value), Rc::clone(&kernel.value));
    let mut out = vec![T::zero(); k * n];
    for c in 0..k {
        let (plane, w) = (&xv[c * n..(c + 1) * n], &wv[c * taps..(c + 1) * taps]);
        for s in 0..n {
            let idx = &nb[s * taps..(s + 1) * taps];
            out[c * n + s] = idx.iter().zip(w).map(|(&i, &wt)| wt * plane[i]).sum();
        }
    }
    Ok(x.tape().record("depthwise_smooth", &[x, kernel], x.shape().to_vec(), out, move |g, need| {
        let mut gx = need[0].then(|| vec![T::zero(); k * n]);
        let mut gw = need[1].then(|| vec![T::zero(); k * taps]);
        for c in 0..k {
            let plane = &xv[c * n..(c + 1) * n];
            let w = &wv[c * taps..(c + 1) * taps];
            for s in 0..n {
                let go = g[c * n + s];
                let idx = &nb[s * taps..(s + 1) * taps];
                if let Some(gx) = gx.as_mut() {
                    for (&i, &wt) in idx.iter().zip(w) {
                        gx[c * n + i] += go * wt;
                    }
                }
                if let Some(gw) = gw.as_mut() {
                    for (o, &i) in idx.iter().enumerate() {
                        gw[c * taps + o] += go * plane[i];
                    }
                }
            }
        }
        vec![gx, gw]
    }))
}

/// Decodes one latent code `[P, C]` into a velocity field. With `rng` the
/// sample is `mu + exp(logvar/2)·ε`; without it the sample is `mu`.
pub fn decode_velocity<T: Scalar, R: RngCore + ?Sized>(z: &Var<T>, heads: &HeadParams<T>, grid: &PatchGrid, rng: Option<&mut R>) -> Result<VelocityOut<T>> {
    if z.shape().len() != 2 || z.shape()[0] != grid.patches() {
        return Err(Error::shape("decode_velocity", z.shape(), &[grid.patches(), heads.mu_w.shape()[0]]));
    }
    let rank = grid.rank();
    let raw_mu = grid.unpatchify(&z.matmul(&heads.mu_w)?.add(&heads.mu_b)?, rank)?;
    let mu = depthwise_smooth(&raw_mu, &heads.smooth, grid)?;
    let logvar = grid
        .unpatchify(&z.matmul(&heads.lv_w)?.add(&heads.lv_b)?, rank)?
        .clamp(T::of(LOGVAR_MIN), T::of(LOGVAR_MAX));
    let sample = match rng {
        Some(rng) => {
            let eps = Tensor::from_fn(mu.shape(), |_| T::of(rng.sample::<f64, _>(StandardNormal)));
            let std = logvar.scale(T::of(0.5)).exp();
            mu.add(&std.mul(&mu.tape().constant(&eps))?)?
        }
        None => mu.clone(),
    };
    Ok(VelocityOut { mu, logvar, sample })
}
