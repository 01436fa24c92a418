//! Unsupervised training objective: variational KL, per-step and Lagrangian
//! smoothness, and local normalized cross-correlation against the first frame.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::ForwardOutput;
use crate::tensor::{numel, strides, Scalar, Var};
use crate::warp::{compose_var, integrate_var, sample_var};

pub const NCC_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 0.02,
            alpha2: 20.0,
            alpha3: 0.02,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha1, self.alpha2, self.alpha3].iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::invalid(format!("loss weights must be >= 0, got {self:?}")));
        }
        Ok(())
    }
}

/// `KL(N(mu, e^lv) ‖ N(0, 1))` averaged over elements, summed over pairs.
pub fn kl_loss<T: Scalar>(pairs: &[(&Var<T>, &Var<T>)]) -> Result<Var<T>> {
    let mut total: Option<Var<T>> = None;
    for (mu, lv) in pairs {
        if mu.shape() != lv.shape() {
            return Err(Error::shape("kl_loss", mu.shape(), lv.shape()));
        }
        let kl = mu.square().add(&lv.exp())?.sub(lv)?.shift(-T::one()).scale(T::of(0.5)).mean();
        total = Some(match total {
            Some(t) => t.add(&kl)?,
            None => kl,
        });
    }
    total.ok_or_else(|| Error::invalid("kl_loss needs at least one pair"))
}

/// Sliding-window sum with clamped borders over every spatial axis of a
/// `[K, spatial...]` tensor.
pub fn box_sum<T: Scalar>(x: &Var<T>, spatial: &[usize], radius: usize) -> Result<Var<T>> {
    let n = numel(spatial);
    if !x.len().is_multiple_of(n) || x.shape().len() < spatial.len() || x.shape()[x.shape().len() - spatial.len()..] != *spatial {
        return Err(Error::shape("box_sum", x.shape(), spatial));
    }
    let st = strides(spatial);
    let mut out = x.clone();
    for (axis, &ext) in spatial.iter().enumerate() {
        let stride = st[axis];
        let taps = Rc::new(tap_table(ext, radius));
        let src = Rc::clone(&out.value);
        let data = apply_axis(&src, n, ext, stride, &taps, radius);
        let len = src.len();
        out = out.tape().record("box_sum", &[&out], out.shape().to_vec(), data, move |g, _| {
            let mut gx = vec![T::zero(); len];
            let w = 2 * radius + 1;
            for base in line_starts(len, n, ext, stride) {
                for i in 0..ext {
                    let go = g[base + i * stride];
                    for &j in &taps[i * w..(i + 1) * w] {
                        gx[base + j * stride] += go;
                    }
                }
            }
            vec![Some(gx)]
        });
    }
    Ok(out)
}

fn tap_table(ext: usize, radius: usize) -> Vec<usize> {
    let r = radius as isize;
    (0..ext as isize)
        .flat_map(|i| (-r..=r).map(move |d| (i + d).clamp(0, ext as isize - 1) as usize))
        .collect()
}

/// Offsets of the first element of every line along an axis.
fn line_starts(len: usize, n: usize, ext: usize, stride: usize) -> impl Iterator<Item = usize> {
    let outer = n / (ext * stride);
    (0..len / n).flat_map(move |k| (0..outer).flat_map(move |o| (0..stride).map(move |s| k * n + o * ext * stride + s)))
}

fn apply_axis<T: Scalar>(x: &[T], n: usize, ext: usize, stride: usize, taps: &[usize], radius: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let w = 2 * radius + 1;
    for base in line_starts(x.len(), n, ext, stride) {
        for i in 0..ext {
            out[base + i * stride] = taps[i * w..(i + 1) * w].iter().map(|&j| x[base + j * stride]).sum();
        }
    }
    out
}

/// `−mean(r²)` of the local correlation coefficient `r` over a sliding
/// `window`, in `[−1, 0]`.
pub fn ncc_loss<T: Scalar>(a: &Var<T>, b: &Var<T>, window: usize) -> Result<Var<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ncc_loss", a.shape(), b.shape()));
    }
    if window.is_multiple_of(2) {
        return Err(Error::invalid(format!("ncc window must be odd, got {window}")));
    }
    let spatial = a.shape().to_vec();
    let ws = T::of((window as f64).powi(spatial.len() as i32));
    let stacked = Var::stack(&[a, b, &a.square(), &b.square(), &a.mul(b)?])?;
    let sums = box_sum(&stacked, &spatial, window / 2)?;
    let (sa, sb, saa, sbb, sab) = (sums.select(0)?, sums.select(1)?, sums.select(2)?, sums.select(3)?, sums.select(4)?);
    let inv = T::one() / ws;
    let cross = sab.sub(&sa.mul(&sb)?.scale(inv))?;
    let va = saa.sub(&sa.square().scale(inv))?;
    let vb = sbb.sub(&sb.square().scale(inv))?;
    let cc = cross.square().div(&va.mul(&vb)?.shift(T::of(NCC_EPS)))?;
    Ok(cc.mean().neg())
}

/// Mean of squared forward differences of every component along every
/// spatial axis of a `[K, spatial...]` field.
pub fn smoothness_loss<T: Scalar>(u: &Var<T>) -> Result<Var<T>> {
    let spatial = &u.shape()[1..];
    if spatial.is_empty() || spatial.iter().any(|&d| d < 2) {
        return Err(Error::invalid(format!("smoothness needs >= 2 cells per axis, got {:?}", u.shape())));
    }
    let n = numel(spatial);
    let k = u.shape()[0];
    let st = strides(spatial);
    let (mut hi, mut lo) = (Vec::new(), Vec::new());
    for (axis, &ext) in spatial.iter().enumerate() {
        for c in 0..k {
            for s in 0..n {
                if (s / st[axis]) % ext + 1 < ext {
                    hi.push(c * n + s + st[axis]);
                    lo.push(c * n + s);
                }
            }
        }
    }
    let m = hi.len();
    let d = u.gather_flat(Rc::new(hi), vec![m])?.sub(&u.gather_flat(Rc::new(lo), vec![m])?)?;
    Ok(d.square().mean())
}

/// Sequence loss split into its four components (each summed over steps).
pub struct LossTerms<T: Scalar> {
    pub kl: Var<T>,
    pub step_smooth: Var<T>,
    pub similarity: Var<T>,
    pub lagrangian_smooth: Var<T>,
    pub total: Var<T>,
}

impl<T: Scalar> LossTerms<T> {
    /// `[a, b, c, d, total]` as plain numbers.
    pub fn values(&self) -> [f64; 5] {
        [&self.kl, &self.step_smooth, &self.similarity, &self.lagrangian_smooth, &self.total].map(|v| v.item().as_f64())
    }
}

/// Options for [`total_loss`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossOptions {
    pub weights: LossWeights,
    pub window: usize,
    pub squarings: u32,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            window: 9,
            squarings: crate::warp::DEFAULT_STEPS,
        }
    }
}

fn finite<T: Scalar>(v: &Var<T>, term: &'static str, step: usize) -> Result<()> {
    if v.item().is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { term: term.to_string(), step })
    }
}

/// Displacements obtained by integrating per-step velocities.
pub struct SequenceFields<T: Scalar> {
    /// `φ_{t:t+1}`.
    pub forward: Vec<Var<T>>,
    /// `φ_{t+1:t}`.
    pub backward: Vec<Var<T>>,
    /// `φ_{0:t+1}`.
    pub lagrangian: Vec<Var<T>>,
}

/// Integrates every sampled velocity and chains the Lagrangian fields as
/// `φ_{0:t+1} = φ_{0:t} ∘ φ_{t:t+1}`.
pub fn sequence_fields<T: Scalar>(out: &ForwardOutput<T>, squarings: u32) -> Result<SequenceFields<T>> {
    let forward = out
        .forward
        .iter()
        .map(|v| integrate_var(&v.sample, squarings))
        .collect::<Result<Vec<_>>>()?;
    let backward = out
        .backward
        .iter()
        .map(|v| integrate_var(&v.sample, squarings))
        .collect::<Result<Vec<_>>>()?;
    let mut lagrangian: Vec<Var<T>> = Vec::with_capacity(forward.len());
    for (t, f) in forward.iter().enumerate() {
        let next = if t == 0 { f.clone() } else { compose_var(&lagrangian[t - 1], f)? };
        lagrangian.push(next);
    }
    Ok(SequenceFields { forward, backward, lagrangian })
}

/// `Σ_t [a + α₁ b + α₂ c + α₃ d]` for one sequence `frames` of shape
/// `[T, spatial...]`.
pub fn total_loss<T: Scalar>(frames: &Var<T>, out: &ForwardOutput<T>, opts: &LossOptions) -> Result<LossTerms<T>> {
    opts.weights.validate()?;
    let steps = frames.shape()[0];
    if steps < 2 || out.forward.len() != steps - 1 || out.backward.len() != steps - 1 {
        return Err(Error::invalid(format!(
            "{} frames need {} forward and backward fields, got {} and {}",
            steps,
            steps.saturating_sub(1),
            out.forward.len(),
            out.backward.len()
        )));
    }
    let fields = sequence_fields(out, opts.squarings)?;
    let first = frames.select(0)?;
    let w = opts.weights;
    let mut acc: Option<[Var<T>; 4]> = None;
    for t in 0..steps - 1 {
        let (f, b) = (&out.forward[t], &out.backward[t]);
        let a = kl_loss(&[(&f.mu, &f.logvar), (&b.mu, &b.logvar)])?;
        finite(&a, "kl", t)?;
        let sb = smoothness_loss(&fields.forward[t])?.add(&smoothness_loss(&fields.backward[t])?)?;
        finite(&sb, "step_smooth", t)?;
        let warped = sample_var(&first, &fields.lagrangian[t])?;
        let c = ncc_loss(&frames.select(t + 1)?, &warped, opts.window)?;
        finite(&c, "similarity", t)?;
        let d = smoothness_loss(&fields.lagrangian[t])?;
        finite(&d, "lagrangian_smooth", t)?;
        acc = Some(match acc {
            None => [a, sb, c, d],
            Some([xa, xb, xc, xd]) => [xa.add(&a)?, xb.add(&sb)?, xc.add(&c)?, xd.add(&d)?],
        });
    }
    let [kl, step_smooth, similarity, lagrangian_smooth] = acc.expect("at least one step");
    let total = kl
        .add(&step_smooth.scale(T::of(w.alpha1)))?
        .add(&similarity.scale(T::of(w.alpha2)))?
        .add(&lagrangian_smooth.scale(T::of(w.alpha3)))?;
    finite(&total, "total", steps - 1)?;
    Ok(LossTerms {
        kl,
        step_smooth,
        similarity,
        lagrangian_smooth,
        total,
    })
}
