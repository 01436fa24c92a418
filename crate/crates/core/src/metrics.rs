//! Tracking metrics: Dice, PSNR, SSIM, Hausdorff distance and an evaluator
//! that warps the first frame and its labels along Lagrangian fields.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{numel, strides, Tensor};
use crate::warp::{jacobian_stats, sample, sample_nearest, DisplacementField, JacobianStats};

fn same_shape(op: &'static str, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn label_of(v: f32) -> u32 {
    v.round().max(0.0) as u32
}

/// `2|A∩B| / (|A| + |B|)` for one label; 1 when both are empty.
pub fn dice(a: &Tensor<f32>, b: &Tensor<f32>, label: u32) -> Result<f64> {
    same_shape("dice", a, b)?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (ia, ib) = (label_of(x) == label, label_of(y) == label);
        na += ia as usize;
        nb += ib as usize;
        inter += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

pub fn mse(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    same_shape("mse", a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    Ok(s / a.len() as f64)
}

/// `10 log₁₀(peak² / MSE)`; `+∞` when the inputs are identical.
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("psnr peak must be positive, got {peak}")));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimOptions {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimOptions {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: 1.0,
        }
    }
}

/// Separable Gaussian filter keeping only fully covered ("valid") windows.
fn gauss_valid(x: &[f64], shape: &[usize], kernel: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let w = kernel.len();
    let mut cur = x.to_vec();
    let mut cur_shape = shape.to_vec();
    for axis in 0..shape.len() {
        let mut out_shape = cur_shape.clone();
        out_shape[axis] = cur_shape[axis] + 1 - w;
        let st_in = strides(&cur_shape);
        let st_out = strides(&out_shape);
        let mut out = vec![0.0; numel(&out_shape)];
        for (o, v) in out.iter_mut().enumerate() {
            let mut base = 0;
            let mut rem = o;
            for a in 0..shape.len() {
                let i = rem / st_out[a];
                rem %= st_out[a];
                base += i * st_in[a];
            }
            *v = kernel.iter().enumerate().map(|(k, &g)| g * cur[base + k * st_in[axis]]).sum();
        }
        cur = out;
        cur_shape = out_shape;
    }
    (cur, cur_shape)
}

/// Mean local SSIM with Gaussian-weighted windows.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>, opts: &SsimOptions) -> Result<f64> {
    same_shape("ssim", a, b)?;
    if a.shape().iter().any(|&d| d < opts.window) {
        return Err(Error::invalid(format!(
            "ssim needs every extent >= {}, got {:?}",
            opts.window,
            a.shape()
        )));
    }
    let half = (opts.window / 2) as f64;
    let mut kernel: Vec<f64> = (0..opts.window)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * opts.sigma * opts.sigma)).exp())
        .collect();
    let ks: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= ks);
    let x: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| a * b).collect::<Vec<_>>();
    let sh = a.shape();
    let (mx, _) = gauss_valid(&x, sh, &kernel);
    let (my, _) = gauss_valid(&y, sh, &kernel);
    let (sxx, _) = gauss_valid(&prod(&x, &x), sh, &kernel);
    let (syy, _) = gauss_valid(&prod(&y, &y), sh, &kernel);
    let (sxy, _) = gauss_valid(&prod(&x, &y), sh, &kernel);
    let c1 = (opts.k1 * opts.peak).powi(2);
    let c2 = (opts.k2 * opts.peak).powi(2);
    let n = mx.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cxy = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / n as f64)
}

/// Label cells with at least one face neighbour outside the label (cells
/// on the grid edge count as boundary).
fn boundary(mask: &Tensor<f32>, label: u32) -> Vec<Vec<usize>> {
    let sh = mask.shape();
    let st = strides(sh);
    let mut pts = Vec::new();
    let mut idx = vec![0usize; sh.len()];
    for (s, &v) in mask.data().iter().enumerate() {
        if label_of(v) != label {
            continue;
        }
        let mut rem = s;
        for a in 0..sh.len() {
            idx[a] = rem / st[a];
            rem %= st[a];
        }
        let on_edge = (0..sh.len()).any(|a| {
            idx[a] == 0
                || idx[a] + 1 == sh[a]
                || label_of(mask.data()[s - st[a]]) != label
                || label_of(mask.data()[s + st[a]]) != label
        });
        if on_edge {
            pts.push(idx.clone());
        }
    }
    pts
}

fn directed(a: &[Vec<usize>], b: &[Vec<usize>]) -> f64 {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| p.iter().zip(q).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
        .sqrt()
}

/// Symmetric Hausdorff distance between label boundaries, in grid cells.
pub fn hausdorff(a: &Tensor<f32>, b: &Tensor<f32>, label: u32) -> Result<f64> {
    same_shape("hausdorff", a, b)?;
    let (pa, pb) = (boundary(a, label), boundary(b, label));
    if pa.is_empty() || pb.is_empty() {
        return Err(Error::EmptyLabel(label));
    }
    Ok(directed(&pa, &pb).max(directed(&pb, &pa)))
}

/// Metrics for one tracked frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub frame: usize,
    pub dice: BTreeMap<u32, f64>,
    pub hausdorff: BTreeMap<u32, f64>,
    pub psnr: f64,
    pub ssim: f64,
    pub jacobian: JacobianStats,
    /// Metrics that could not be computed, with the reason.
    pub skipped: Vec<String>,
}

impl MetricReport {
    pub fn mean_dice(&self) -> f64 {
        if self.dice.is_empty() {
            return f64::NAN;
        }
        self.dice.values().sum::<f64>() / self.dice.len() as f64
    }
}

/// Aggregate over evaluated frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub frames: Vec<MetricReport>,
    pub mean_dice: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_hausdorff: f64,
    pub frac_nonpos: f64,
}

impl TrackingReport {
    pub const CSV_HEADER: &'static str = "sequence,frames,mean_dice,mean_psnr,mean_ssim,mean_hausdorff,frac_nonpos";

    /// One flat row matching [`Self::CSV_HEADER`].
    pub fn csv_row(&self, sequence: &str) -> String {
        format!(
            "{sequence},{},{},{},{},{},{}",
            self.frames.len(),
            self.mean_dice,
            self.mean_psnr,
            self.mean_ssim,
            self.mean_hausdorff,
            self.frac_nonpos
        )
    }
}

/// One sequence to evaluate: frames `[T, spatial...]` and, where known,
/// ground-truth masks per frame.
pub struct TrackingInput<'a> {
    pub frames: &'a Tensor<f32>,
    pub masks: &'a [Option<Tensor<f32>>],
}

/// Warps frame 0 (linear) and its mask (nearest) by each `lagrangian[t]`
/// (`φ_{0:t}`) and scores frame `t` for every `t` in `eval_frames`.
pub fn evaluate_tracking(input: &TrackingInput, lagrangian: &[DisplacementField<f32>], eval_frames: &[usize]) -> Result<TrackingReport> {
    let steps = input.frames.shape()[0];
    let first = input.frames.select(0);
    let first_mask = input
        .masks
        .first()
        .and_then(|m| m.as_ref())
        .ok_or_else(|| Error::invalid("evaluation needs the first-frame mask"))?;
    let mut labels: Vec<u32> = first_mask.data().iter().map(|&v| label_of(v)).filter(|&l| l > 0).collect();
    labels.sort_unstable();
    labels.dedup();
    let mut reports = Vec::with_capacity(eval_frames.len());
    for &t in eval_frames {
        if t >= steps || t >= lagrangian.len() {
            return Err(Error::invalid(format!("no frame or field for index {t}")));
        }
        let field = &lagrangian[t];
        let warped = sample(&first, field)?;
        let warped_mask = sample_nearest(first_mask, field)?;
        let target = input.frames.select(t);
        let mut rep = MetricReport {
            frame: t,
            dice: BTreeMap::new(),
            hausdorff: BTreeMap::new(),
            psnr: psnr(&warped, &target, 1.0)?,
            ssim: ssim(&warped, &target, &SsimOptions::default())?,
            jacobian: if field.spatial().iter().all(|&d| d >= 3) {
                jacobian_stats(field, true)?
            } else {
                JacobianStats::default()
            },
            skipped: Vec::new(),
        };
        match input.masks.get(t).and_then(|m| m.as_ref()) {
            Some(gt) => {
                for &l in &labels {
                    rep.dice.insert(l, dice(&warped_mask, gt, l)?);
                    match hausdorff(&warped_mask, gt, l) {
                        Ok(h) => {
                            rep.hausdorff.insert(l, h);
                        }
                        Err(e) => rep.skipped.push(format!("hausdorff: {e}")),
                    }
                }
            }
            None => rep.skipped.push(format!("no ground-truth mask for frame {t}")),
        }
        reports.push(rep);
    }
    let mean = |f: &dyn Fn(&MetricReport) -> Option<f64>| {
        let v: Vec<f64> = reports.iter().filter_map(f).filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    Ok(TrackingReport {
        mean_dice: mean(&|r| (!r.dice.is_empty()).then(|| r.mean_dice())),
        mean_psnr: mean(&|r| Some(r.psnr)),
        mean_ssim: mean(&|r| Some(r.ssim)),
        mean_hausdorff: mean(&|r| {
            (!r.hausdorff.is_empty()).then(|| r.hausdorff.values().sum::<f64>() / r.hausdorff.len() as f64)
        }),
        frac_nonpos: mean(&|r| Some(r.jacobian.frac_nonpos)),
        frames: reports,
    })
}
