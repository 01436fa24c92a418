//! Synthetic periodic-deformation sequences with analytic ground truth.
//!
//! Each structure is an annulus scaled radially about its centre by
//! `1 + A·sin(2πt/T_cycle + φ)`. The scaling is confined to a compact
//! envelope around the structure, so the two structures move independently.
//! Frame `t` is the textured template pulled back through `ψ_t`, and the
//! Lagrangian displacement from frame 0 is `ψ_t(x) − x` in closed form.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ndt, Tensor};
use crate::warp::DisplacementField;

/// On-disk layout version of a phantom sequence directory.
pub const DATASET_VERSION: u32 = 1;
const TEXTURE_WAVES: usize = 40;
/// Radius, relative to the outer radius, inside which scaling is exact.
const ENVELOPE_CORE: f64 = 1.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Structure {
    /// Centre in (row, col) grid coordinates.
    pub center: [f64; 2],
    pub r_in: f64,
    pub r_out: f64,
    /// Phase offset of the scaling cycle.
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    /// `[H, W]`.
    pub grid: [usize; 2],
    /// Frames per cycle.
    pub period: usize,
    /// Frames per sequence.
    pub frames: usize,
    pub amplitude: f64,
    pub structures: Vec<Structure>,
    /// Shift the second structure's phase by π.
    pub counter_phase: bool,
    /// Width of the envelope taper outside each structure, as a multiple of
    /// its outer radius.
    pub taper: f64,
    pub texture_seed: u64,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self::with_size(64, 16, 32, 0.12, 0.02)
    }
}

impl PhantomSpec {
    /// Two annuli laid out diagonally, scaled to an `n × n` grid.
    pub fn with_size(n: usize, period: usize, frames: usize, amplitude: f64, noise: f64) -> Self {
        let k = (n as f64 - 1.0) / 63.0;
        Self {
            grid: [n, n],
            period,
            frames,
            amplitude,
            structures: vec![
                Structure {
                    center: [21.0 * k, 21.0 * k],
                    r_in: 6.0 * k,
                    r_out: 10.0 * k,
                    phase: 0.0,
                },
                Structure {
                    center: [46.0 * k, 46.0 * k],
                    r_in: 4.5 * k,
                    r_out: 8.0 * k,
                    phase: 0.0,
                },
            ],
            counter_phase: true,
            taper: 1.0,
            texture_seed: 0,
            noise,
        }
    }

    fn phase(&self, i: usize) -> f64 {
        let extra = if self.counter_phase && i == 1 { PI } else { 0.0 };
        self.structures[i].phase + extra
    }

    /// Radial scale factor minus one for structure `i` at time `t`.
    pub fn scaling(&self, i: usize, t: f64) -> f64 {
        self.amplitude * (2.0 * PI * t / self.period as f64 + self.phase(i)).sin()
    }

    /// Pull-back coefficients `1/(1+s) − 1`, one per structure.
    fn coeffs(&self, t: f64) -> Vec<f64> {
        (0..self.structures.len()).map(|i| 1.0 / (1.0 + self.scaling(i, t)) - 1.0).collect()
    }

    fn envelope(&self, s: &Structure, r: f64) -> (f64, f64) {
        let r1 = ENVELOPE_CORE * s.r_out;
        let width = self.taper * s.r_out;
        if r <= r1 {
            (1.0, 0.0)
        } else if r >= r1 + width {
            (0.0, 0.0)
        } else {
            let q = PI * (r - r1) / (2.0 * width);
            (q.cos().powi(2), -(PI / (2.0 * width)) * (2.0 * q).sin())
        }
    }

    /// `ψ(x) − x` for pull-back coefficients `a`.
    fn offset(&self, a: &[f64], x: [f64; 2]) -> [f64; 2] {
        let mut d = [0.0; 2];
        for (s, &ai) in self.structures.iter().zip(a) {
            let rel = [x[0] - s.center[0], x[1] - s.center[1]];
            let (g, _) = self.envelope(s, rel[0].hypot(rel[1]));
            d[0] += ai * g * rel[0];
            d[1] += ai * g * rel[1];
        }
        d
    }

    /// Spatial Jacobian of [`Self::offset`].
    fn offset_grad(&self, a: &[f64], x: [f64; 2]) -> [[f64; 2]; 2] {
        let mut j = [[0.0; 2]; 2];
        for (s, &ai) in self.structures.iter().zip(a) {
            let rel = [x[0] - s.center[0], x[1] - s.center[1]];
            let r = rel[0].hypot(rel[1]);
            let (g, dg) = self.envelope(s, r);
            for p in 0..2 {
                for q in 0..2 {
                    let radial = if r > 0.0 { dg * rel[p] * rel[q] / r } else { 0.0 };
                    j[p][q] += ai * (g * (p == q) as u8 as f64 + radial);
                }
            }
        }
        j
    }

    /// Solves `ψ(y) = z` by fixed-point iteration.
    fn inverse(&self, a: &[f64], z: [f64; 2]) -> [f64; 2] {
        let mut y = z;
        for _ in 0..200 {
            let d = self.offset(a, y);
            let next = [z[0] - d[0], z[1] - d[1]];
            let delta = (next[0] - y[0]).abs().max((next[1] - y[1]).abs());
            y = next;
            if delta < 1e-13 {
                break;
            }
        }
        y
    }

    /// Largest spectral norm of `∇u` over the grid and every phase.
    pub fn max_grad_norm(&self) -> f64 {
        let [h, w] = self.grid;
        // Offsets are linear in the coefficients, so the extremes of the
        // gradient norm occur at the corners of the coefficient box.
        let lo = 1.0 / (1.0 + self.amplitude) - 1.0;
        let hi = 1.0 / (1.0 - self.amplitude) - 1.0;
        let mut worst = 0.0f64;
        for corner in 0..4 {
            let a = [if corner & 1 == 0 { lo } else { hi }, if corner & 2 == 0 { lo } else { hi }];
            for r in 0..h {
                for c in 0..w {
                    worst = worst.max(spectral_norm(self.offset_grad(&a, [r as f64, c as f64])));
                }
            }
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.grid;
        if h < 8 || w < 8 {
            return Err(Error::invalid(format!("phantom grid {h}x{w} is too small")));
        }
        if self.period == 0 || self.frames < 2 {
            return Err(Error::invalid("phantom needs period >= 1 and at least 2 frames"));
        }
        if !(0.0..0.25).contains(&self.amplitude) {
            return Err(Error::invalid(format!("amplitude {} outside [0, 0.25)", self.amplitude)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid(format!("noise {} must be non-negative", self.noise)));
        }
        if !(self.taper > 0.0) {
            return Err(Error::invalid("taper must be positive"));
        }
        if self.structures.len() != 2 {
            return Err(Error::invalid(format!("expected 2 structures, got {}", self.structures.len())));
        }
        for (i, s) in self.structures.iter().enumerate() {
            // the moving envelope must fit inside the grid
            let reach = s.r_out * (ENVELOPE_CORE + self.taper) - 1e-9;
            let inside = s.center[0] - reach >= 0.0
                && s.center[1] - reach >= 0.0
                && s.center[0] + reach <= (h - 1) as f64
                && s.center[1] + reach <= (w - 1) as f64;
            if !(0.0 < s.r_in && s.r_in < s.r_out) || !inside {
                return Err(Error::invalid(format!("structure {i} radii invalid or its envelope leaves the grid")));
            }
        }
        let worst = self.max_grad_norm();
        if worst >= 1.0 {
            return Err(Error::invalid(format!(
                "amplitude {} gives max |grad u| = {worst:.3} >= 1; fields would fold",
                self.amplitude
            )));
        }
        Ok(())
    }

    fn check_index(&self, t: usize) -> Result<()> {
        if t >= self.frames {
            return Err(Error::invalid(format!("frame index {t} outside 0..{}", self.frames)));
        }
        Ok(())
    }

    /// Displacement `u` with `frame_{t2}(x) = frame_{t1}(x + u(x))`.
    pub fn analytic_field(&self, t1: usize, t2: usize) -> Result<DisplacementField<f32>> {
        self.check_index(t1)?;
        self.check_index(t2)?;
        Ok(self.field_between(t1 as f64, t2 as f64))
    }

    fn field_between(&self, t1: f64, t2: f64) -> DisplacementField<f32> {
        let [h, w] = self.grid;
        let (a1, a2) = (self.coeffs(t1), self.coeffs(t2));
        if a1 == a2 {
            return DisplacementField::zeros(&self.grid);
        }
        let identity_source = a1.iter().all(|&a| a == 0.0);
        let mut data = vec![0.0f32; 2 * h * w];
        for r in 0..h {
            for c in 0..w {
                let x = [r as f64, c as f64];
                let d = self.offset(&a2, x);
                let z = [x[0] + d[0], x[1] + d[1]];
                let y = if identity_source { z } else { self.inverse(&a1, z) };
                data[r * w + c] = (y[0] - x[0]) as f32;
                data[h * w + r * w + c] = (y[1] - x[1]) as f32;
            }
        }
        DisplacementField::new(Tensor::new(&[2, h, w], data).expect("field shape")).expect("rank-2 field")
    }

    /// Label of the template at a continuous point (0 = background).
    fn template_label(&self, y: [f64; 2]) -> u32 {
        for (i, s) in self.structures.iter().enumerate() {
            let r = (y[0] - s.center[0]).hypot(y[1] - s.center[1]);
            if r >= s.r_in && r < s.r_out {
                return i as u32 + 1;
            }
        }
        0
    }
}

fn spectral_norm(m: [[f64; 2]; 2]) -> f64 {
    let a = m[0][0] * m[0][0] + m[1][0] * m[1][0];
    let b = m[0][0] * m[0][1] + m[1][0] * m[1][1];
    let d = m[0][1] * m[0][1] + m[1][1] * m[1][1];
    let tr = a + d;
    let disc = ((a - d) * (a - d) + 4.0 * b * b).sqrt();
    (0.5 * (tr + disc)).sqrt()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Band-limited random texture plus bright annuli.
struct Template {
    waves: Vec<([f64; 2], f64, f64)>,
    rings: Vec<(Structure, f64)>,
}

impl Template {
    fn new(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..TEXTURE_WAVES)
            .map(|_| {
                let period: f64 = rng.random_range(8.0..24.0);
                let theta: f64 = rng.random_range(0.0..2.0 * PI);
                let f = [theta.cos() / period, theta.sin() / period];
                let amp = rng.random_range(0.5..1.0) * 0.22 / (TEXTURE_WAVES as f64 / 2.0).sqrt();
                (f, rng.random_range(0.0..2.0 * PI), amp)
            })
            .collect();
        let rings = spec
            .structures
            .iter()
            .map(|s| (s.clone(), rng.random_range(0.28..0.38)))
            .collect();
        Self { waves, rings }
    }

    fn eval(&self, y: [f64; 2]) -> f64 {
        let mut v = 0.45;
        for (f, ph, amp) in &self.waves {
            v += amp * (2.0 * PI * (f[0] * y[0] + f[1] * y[1]) + ph).sin();
        }
        for (s, bright) in &self.rings {
            let r = (y[0] - s.center[0]).hypot(y[1] - s.center[1]);
            // soft edges, width ~1 cell
            v += bright * logistic((r - s.r_in + 0.5) / 0.6) * logistic((s.r_out - 0.5 - r) / 0.6);
        }
        v.clamp(0.0, 1.0)
    }
}

/// One generated sequence with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    /// `[T, H, W]` in `[0, 1]`.
    pub frames: Tensor<f32>,
    /// `[T, H, W]` integer labels.
    pub masks: Tensor<f32>,
    /// `[T−1, 2, H, W]`, transition `t → t+1`.
    pub gt_fields: Tensor<f32>,
    /// `[T, 2, H, W]`, displacement from frame 0 to frame `t`.
    pub gt_lagrangian: Tensor<f32>,
    pub spec: PhantomSpec,
    pub seed: u64,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step_field(&self, t: usize) -> Result<DisplacementField<f32>> {
        DisplacementField::new(self.gt_fields.select(t))
    }

    pub fn lagrangian(&self, t: usize) -> Result<DisplacementField<f32>> {
        DisplacementField::new(self.gt_lagrangian.select(t))
    }

    pub fn mask(&self, t: usize) -> Tensor<f32> {
        self.masks.select(t)
    }
}

/// Generates a sequence; fully determined by `(spec, seed)`.
pub fn generate(spec: &PhantomSpec, seed: u64) -> Result<SequenceSample> {
    spec.validate()?;
    let [h, w] = spec.grid;
    let n = h * w;
    let tex_seed = seed ^ spec.texture_seed.rotate_left(32);
    let mut rng = ChaCha8Rng::seed_from_u64(tex_seed);
    let template = Template::new(spec, &mut rng);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(tex_seed);
    noise_rng.set_stream(1);
    let steps = spec.frames;
    let mut frames = Vec::with_capacity(steps * n);
    let mut masks = Vec::with_capacity(steps * n);
    let mut lagr = Vec::with_capacity(steps * 2 * n);
    for t in 0..steps {
        let a = spec.coeffs(t as f64);
        let mut du = vec![0.0f32; 2 * n];
        for r in 0..h {
            for c in 0..w {
                let x = [r as f64, c as f64];
                let d = spec.offset(&a, x);
                let y = [x[0] + d[0], x[1] + d[1]];
                let mut v = template.eval(y);
                if spec.noise > 0.0 {
                    v += spec.noise * noise_rng.sample::<f64, _>(StandardNormal);
                }
                frames.push(v.clamp(0.0, 1.0) as f32);
                masks.push(spec.template_label(y) as f32);
                du[r * w + c] = d[0] as f32;
                du[n + r * w + c] = d[1] as f32;
            }
        }
        lagr.extend(du);
    }
    let mut steps_data = Vec::with_capacity((steps - 1) * 2 * n);
    for t in 0..steps - 1 {
        steps_data.extend(spec.field_between(t as f64, (t + 1) as f64).into_tensor().into_data());
    }
    Ok(SequenceSample {
        frames: Tensor::new(&[steps, h, w], frames)?,
        masks: Tensor::new(&[steps, h, w], masks)?,
        gt_fields: Tensor::new(&[steps - 1, 2, h, w], steps_data)?,
        gt_lagrangian: Tensor::new(&[steps, 2, h, w], lagr)?,
        spec: spec.clone(),
        seed,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    seed: u64,
    frames: usize,
    spec: PhantomSpec,
}

const FILES: [&str; 4] = ["frames.ndt", "masks.ndt", "gt_fields.ndt", "gt_lagrangian.ndt"];

/// Writes a sequence directory (`manifest.json` plus tensor files).
pub fn save(sample: &SequenceSample, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        format_version: DATASET_VERSION,
        seed: sample.seed,
        frames: sample.len(),
        spec: sample.spec.clone(),
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    let tensors = [&sample.frames, &sample.masks, &sample.gt_fields, &sample.gt_lagrangian];
    for (name, t) in FILES.iter().zip(tensors) {
        ndt::write(dir.join(name), t)?;
    }
    Ok(())
}

/// Reads a sequence directory written by [`save`].
pub fn load(dir: &Path) -> Result<SequenceSample> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if manifest.format_version != DATASET_VERSION {
        return Err(Error::format(&path, format!("unsupported format_version {}", manifest.format_version)));
    }
    let [frames, masks, gt_fields, gt_lagrangian] = FILES.map(|name| ndt::read::<f32>(dir.join(name)));
    let sample = SequenceSample {
        frames: frames?,
        masks: masks?,
        gt_fields: gt_fields?,
        gt_lagrangian: gt_lagrangian?,
        spec: manifest.spec,
        seed: manifest.seed,
    };
    let [h, w] = sample.spec.grid;
    let t = manifest.frames;
    let expect: [(&str, &Tensor<f32>, Vec<usize>); 4] = [
        (FILES[0], &sample.frames, vec![t, h, w]),
        (FILES[1], &sample.masks, vec![t, h, w]),
        (FILES[2], &sample.gt_fields, vec![t - 1, 2, h, w]),
        (FILES[3], &sample.gt_lagrangian, vec![t, 2, h, w]),
    ];
    for (name, tensor, shape) in expect {
        if tensor.shape() != shape.as_slice() {
            return Err(Error::format(dir.join(name), format!("shape {:?}, expected {shape:?}", tensor.shape())));
        }
    }
    Ok(sample)
}

/// Lists sequence directories (those holding a `manifest.json`) under `root`,
/// sorted by name. `root` itself counts if it is a sequence.
pub fn list_sequences(root: &Path) -> Result<Vec<std::path::PathBuf>> {
    if root.join("manifest.json").is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::io(root, e))?.path();
        if p.join("manifest.json").is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::format(root, "no sequence directories found"));
    }
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;
    use crate::warp::{compose, jacobian_stats, sample};

    fn spec(a: f64, noise: f64) -> PhantomSpec {
        PhantomSpec::with_size(64, 16, 20, a, noise)
    }

    #[test]
    fn zero_amplitude_is_static() {
        let s = generate(&spec(0.0, 0.0), 1).unwrap();
        let f0 = s.frames.select(0);
        for t in 1..s.len() {
            assert_eq!(s.frames.select(t), f0);
        }
        assert_eq!(s.gt_fields.max_abs(), 0.0);
        assert_eq!(s.gt_lagrangian.max_abs(), 0.0);
    }

    #[test]
    fn full_cycle_returns_to_start() {
        let s = generate(&spec(0.12, 0.0), 2).unwrap();
        assert!(s.frames.select(16).max_abs_diff(&s.frames.select(0)) < 1e-5);
        assert!(s.gt_lagrangian.select(16).max_abs() < 1e-5);
        let p = spec(0.12, 0.0);
        assert!(p.analytic_field(3, 19).unwrap().tensor().max_abs() < 1e-5);
        assert_eq!(p.analytic_field(5, 5).unwrap().tensor().max_abs(), 0.0);
        assert!(p.analytic_field(0, 20).is_err());
    }

    #[test]
    fn validation() {
        assert!(spec(0.25, 0.0).validate().is_err());
        assert!(spec(-0.01, 0.0).validate().is_err());
        assert!(spec(0.2, 0.0).validate().is_ok());
        assert!(spec(0.2, 0.0).max_grad_norm() < 1.0);
        let mut s = spec(0.1, 0.0);
        s.structures[0].center = [3.0, 30.0];
        assert!(s.validate().is_err());
    }

    #[test]
    fn fields_are_diffeomorphic() {
        let s = generate(&spec(0.2, 0.0), 3).unwrap();
        for t in 0..s.len() - 1 {
            assert_eq!(jacobian_stats(&s.step_field(t).unwrap(), true).unwrap().frac_nonpos, 0.0);
            assert_eq!(jacobian_stats(&s.lagrangian(t).unwrap(), true).unwrap().frac_nonpos, 0.0);
        }
    }

    #[test]
    fn counter_phase_radial_motion() {
        let p = spec(0.12, 0.0);
        let s = generate(&p, 4).unwrap();
        let m0 = s.mask(0);
        let [h, w] = p.grid;
        for t in 1..s.len() {
            let u = s.lagrangian(t).unwrap();
            let mut mean = [0.0f64; 2];
            let mut count = [0usize; 2];
            for r in 0..h {
                for c in 0..w {
                    let l = m0.data()[r * w + c] as usize;
                    if l == 0 {
                        continue;
                    }
                    let st = &p.structures[l - 1];
                    let rel = [r as f64 - st.center[0], c as f64 - st.center[1]];
                    let norm = rel[0].hypot(rel[1]);
                    let v = u.vector(r * w + c);
                    mean[l - 1] += (v[0] as f64 * rel[0] + v[1] as f64 * rel[1]) / norm;
                    count[l - 1] += 1;
                }
            }
            let sine = (2.0 * PI * t as f64 / 16.0).sin();
            if sine.abs() < 1e-9 {
                continue;
            }
            let (r1, r2) = (mean[0] / count[0] as f64, mean[1] / count[1] as f64);
            assert!(r1 * r2 < 0.0, "t={t}: {r1} {r2}");
        }
    }

    #[test]
    fn warped_template_fidelity() {
        let s = generate(&spec(0.12, 0.0), 5).unwrap();
        let f0 = s.frames.select(0);
        for t in 1..s.len() {
            let warped = sample(&f0, &s.lagrangian(t).unwrap()).unwrap();
            let p = psnr(&warped, &s.frames.select(t), 1.0).unwrap();
            assert!(p >= 35.0, "t={t}: {p:.2} dB");
        }
    }

    #[test]
    fn composition_consistency() {
        let p = spec(0.12, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..16 {
            let [t1, t2, t3] = [0; 3].map(|_| rng.random_range(0..p.frames));
            let direct = p.analytic_field(t1, t3).unwrap();
            let composed = compose(&p.analytic_field(t1, t2).unwrap(), &p.analytic_field(t2, t3).unwrap()).unwrap();
            let err = direct.tensor().max_abs_diff(composed.tensor());
            assert!(err < 0.05, "({t1},{t2},{t3}): {err}");
        }
    }

    #[test]
    fn step_fields_match_lagrangian_chain() {
        let p = spec(0.12, 0.0);
        let s = generate(&p, 7).unwrap();
        let mut acc = s.lagrangian(0).unwrap();
        for t in 0..6 {
            acc = compose(&acc, &s.step_field(t).unwrap()).unwrap();
            assert!(acc.tensor().max_abs_diff(s.lagrangian(t + 1).unwrap().tensor()) < 0.05);
        }
    }

    #[test]
    fn deterministic_and_round_trips() {
        let p = spec(0.12, 0.02);
        let a = generate(&p, 9).unwrap();
        let b = generate(&p, 9).unwrap();
        assert_eq!(a, b);
        let c = generate(&p, 10).unwrap();
        assert_ne!(a.frames, c.frames);
        assert_eq!(a.masks, c.masks);
        assert!(a.frames.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let dir = tempfile::tempdir().unwrap();
        save(&a, dir.path()).unwrap();
        assert_eq!(load(dir.path()).unwrap(), a);
        assert_eq!(list_sequences(dir.path()).unwrap().len(), 1);
        std::fs::write(dir.path().join("manifest.json"), "{").unwrap();
        let err = load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("manifest.json"));
    }
}
