//! Shared helpers for the integration tests.
#![allow(dead_code)]

pub mod conformance;

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use gptrack::warp::VelocityField;
use gptrack::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smooth random velocity on an `n × n` grid: per component, four plane
/// waves of at most one cycle across the grid under a `sin(πy)sin(πx)`
/// window that vanishes on the border, rescaled so the largest vector norm is
/// `peak` cells. The window keeps every trajectory on the grid.
pub fn smooth_velocity(n: usize, peak: f64, seed: u64) -> VelocityField<f64> {
    smooth_velocity_with(n, peak, 1.0, seed)
}

pub fn smooth_velocity_with(n: usize, peak: f64, cycles: f64, seed: u64) -> VelocityField<f64> {
    let mut r = rng(seed);
    let mut comps = Vec::new();
    for _ in 0..2 {
        let waves: Vec<[f64; 4]> = (0..4)
            .map(|_| {
                [
                    r.random_range(-1.0..1.0),
                    r.random_range(-cycles..=cycles).round(),
                    r.random_range(-cycles..=cycles).round(),
                    r.random_range(0.0..TAU),
                ]
            })
            .collect();
        comps.push(waves);
    }
    let len = (n - 1) as f64;
    let mut data = vec![0.0; 2 * n * n];
    for (k, waves) in comps.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                let (y, x) = (i as f64 / len, j as f64 / len);
                let window = (PI * y).sin() * (PI * x).sin();
                data[k * n * n + i * n + j] = window
                    * waves
                        .iter()
                        .map(|[a, fy, fx, ph]| a * (TAU * (fy * y + fx * x) + ph).sin())
                        .sum::<f64>();
            }
        }
    }
    let max = (0..n * n)
        .map(|s| data[s].hypot(data[n * n + s]))
        .fold(0.0, f64::max);
    let scale = peak / max;
    VelocityField::new(Tensor::new(&[2, n, n], data.into_iter().map(|x| x * scale).collect()).unwrap()).unwrap()
}

/// Bilinear value of an `n × n` plane at `(y, x)` with clamp-to-edge.
pub fn bilinear(plane: &[f64], n: usize, y: f64, x: f64) -> f64 {
    let m = (n - 1) as f64;
    let (y, x) = (y.clamp(0.0, m), x.clamp(0.0, m));
    let (i0, j0) = ((y.floor() as usize).min(n - 2), (x.floor() as usize).min(n - 2));
    let (wy, wx) = (y - i0 as f64, x - j0 as f64);
    let at = |i: usize, j: usize| plane[i * n + j];
    (1.0 - wy) * ((1.0 - wx) * at(i0, j0) + wx * at(i0, j0 + 1)) + wy * ((1.0 - wx) * at(i0 + 1, j0) + wx * at(i0 + 1, j0 + 1))
}

/// Endpoint displacement of `dφ/dt = v(φ)` over unit time by forward Euler.
pub fn euler_flow(v: &VelocityField<f64>, steps: usize) -> Vec<[f64; 2]> {
    let n = v.spatial()[0];
    let d = v.tensor().data();
    let (vy, vx) = (&d[..n * n], &d[n * n..]);
    let dt = 1.0 / steps as f64;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (mut y, mut x) = (i as f64, j as f64);
            for _ in 0..steps {
                let (dy, dx) = (bilinear(vy, n, y, x), bilinear(vx, n, y, x));
                y += dt * dy;
                x += dt * dx;
            }
            out.push([y - i as f64, x - j as f64]);
        }
    }
    out
}

/// Cells at least `margin` away from every edge of an `n × n` grid.
pub fn interior(n: usize, margin: usize) -> impl Iterator<Item = usize> {
    (margin..n - margin).flat_map(move |i| (margin..n - margin).map(move |j| i * n + j))
}

/// Fastest of `repeats` runs of `f`, in seconds; the minimum filters out
/// scheduler and allocator noise on a shared machine.
pub fn min_seconds(repeats: usize, mut f: impl FnMut()) -> f64 {
    let mut t: Vec<f64> = (0..repeats)
        .map(|_| {
            let s = Instant::now();
            f();
            s.elapsed().as_secs_f64()
        })
        .collect();
    t.sort_by(f64::total_cmp);
    t[0]
}
