//! Integration and composition properties of diffeomorphic warps on smooth
//! random velocity fields, checked against a fine Euler integrator.

mod common;

use common::{euler_flow, interior, smooth_velocity};
use gptrack::warp::{compose, integrate_velocity, jacobian_stats, sample, DisplacementField, VelocityField, DEFAULT_STEPS};
use gptrack::Tensor;

const N: usize = 64;
const FIELDS: u64 = 20;

fn max_norm(u: &DisplacementField<f64>, cells: impl Iterator<Item = usize>) -> f64 {
    cells
        .map(|s| {
            let v = u.vector(s);
            v[0].hypot(v[1])
        })
        .fold(0.0, f64::max)
}

/// Largest endpoint error of scaling and squaring against Euler.
fn integration_error(seed: u64) -> f64 {
    let v = smooth_velocity(N, 2.0, seed);
    let u = integrate_velocity(&v, DEFAULT_STEPS).unwrap();
    let oracle = euler_flow(&v, 1024);
    (0..N * N)
        .map(|s| {
            let a = u.vector(s);
            (a[0] - oracle[s][0]).hypot(a[1] - oracle[s][1])
        })
        .fold(0.0, f64::max)
}

#[test]
fn scaling_and_squaring_matches_euler() {
    for seed in 0..FIELDS {
        let err = integration_error(seed);
        assert!(err < 1e-2, "field {seed}: {err}");
    }
}

#[test]
fn integrated_fields_do_not_fold() {
    for seed in 0..FIELDS {
        let v = smooth_velocity(N, 2.0, seed);
        let u = integrate_velocity(&v, DEFAULT_STEPS).unwrap();
        let stats = jacobian_stats(&u, true).unwrap();
        assert_eq!(stats.frac_nonpos, 0.0, "field {seed}");
    }
}

#[test]
fn forward_and_reverse_flows_cancel() {
    for seed in 0..FIELDS {
        let v = smooth_velocity(N, 2.0, seed);
        let fwd = integrate_velocity(&v, DEFAULT_STEPS).unwrap();
        let back = integrate_velocity(&v.negate(), DEFAULT_STEPS).unwrap();
        let round = compose(&fwd, &back).unwrap();
        let err = max_norm(&round, interior(N, 1));
        assert!(err < 0.05, "field {seed}: {err}");
    }
}

#[test]
fn halving_the_velocity_and_composing_twice_agrees() {
    for seed in 0..5 {
        let v = smooth_velocity(N, 2.0, seed);
        let full = integrate_velocity(&v, DEFAULT_STEPS).unwrap();
        let half = integrate_velocity(&v.scale(0.5), DEFAULT_STEPS).unwrap();
        let twice = compose(&half, &half).unwrap();
        let err = full.tensor().max_abs_diff(twice.tensor());
        assert!(err < 1e-3, "field {seed}: {err}");
    }
}

#[test]
fn sampling_is_exact_on_affine_images() {
    let v = smooth_velocity(N, 2.0, 99);
    let u = integrate_velocity(&v, DEFAULT_STEPS).unwrap();
    let (a, b, c) = (0.3, -0.7, 2.0);
    let img = Tensor::from_fn(&[N, N], |s| a * (s / N) as f64 + b * (s % N) as f64 + c);
    let warped = sample(&img, &u).unwrap();
    let m = (N - 1) as f64;
    for s in 0..N * N {
        let d = u.vector(s);
        let (y, x) = ((s / N) as f64 + d[0], (s % N) as f64 + d[1]);
        let expect = a * y.clamp(0.0, m) + b * x.clamp(0.0, m) + c;
        assert!((warped.data()[s] - expect).abs() < 1e-9, "cell {s}");
    }
    let zero = sample(&img, &DisplacementField::zeros(&[N, N])).unwrap();
    assert_eq!(zero.data(), img.data());
}

#[test]
fn constant_velocity_is_a_translation() {
    let v: VelocityField<f64> = VelocityField::new(Tensor::from_fn(&[2, N, N], |s| if s < N * N { 0.75 } else { -0.4 })).unwrap();
    let u = integrate_velocity(&v, DEFAULT_STEPS).unwrap();
    for s in interior(N, 2) {
        let d = u.vector(s);
        assert!((d[0] - 0.75).abs() < 1e-12 && (d[1] + 0.4).abs() < 1e-12);
    }
}
