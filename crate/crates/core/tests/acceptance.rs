//! End-to-end acceptance suite. Each test prints one PASS/FAIL line to
//! stderr (uncaptured, so it shows without `--nocapture`) and then asserts.
//!
//! The two tracking criteria train 12 models from scratch and take about an
//! hour on one core.

mod common;

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use common::conformance::{identity_tracking_matches_direct, metric_examples};
use common::{euler_flow, interior, min_seconds, rng, smooth_velocity};
use gptrack::benchmark::{Benchmark, BenchmarkResult};
use gptrack::checks::{end_to_end_gradient, gp_equivalence, primitive_gradients, END_TO_END_TOL, GP_TOL, PRIMITIVE_TOL};
use gptrack::gp::{kalman_filter, MaternHyper};
use gptrack::trainer::TrainConfig;
use gptrack::warp::{compose, integrate_velocity, jacobian_stats, DEFAULT_STEPS};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

const N: usize = 64;
const FIELDS: u64 = 20;

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[{verdict}] {id}. {name}: {detail}");
    assert!(pass, "{id}. {name}: {detail}");
}

#[test]
fn c1_gp_equivalence() {
    let r = gp_equivalence(100, 2024).unwrap();
    let pass = r.passes() && r.seconds < 10.0;
    report(
        1,
        "Kalman means match dense GP posterior",
        pass,
        format!("max rel err {:.2e} (< {GP_TOL:.0e}) over {} draws in {:.2}s (< 10s)", r.max_rel_err, r.draws, r.seconds),
    );
}

#[test]
fn c2_linear_scaling() {
    let start = Instant::now();
    let mut r = rng(13);
    let hp = MaternHyper::new(1.0, 2.0, 0.1).unwrap();
    let obs: Vec<f64> = (0..4096).map(|_| r.sample(StandardNormal)).collect();
    let deltas: Vec<f64> = (1..4096).map(|_| r.random_range(0.01..3.0)).collect();
    let time = |t: usize| {
        min_seconds(30, || {
            std::hint::black_box(kalman_filter(&obs[..t], &deltas[..t - 1], &hp).unwrap());
        })
    };
    time(1024);
    let (short, long) = (time(1024), time(4096));
    let ratio = long / short;
    let secs = start.elapsed().as_secs_f64();
    report(
        2,
        "Kalman filter cost is linear in length",
        (3.0..=6.0).contains(&ratio) && secs < 30.0,
        format!("T=4096 / T=1024 time ratio {ratio:.2} (in [3, 6]); {:.3} ms vs {:.3} ms; {secs:.1}s", long * 1e3, short * 1e3),
    );
}

#[test]
fn c3_integration_fidelity() {
    let start = Instant::now();
    let worst = (0..FIELDS)
        .map(|seed| {
            let v = smooth_velocity(N, 2.0, seed);
            let u = integrate_velocity(&v, DEFAULT_STEPS).unwrap();
            let oracle = euler_flow(&v, 1024);
            (0..N * N)
                .map(|s| {
                    let a = u.vector(s);
                    (a[0] - oracle[s][0]).hypot(a[1] - oracle[s][1])
                })
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    report(
        3,
        "scaling and squaring matches 1024-step Euler",
        worst < 1e-2 && secs < 20.0,
        format!("worst endpoint error {worst:.2e} cells (< 1e-2) over {FIELDS} fields on {N}²; {secs:.1}s"),
    );
}

#[test]
fn c4_diffeomorphism_invariants() {
    let (mut folded, mut inverse) = (0.0f64, 0.0f64);
    for seed in 0..FIELDS {
        let v = smooth_velocity(N, 2.0, seed);
        let fwd = integrate_velocity(&v, DEFAULT_STEPS).unwrap();
        let back = integrate_velocity(&v.negate(), DEFAULT_STEPS).unwrap();
        folded = folded.max(jacobian_stats(&fwd, true).unwrap().frac_nonpos);
        let round = compose(&fwd, &back).unwrap();
        let err = interior(N, 1)
            .map(|s| {
                let d = round.vector(s);
                d[0].hypot(d[1])
            })
            .fold(0.0, f64::max);
        inverse = inverse.max(err);
    }
    report(
        4,
        "integrated fields are invertible without folding",
        folded == 0.0 && inverse < 0.05,
        format!("largest folded fraction {folded} (== 0), worst inverse-consistency {inverse:.2e} cells (< 0.05)"),
    );
}

#[test]
fn c5_gradient_suite() {
    let start = Instant::now();
    let prims = primitive_gradients(7).unwrap();
    let worst_prim = prims.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let prims_ok = prims.iter().all(|r| r.passes(PRIMITIVE_TOL) && r.checked > 0);
    let e2e = end_to_end_gradient(0, 8).unwrap();
    let secs = start.elapsed().as_secs_f64();
    report(
        5,
        "finite differences agree with the tape",
        prims_ok && e2e.passes(END_TO_END_TOL) && secs < 60.0,
        format!(
            "{} primitive/loss checks, worst {worst_prim:.2e} (< {PRIMITIVE_TOL:.0e}); end-to-end {:.2e} (< {END_TO_END_TOL:.0e}); {secs:.1}s",
            prims.len(),
            e2e.max_rel_err
        ),
    );
}

/// The default model on seed 0, shared by the tracking and ablation checks.
fn full_model_seed0() -> &'static BenchmarkResult {
    static RUN: OnceLock<BenchmarkResult> = OnceLock::new();
    RUN.get_or_init(|| Benchmark::default().run(&TrainConfig::default()).unwrap())
}

#[test]
fn c6_phantom_tracking() {
    let r = full_model_seed0();
    let pass = r.mean_dice >= 0.85 && r.frac_nonpos < 0.005 && r.seconds <= 1800.0;
    report(
        6,
        "trained default model tracks held-out phantoms",
        pass,
        format!(
            "mean Dice {:.4} (>= 0.85, identity {:.4}), folded fraction {:.5} (< 0.005), {} epochs in {:.0}s (<= 1800s)",
            r.mean_dice, r.identity_dice, r.frac_nonpos, r.epochs, r.seconds
        ),
    );
}

/// Training lowers the mean total loss over the training set by at least 30%.
#[test]
fn training_reduces_the_loss() {
    let r = full_model_seed0();
    assert!(r.loss_reduction() >= 0.3, "loss {} -> {} ({:.1}%)", r.initial_loss, r.final_loss, 100.0 * r.loss_reduction());
}

/// Tracked fields stay within half the peak motion of the smallest structure.
#[test]
fn tracked_motion_is_close_to_truth() {
    let r = full_model_seed0();
    let bound = Benchmark::default().endpoint_bound();
    assert!(r.endpoint_error < bound, "endpoint error {} vs {bound}", r.endpoint_error);
}

#[test]
fn c7_ablation_ordering() {
    let bench = Benchmark::default();
    let flags = [(true, true), (true, false), (false, true), (false, false)];
    let configs: Vec<TrainConfig> = (0..3u64)
        .flat_map(|seed| flags.iter().map(move |&(gp, bidirectional)| TrainConfig { seed, gp, bidirectional, ..TrainConfig::default() }))
        .filter(|c| !(c.seed == 0 && c.gp && c.bidirectional))
        .collect();
    let mut runs: Vec<BenchmarkResult> = configs.par_iter().map(|c| bench.run(c).unwrap()).collect();
    runs.push(full_model_seed0().clone());
    let mean = |gp: bool, bi: bool| {
        let d: Vec<f64> = runs.iter().filter(|r| r.gp == gp && r.bidirectional == bi).map(|r| r.mean_dice).collect();
        d.iter().sum::<f64>() / d.len() as f64
    };
    let [full, gp_only, bi_only, base] = flags.map(|(g, b)| mean(g, b));
    let secs: f64 = runs.iter().map(|r| r.seconds).sum();
    report(
        7,
        "GP prior and bidirectional features both help",
        full > base && full >= gp_only && full >= bi_only && secs <= 7200.0,
        format!("mean Dice over 3 seeds: full {full:.4}, GP only {gp_only:.4}, bidirectional only {bi_only:.4}, neither {base:.4}; {secs:.0}s training"),
    );
}

#[test]
fn c8_metric_conformance() {
    let examples = metric_examples();
    let failed: Vec<_> = examples.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let identity = identity_tracking_matches_direct();
    report(
        8,
        "metrics match worked examples and direct evaluation",
        failed.is_empty() && identity,
        format!("{}/{} examples pass {failed:?}; identity tracking reproduces direct metrics: {identity}", examples.len() - failed.len(), examples.len()),
    );
}
