//! Worked examples for the tracking metrics, each checked against a hand
//! count or a naive loop.

use gptrack::metrics::{dice, evaluate_tracking, hausdorff, psnr, ssim, SsimOptions, TrackingInput};
use gptrack::phantom::{generate, PhantomSpec};
use gptrack::warp::DisplacementField;
use gptrack::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

use super::rng;

pub fn block(n: usize, r0: usize, c0: usize, size: usize) -> Tensor<f32> {
    Tensor::from_fn(&[n, n], |s| {
        let (r, c) = (s / n, s % n);
        (r >= r0 && r < r0 + size && c >= c0 && c < c0 + size) as u8 as f32
    })
}

fn point(n: usize, r: usize, c: usize) -> Tensor<f32> {
    Tensor::from_fn(&[n, n], |s| (s == r * n + c) as u8 as f32)
}

/// Overlap by explicit counting.
fn dice_oracle(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let (mut i, mut na, mut nb) = (0.0, 0.0, 0.0);
    for k in 0..a.len() {
        let (x, y) = (a.data()[k] == 1.0, b.data()[k] == 1.0);
        na += x as u8 as f64;
        nb += y as u8 as f64;
        i += (x && y) as u8 as f64;
    }
    2.0 * i / (na + nb)
}

/// Max-min distance over every pair of cells of the two sets.
fn hausdorff_oracle(a: &Tensor<f32>, b: &Tensor<f32>, n: usize) -> f64 {
    let pts = |m: &Tensor<f32>| -> Vec<(f64, f64)> {
        (0..m.len()).filter(|&s| m.data()[s] == 1.0).map(|s| ((s / n) as f64, (s % n) as f64)).collect()
    };
    let (pa, pb) = (pts(a), pts(b));
    let directed = |p: &[(f64, f64)], q: &[(f64, f64)]| {
        p.iter()
            .map(|x| q.iter().map(|y| (x.0 - y.0).hypot(x.1 - y.1)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(&pa, &pb).max(directed(&pb, &pa))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Runs every example; returns `(name, passed)` pairs.
pub fn metric_examples() -> Vec<(&'static str, bool)> {
    let mut out = Vec::new();
    let o = SsimOptions::default();

    let a = block(4, 1, 1, 2);
    let shifted = block(4, 1, 2, 2);
    out.push(("dice identical", dice(&a, &a, 1).unwrap() == 1.0));
    out.push(("dice disjoint", dice(&block(6, 0, 0, 2), &block(6, 3, 3, 2), 1).unwrap() == 0.0));
    out.push((
        "dice shifted block",
        dice(&a, &shifted, 1).unwrap() == 0.5 && dice_oracle(&a, &shifted) == 0.5,
    ));
    out.push(("dice both empty", dice(&a, &shifted, 9).unwrap() == 1.0));
    out.push(("dice shape mismatch", dice(&a, &block(5, 0, 0, 1), 1).is_err()));

    let img = Tensor::<f32>::from_fn(&[12, 12], |s| ((s as f32) * 0.37).sin() * 0.4 + 0.5);
    out.push(("psnr identical", psnr(&img, &img, 1.0).unwrap() == f64::INFINITY));
    let offset = img.map(|x| x + 0.1);
    out.push(("psnr mse 0.01", close(psnr(&img, &offset, 1.0).unwrap(), 20.0, 1e-4)));
    let mut r = rng(21);
    let other = Tensor::<f32>::from_fn(&[12, 12], |_| r.random());
    let naive: f64 = (0..img.len())
        .map(|k| (img.data()[k] as f64 - other.data()[k] as f64).powi(2))
        .sum::<f64>()
        / img.len() as f64;
    out.push((
        "psnr naive mse",
        close(psnr(&img, &other, 1.0).unwrap(), 10.0 * (1.0 / naive).log10(), 1e-6),
    ));

    out.push(("ssim identical", close(ssim(&other, &other, &o).unwrap(), 1.0, 1e-12)));
    let checker = Tensor::<f32>::from_fn(&[16, 16], |s| ((s / 16 + s % 16) % 2) as f32);
    out.push(("ssim anticorrelated", ssim(&checker, &checker.map(|x| 1.0 - x), &o).unwrap() < 0.0));
    let flat = Tensor::<f32>::full(&[12, 12], 0.3);
    out.push(("ssim constant", close(ssim(&flat, &flat, &o).unwrap(), 1.0, 1e-12)));
    out.push(("ssim too small", ssim(&Tensor::zeros(&[8, 8]), &Tensor::zeros(&[8, 8]), &o).is_err()));

    let b = block(8, 2, 2, 3);
    out.push(("hausdorff identical", hausdorff(&b, &b, 1).unwrap() == 0.0));
    let (p, q) = (point(8, 0, 0), point(8, 3, 4));
    out.push(("hausdorff points", hausdorff(&p, &q, 1).unwrap() == 5.0));
    let (b1, b2) = (block(10, 2, 2, 2), block(10, 2, 5, 2));
    out.push((
        "hausdorff shifted block",
        hausdorff(&b1, &b2, 1).unwrap() == 3.0 && hausdorff_oracle(&b1, &b2, 10) == 3.0,
    ));
    out.push((
        "hausdorff empty label",
        hausdorff(&b1, &Tensor::zeros(&[10, 10]), 1).map_err(|e| e.to_string()).unwrap_err().contains('1'),
    ));

    out.push(("identity tracking reproduces frame metrics", identity_tracking_matches_direct()));
    let (clean, noisy) = analytic_tracking_dice();
    out.push(("analytic fields track", clean > 0.95));
    out.push(("noisy fields track worse", noisy < clean));
    out
}

/// With identity fields the evaluator must score frame 0 against frame t
/// exactly as the metric functions do directly.
pub fn identity_tracking_matches_direct() -> bool {
    let s = generate(&PhantomSpec::with_size(64, 16, 8, 0.12, 0.02), 5).unwrap();
    let masks: Vec<_> = (0..s.len()).map(|t| Some(s.mask(t))).collect();
    let fields = vec![DisplacementField::zeros(&[64, 64]); s.len()];
    let frames: Vec<usize> = (0..s.len()).collect();
    let rep = evaluate_tracking(&TrackingInput { frames: &s.frames, masks: &masks }, &fields, &frames).unwrap();
    let first = s.frames.select(0);
    rep.frames.iter().all(|m| {
        let t = m.frame;
        let target = s.frames.select(t);
        m.psnr == psnr(&first, &target, 1.0).unwrap()
            && m.ssim == ssim(&first, &target, &SsimOptions::default()).unwrap()
            && m.dice.iter().all(|(&l, &d)| d == dice(&s.mask(0), &s.mask(t), l).unwrap())
            && m.hausdorff.iter().all(|(&l, &h)| h == hausdorff(&s.mask(0), &s.mask(t), l).unwrap())
            && m.jacobian.frac_nonpos == 0.0
            && m.jacobian.mean_abs_dev == 0.0
    })
}

/// Mean Dice over the sequence when the tracker outputs the true fields, and
/// when those fields carry cell-wise Gaussian noise of 0.5 cells. The grid is
/// 128² so the rings are thick enough that nearest-label rounding on their
/// edges stays a small fraction of their area.
pub fn analytic_tracking_dice() -> (f64, f64) {
    let s = generate(&PhantomSpec::with_size(128, 16, 16, 0.12, 0.0), 6).unwrap();
    let masks: Vec<_> = (0..s.len()).map(|t| Some(s.mask(t))).collect();
    let frames: Vec<usize> = (1..s.len()).collect();
    let input = TrackingInput { frames: &s.frames, masks: &masks };
    let truth: Vec<_> = (0..s.len()).map(|t| s.lagrangian(t).unwrap()).collect();
    let mut r = rng(22);
    let noisy: Vec<_> = truth
        .iter()
        .map(|u| {
            let t = Tensor::from_fn(u.tensor().shape(), |k| u.tensor().data()[k] + 0.5 * r.sample::<f32, _>(StandardNormal));
            DisplacementField::new(t).unwrap()
        })
        .collect();
    let clean = evaluate_tracking(&input, &truth, &frames).unwrap().mean_dice;
    let noisy = evaluate_tracking(&input, &noisy, &frames).unwrap().mean_dice;
    (clean, noisy)
}
