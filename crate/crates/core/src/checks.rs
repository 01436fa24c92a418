//! Self-checks shared by the CLI and the test suite: Kalman-vs-dense GP
//! equivalence and finite-difference gradient checks of every differentiable
//! operation, loss term and the full network.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::gp::{dense_filtering_means, filter_latent, kalman_filter, FilterOptions, GpVars, MaternHyper};
use crate::losses::{box_sum, kl_loss, ncc_loss, smoothness_loss, total_loss, LossOptions};
use crate::net::{
    cell_step, depthwise_smooth, linear_attention, patch_embed, positional_encoding, CellParams, NetConfig, ParamStore, PatchGrid,
    TrackNet,
};
use crate::phantom::{generate, PhantomSpec};
use crate::tensor::gradcheck::{check, CheckOptions, GradReport};
use crate::tensor::{Tape, Tensor, Var};
use crate::warp::{compose_var, integrate_var, sample_var};

pub const PRIMITIVE_TOL: f64 = 1e-4;
pub const END_TO_END_TOL: f64 = 1e-3;
pub const GP_TOL: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct GpEquivalence {
    pub draws: usize,
    pub max_rel_err: f64,
    pub seconds: f64,
}

impl GpEquivalence {
    pub fn passes(&self) -> bool {
        self.max_rel_err < GP_TOL
    }
}

/// Compares Kalman-filtered means with the dense Cholesky filtering
/// posterior on random sequences (`T ≤ 16`) and hyperparameters. The error
/// of one draw is `max_t |kf_t − dense_t| / max_t |dense_t|`.
pub fn gp_equivalence(draws: usize, seed: u64) -> Result<GpEquivalence> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let t = rng.random_range(1..=16);
        let noise = 10f64.powf(rng.random_range(-3.0..=0.0));
        let hp = MaternHyper::new(rng.random_range(0.5..=2.0), rng.random_range(0.5..=4.0), noise)?;
        let obs: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
        let deltas: Vec<f64> = (1..t).map(|_| rng.random_range(0.05..2.0)).collect();
        let kf: Vec<f64> = kalman_filter(&obs, &deltas, &hp)?.iter().map(|s| s.filtered.mean[0]).collect();
        let dense = dense_filtering_means(&obs, &deltas, &hp)?;
        let scale = dense.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
        let err = kf.iter().zip(&dense).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        worst = worst.max(err);
    }
    Ok(GpEquivalence {
        draws,
        max_rel_err: worst,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

/// Values with magnitude in `[0.2, 1.5]` and random sign (away from kinks).
fn away(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.random_range(0.2..1.5);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Scalar `Σ y ⊙ R` for a fixed random `R`, so every output element matters.
fn project(y: &Var<f64>, seed: u64) -> Result<Var<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let r = y.tape().constant(&normal(&mut rng, y.shape()));
    Ok(y.mul(&r)?.sum())
}

type Case = (&'static str, Vec<Tensor<f64>>, f64, Box<dyn Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>>);

fn cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let smooth_h = 1e-5;
    // sampling has kinks at integer coordinates; a tiny step rarely crosses one
    let warp_h = 1e-6;
    let mut v: Vec<Case> = Vec::new();
    macro_rules! case {
        ($name:expr, [$($input:expr),*], $h:expr, $f:expr) => {
            v.push(($name, vec![$($input),*], $h, Box::new($f)));
        };
    }
    case!("add_broadcast", [normal(rng, &[3, 4]), normal(rng, &[4])], smooth_h, |_, x| project(&x[0].add(&x[1])?, 1));
    case!("sub", [normal(rng, &[3, 4]), normal(rng, &[3, 4])], smooth_h, |_, x| project(&x[0].sub(&x[1])?, 2));
    case!("mul_broadcast", [normal(rng, &[2, 3, 4]), normal(rng, &[3, 1])], smooth_h, |_, x| project(&x[0].mul(&x[1])?, 3));
    case!("div", [normal(rng, &[3, 4]), away(rng, &[3, 4])], smooth_h, |_, x| project(&x[0].div(&x[1])?, 4));
    case!("neg", [normal(rng, &[5])], smooth_h, |_, x| project(&x[0].neg(), 5));
    case!("exp", [normal(rng, &[5])], smooth_h, |_, x| project(&x[0].exp(), 6));
    case!("ln", [uniform(rng, &[5], 0.3, 3.0)], smooth_h, |_, x| project(&x[0].ln(), 7));
    case!("sqrt", [uniform(rng, &[5], 0.3, 3.0)], smooth_h, |_, x| project(&x[0].sqrt(), 8));
    case!("square", [normal(rng, &[5])], smooth_h, |_, x| project(&x[0].square(), 9));
    case!("relu", [away(rng, &[8])], smooth_h, |_, x| project(&x[0].relu(), 10));
    case!("elu", [away(rng, &[8])], smooth_h, |_, x| project(&x[0].elu(), 11));
    case!("softplus", [normal(rng, &[8])], smooth_h, |_, x| project(&x[0].softplus(), 12));
    case!("sigmoid", [normal(rng, &[8])], smooth_h, |_, x| project(&x[0].sigmoid(), 13));
    case!("scale_shift", [normal(rng, &[6])], smooth_h, |_, x| project(&x[0].scale(-1.7).shift(0.3), 14));
    case!("clamp", [away(rng, &[8])], smooth_h, |_, x| project(&x[0].clamp(-1.0, 1.0), 15));
    case!("sum_mean", [normal(rng, &[3, 4])], smooth_h, |_, x| x[0].sum().mul(&x[0].mean()));
    case!("sum_last", [normal(rng, &[3, 4])], smooth_h, |_, x| project(&x[0].sum_last(), 16));
    case!("reshape_transpose", [normal(rng, &[3, 4])], smooth_h, |_, x| project(&x[0].reshape(&[4, 3])?.transpose()?, 17));
    case!("matmul", [normal(rng, &[3, 4]), normal(rng, &[4, 5])], smooth_h, |_, x| project(&x[0].matmul(&x[1])?, 18));
    case!("matmul_batched", [normal(rng, &[2, 3, 4]), normal(rng, &[4, 2])], smooth_h, |_, x| project(&x[0].matmul(&x[1])?, 19));
    case!("concat_last", [normal(rng, &[3, 2]), normal(rng, &[3, 4])], smooth_h, |_, x| {
        project(&Var::concat_last(&[&x[0], &x[1]])?, 20)
    });
    case!("stack_select", [normal(rng, &[3, 4]), normal(rng, &[3, 4])], smooth_h, |_, x| {
        let s = Var::stack(&[&x[0], &x[1]])?;
        project(&s.select(1)?.mul(&s.select(0)?)?, 21)
    });
    case!("layer_norm", [normal(rng, &[4, 6]), normal(rng, &[6]), normal(rng, &[6])], smooth_h, |_, x| {
        project(&x[0].layer_norm(&x[1], &x[2], 1e-5)?, 22)
    });
    case!("sample_2d", [normal(rng, &[9, 9]), uniform(rng, &[2, 9, 9], -2.0, 2.0)], warp_h, |_, x| {
        project(&sample_var(&x[0], &x[1])?, 23)
    });
    case!("sample_2d_channels", [normal(rng, &[2, 7, 8]), uniform(rng, &[2, 7, 8], -1.5, 1.5)], warp_h, |_, x| {
        project(&sample_var(&x[0], &x[1])?, 24)
    });
    case!("sample_3d", [normal(rng, &[5, 5, 5]), uniform(rng, &[3, 5, 5, 5], -1.0, 1.0)], warp_h, |_, x| {
        project(&sample_var(&x[0], &x[1])?, 25)
    });
    case!("compose", [uniform(rng, &[2, 8, 8], -1.5, 1.5), uniform(rng, &[2, 8, 8], -1.5, 1.5)], warp_h, |_, x| {
        project(&compose_var(&x[0], &x[1])?, 26)
    });
    case!("integrate", [uniform(rng, &[2, 8, 8], -1.0, 1.0)], warp_h, |_, x| project(&integrate_var(&x[0], 7)?, 27));
    case!("box_sum", [normal(rng, &[2, 7, 9])], smooth_h, |_, x| project(&box_sum(&x[0], &[7, 9], 2)?, 28));
    let grid = PatchGrid::new(&[8, 8], 4).expect("valid grid");
    let g1 = grid.clone();
    case!("depthwise_smooth", [normal(rng, &[2, 8, 8]), normal(rng, &[2, 9])], smooth_h, move |_, x| {
        project(&depthwise_smooth(&x[0], &x[1], &g1)?, 29)
    });
    let g2 = grid.clone();
    case!("patchify_unpatchify", [normal(rng, &[2, 8, 8]), normal(rng, &[4, 32])], smooth_h, move |_, x| {
        let p = g2.patchify(&x[0])?;
        project(&p.add(&g2.unpatchify(&x[1], 2)?.reshape(&[2, 4, 16])?)?, 30)
    });
    case!("patch_embed", [normal(rng, &[2, 4, 16]), normal(rng, &[16, 6]), normal(rng, &[6])], smooth_h, |_, x| {
        project(&patch_embed(&x[0], &x[1], &x[2])?, 31)
    });
    case!("positional_encoding", [normal(rng, &[4, 6])], smooth_h, |_, x| {
        project(&positional_encoding(&x[0], 3, 100.0)?, 32)
    });
    case!(
        "linear_attention",
        [normal(rng, &[5, 8]), normal(rng, &[8, 4]), normal(rng, &[8, 4]), normal(rng, &[8, 4])],
        smooth_h,
        |_, x| project(&linear_attention(&x[0], &x[1], &x[2], &x[3])?, 33)
    );
    let c = 4;
    let mut store = ParamStore::<f64>::new();
    CellParams::init(&mut store, "cell", c, rng).expect("cell init");
    let mut cell_inputs = vec![normal(rng, &[3, c]), normal(rng, &[3, c]), normal(rng, &[3, c])];
    for t in store.tensors() {
        cell_inputs.push(Tensor::from_fn(t.shape(), |i| t.data()[i] + 0.1 * rng.sample::<f64, _>(StandardNormal)));
    }
    v.push((
        "cell_step",
        cell_inputs,
        smooth_h,
        Box::new(move |_, x| {
            let bound = store.bind_vars(&x[3..])?;
            let p = CellParams::bind(&bound, "cell")?;
            let (f, h) = cell_step(&x[0], &x[1], &x[2], &p)?;
            project(&f, 34)?.add(&project(&h, 35)?)
        }),
    ));
    case!(
        "gp_filter",
        [normal(rng, &[4, 3, 2]), uniform(rng, &[3, 3], 0.2, 1.5), normal(rng, &[2]), normal(rng, &[2]), normal(rng, &[2])],
        smooth_h,
        |_, x| {
            let (s, l, n) = (x[2].softplus(), x[3].softplus(), x[4].softplus());
            let hp = GpVars { sigma: &s, ell: &l, noise: &n };
            project(&filter_latent(&x[0], Some(&x[1]), &hp, FilterOptions::default())?, 36)
        }
    );
    case!("kl_loss", [normal(rng, &[2, 4, 4]), uniform(rng, &[2, 4, 4], -3.0, 1.0)], smooth_h, |_, x| {
        kl_loss(&[(&x[0], &x[1])])
    });
    case!("ncc_loss", [uniform(rng, &[12, 12], 0.0, 1.0), uniform(rng, &[12, 12], 0.0, 1.0)], smooth_h, |_, x| {
        ncc_loss(&x[0], &x[1], 9)
    });
    case!("smoothness_loss", [normal(rng, &[2, 6, 7])], smooth_h, |_, x| smoothness_loss(&x[0]));
    v
}

/// Checks every primitive, custom operation and loss term.
pub fn primitive_gradients(seed: u64) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, inputs, h, f) in cases(&mut rng) {
        let opts = CheckOptions {
            h,
            floor: 1e-6,
            per_input: Some(24),
            ..Default::default()
        };
        out.push(check(name, &inputs, opts, &mut rng, |t, x| f(t, x))?);
    }
    Ok(out)
}

/// Full network plus loss on a 16², `T = 3`, patch 8, `C = 8` instance.
pub fn end_to_end_gradient(seed: u64, per_input: usize) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = TrackNet::new(NetConfig {
        frame: vec![16, 16],
        patch: 8,
        channels: 8,
        layers: 1,
        logvar_init: -3.0,
        sample_velocity: true,
        ..Default::default()
    })?;
    let mut store = net.init_params::<f64, _>(&mut rng)?;
    // the mean heads start at zero; perturb everything so all paths carry gradient
    for t in store.tensors_mut() {
        for x in t.data_mut() {
            *x += 0.05 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let spec = PhantomSpec::with_size(16, 8, 3, 0.12, 0.02);
    let frames: Tensor<f64> = generate(&spec, seed)?.frames.cast();
    let noise_seed: u64 = rng.random();
    let opts = LossOptions::default();
    let inputs: Vec<Tensor<f64>> = store.tensors().to_vec();
    // The loss is O(10) with the default weights, so steps below 1e-5 lose
    // digits to rounding, while warps and ReLUs put kinks within 1e-4 of
    // some parameters.
    let co = CheckOptions {
        h: 1e-4,
        floor: 1e-6,
        per_input: Some(per_input),
        extra_steps: &[1e-3, 1e-5, 1e-6],
    };
    check("end_to_end", &inputs, co, &mut rng, |tape, vars| {
        let bound = store.bind_vars(vars)?;
        let x = tape.constant(&frames);
        let mut eps = ChaCha8Rng::seed_from_u64(noise_seed);
        let out = net.forward(&bound, &x, Some(&mut eps))?;
        Ok(total_loss(&x, &out, &opts)?.total)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gp_equivalence_small() {
        let r = gp_equivalence(10, 1).unwrap();
        assert!(r.passes(), "{r:?}");
    }

    #[test]
    fn primitives_pass() {
        for r in primitive_gradients(2).unwrap() {
            assert!(r.passes(PRIMITIVE_TOL), "{}: {:.3e}", r.name, r.max_rel_err);
        }
    }
}
