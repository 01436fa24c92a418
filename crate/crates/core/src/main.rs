//! `gptrack` command line: phantom generation, training, tracking,
//! evaluation and the self-checks.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use gptrack::checks::{end_to_end_gradient, gp_equivalence, primitive_gradients, END_TO_END_TOL, PRIMITIVE_TOL};
use gptrack::metrics::{evaluate_tracking, TrackingInput, TrackingReport};
use gptrack::phantom::{self, generate, PhantomSpec};
use gptrack::tensor::{ndt, Tensor};
use gptrack::trainer::{self, load_model, TrainConfig};
use gptrack::warp::{sample_nearest, write_field, DisplacementField, FieldKind, FieldMeta};

#[derive(Parser)]
#[command(name = "gptrack", version, about = "Unsupervised sequential motion tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic phantom sequences.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 16)]
        period: usize,
        #[arg(long, default_value_t = 32)]
        frames: usize,
        #[arg(long, default_value_t = 0.12)]
        amplitude: f64,
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on a directory of sequences.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// TOML configuration; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Overrides `epochs` from the configuration.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Track one sequence with a trained checkpoint.
    Track {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score tracked fields against ground-truth masks; writes a JSON report
    /// and a one-row CSV with the same stem.
    Eval {
        /// Output directory of `track`.
        #[arg(long)]
        pred: PathBuf,
        /// Sequence directory with ground truth.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Frames to score (default: all but the first).
        #[arg(long, value_delimiter = ',')]
        frames: Option<Vec<usize>>,
    },
    /// Kalman filter vs dense GP posterior on random draws.
    GpCheck {
        #[arg(long, default_value_t = 100)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference gradient suite.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Parameter elements checked per tensor in the end-to-end check.
        #[arg(long, default_value_t = 4)]
        per_input: usize,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen {
            out,
            count,
            size,
            period,
            frames,
            amplitude,
            noise,
            seed,
        } => {
            let spec = PhantomSpec::with_size(size, period, frames, amplitude, noise);
            spec.validate()?;
            (0..count).into_par_iter().try_for_each(|i| -> Result<()> {
                let s = generate(&spec, seed + i as u64)?;
                phantom::save(&s, &out.join(format!("seq_{i:03}")))?;
                Ok(())
            })?;
            println!("wrote {count} sequences to {}", out.display());
        }
        Command::Train {
            data,
            config,
            out,
            seed,
            epochs,
        } => {
            let mut cfg = match &config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::default(),
            };
            cfg.seed = seed;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.validate()?;
            let t = trainer::train(&data, &cfg, &out, |r| {
                let [a, b, c, d, total] = r.terms;
                println!("epoch {:4}  a {a:.4}  b {b:.4}  c {c:.4}  d {d:.4}  total {total:.4}", r.epoch);
            })?;
            println!("checkpoint at epoch {} in {}", t.epoch, out.display());
        }
        Command::Track { ckpt, seq, out } => track(&ckpt, &seq, &out)?,
        Command::Eval {
            pred,
            gt,
            report,
            frames,
        } => eval(&pred, &gt, &report, frames)?,
        Command::GpCheck { draws, seed } => {
            let r = gp_equivalence(draws, seed)?;
            println!(
                "gp-check: {} draws, max relative error {:.3e}, {:.2}s: {}",
                r.draws,
                r.max_rel_err,
                r.seconds,
                if r.passes() { "PASS" } else { "FAIL" }
            );
            if !r.passes() {
                bail!("Kalman and dense posteriors disagree");
            }
        }
        Command::GradCheck { seed, per_input } => {
            let mut ok = true;
            for r in primitive_gradients(seed)? {
                let pass = r.passes(PRIMITIVE_TOL);
                ok &= pass;
                println!("{:24} {:>5} elements  max rel err {:.3e}  {}", r.name, r.checked, r.max_rel_err, verdict(pass));
            }
            let r = end_to_end_gradient(seed, per_input)?;
            let pass = r.passes(END_TO_END_TOL);
            ok &= pass;
            println!("{:24} {:>5} elements  max rel err {:.3e}  {}", r.name, r.checked, r.max_rel_err, verdict(pass));
            if !ok {
                bail!("gradient check failed");
            }
        }
    }
    Ok(())
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn displacement_meta() -> FieldMeta {
    FieldMeta {
        kind: FieldKind::Displacement,
        steps: gptrack::warp::DEFAULT_STEPS,
    }
}

fn stack_fields(fields: &[DisplacementField<f32>]) -> Result<Tensor<f32>> {
    let items: Vec<Tensor<f32>> = fields.iter().map(|f| f.tensor().clone()).collect();
    Ok(Tensor::stack(&items)?)
}

fn track(ckpt: &Path, seq: &Path, out: &Path) -> Result<()> {
    let model = load_model(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let sample = phantom::load(seq)?;
    let tracked = model.track(&sample.frames)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let meta = displacement_meta();
    write_field(&out.join("steps.ndt"), &stack_fields(&tracked.steps)?, &meta)?;
    write_field(&out.join("lagrangian.ndt"), &stack_fields(&tracked.lagrangian)?, &meta)?;
    let first = sample.mask(0);
    let masks: Vec<Tensor<f32>> = tracked
        .lagrangian
        .iter()
        .map(|u| sample_nearest(&first, u))
        .collect::<gptrack::Result<_>>()?;
    ndt::write(out.join("tracked_masks.ndt"), &Tensor::stack(&masks)?)?;
    println!("tracked {} frames into {}", sample.len(), out.display());
    Ok(())
}

fn eval(pred: &Path, gt: &Path, report: &Path, frames: Option<Vec<usize>>) -> Result<()> {
    let sample = phantom::load(gt)?;
    let lag: Tensor<f32> = ndt::read(pred.join("lagrangian.ndt"))?;
    let fields: Vec<DisplacementField<f32>> = (0..lag.shape()[0])
        .map(|t| DisplacementField::new(lag.select(t)))
        .collect::<gptrack::Result<_>>()?;
    let frames = frames.unwrap_or_else(|| (1..sample.len().min(fields.len())).collect());
    let masks: Vec<Option<Tensor<f32>>> = (0..sample.len()).map(|t| Some(sample.mask(t))).collect();
    let rep = evaluate_tracking(
        &TrackingInput {
            frames: &sample.frames,
            masks: &masks,
        },
        &fields,
        &frames,
    )?;
    let text = serde_json::to_string_pretty(&rep)?;
    std::fs::write(report, text).with_context(|| format!("writing {}", report.display()))?;
    let name = gt.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let csv = report.with_extension("csv");
    let row = format!("{}\n{}\n", TrackingReport::CSV_HEADER, rep.csv_row(&name));
    std::fs::write(&csv, row).with_context(|| format!("writing {}", csv.display()))?;
    println!(
        "mean dice {:.4}  psnr {:.2}  ssim {:.4}  hausdorff {:.2}  folding {:.4}%",
        rep.mean_dice,
        rep.mean_psnr,
        rep.mean_ssim,
        rep.mean_hausdorff,
        100.0 * rep.frac_nonpos
    );
    Ok(())
}
