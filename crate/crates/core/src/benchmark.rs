//! Phantom tracking benchmark: train on a fixed set of synthetic sequences and
//! score held-out ones at peak excursion.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::{evaluate_tracking, TrackingInput};
use crate::phantom::{generate, PhantomSpec, SequenceSample};
use crate::trainer::{crop, Dataset, Model, TrainConfig, Trainer};
use crate::warp::{jacobian_stats, DisplacementField};

/// Data split and scoring protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub spec: PhantomSpec,
    pub train_seeds: Vec<u64>,
    pub held_out_seeds: Vec<u64>,
    /// Frame scored for Dice; a quarter period is the largest excursion.
    pub eval_frame: usize,
}

impl Default for Benchmark {
    fn default() -> Self {
        let spec = PhantomSpec::with_size(64, 16, 8, 0.12, 0.02);
        let eval_frame = spec.period / 4;
        Self {
            spec,
            train_seeds: (0..8).collect(),
            held_out_seeds: (100..104).collect(),
            eval_frame,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub config_hash: String,
    pub seed: u64,
    pub gp: bool,
    pub bidirectional: bool,
    pub epochs: usize,
    /// Mean Dice per held-out sequence at the evaluation frame.
    pub dice: Vec<f64>,
    pub mean_dice: f64,
    /// Largest fraction of folded cells over every tracked frame.
    pub frac_nonpos: f64,
    /// Mean distance to the true Lagrangian field over labelled cells of
    /// every tracked frame, in cells.
    pub endpoint_error: f64,
    /// Dice of the identity tracker, for reference.
    pub identity_dice: f64,
    /// Mean total loss over the training set before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub seconds: f64,
}

impl BenchmarkResult {
    /// `(initial - final) / |initial|`.
    pub fn loss_reduction(&self) -> f64 {
        (self.initial_loss - self.final_loss) / self.initial_loss.abs()
    }
}

impl Benchmark {
    /// Training sequences cropped to their first `len` frames.
    pub fn training_set(&self, len: usize) -> Result<Dataset> {
        let frames = self
            .train_seeds
            .iter()
            .map(|&s| crop(&generate(&self.spec, s)?.frames, len))
            .collect::<Result<_>>()?;
        Ok(Dataset { paths: Vec::new(), frames })
    }

    pub fn held_out(&self) -> Result<Vec<SequenceSample>> {
        self.held_out_seeds.iter().map(|&s| generate(&self.spec, s)).collect()
    }

    /// Half the peak motion at the smallest structure's outer radius.
    pub fn endpoint_bound(&self) -> f64 {
        let r = self.spec.structures.iter().map(|s| s.r_out).fold(f64::INFINITY, f64::min);
        0.5 * self.spec.amplitude * r
    }

    /// Trains one model from scratch and scores it.
    pub fn run(&self, config: &TrainConfig) -> Result<BenchmarkResult> {
        let start = std::time::Instant::now();
        let data = self.training_set(config.seq_len)?;
        let mut trainer = Trainer::new(config.clone(), data.frame_shape())?;
        let initial_loss = mean_loss(&trainer, &data)?;
        trainer.fit(&data, |_| {})?;
        let final_loss = mean_loss(&trainer, &data)?;
        let held = self.held_out()?;
        let score = self.score(&trainer.model, &held, config.seq_len)?;
        Ok(BenchmarkResult {
            config_hash: config.hash(),
            seed: config.seed,
            gp: config.gp,
            bidirectional: config.bidirectional,
            epochs: trainer.epoch,
            mean_dice: score.dice.iter().sum::<f64>() / score.dice.len() as f64,
            dice: score.dice,
            frac_nonpos: score.frac_nonpos,
            endpoint_error: score.endpoint_error,
            identity_dice: self.identity_dice(&held)?,
            initial_loss,
            final_loss,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Scores `model` on the first `len` frames of each held-out sequence.
    pub fn score(&self, model: &Model, held: &[SequenceSample], len: usize) -> Result<Score> {
        let mut dice = Vec::with_capacity(held.len());
        let mut frac_nonpos: f64 = 0.0;
        let (mut err, mut cells) = (0.0, 0usize);
        for s in held {
            dice.push(model.evaluate(s, len, &[self.eval_frame])?.mean_dice);
            let tracked = model.track(&crop(&s.frames, len)?)?;
            for (t, u) in tracked.lagrangian.iter().enumerate().skip(1) {
                frac_nonpos = frac_nonpos.max(jacobian_stats(u, true)?.frac_nonpos);
                let (e, n) = endpoint_error(u, &s.lagrangian(t)?, &s.mask(t));
                err += e;
                cells += n;
            }
        }
        Ok(Score {
            dice,
            frac_nonpos,
            endpoint_error: err / cells.max(1) as f64,
        })
    }

    fn identity_dice(&self, held: &[SequenceSample]) -> Result<f64> {
        let mut total = 0.0;
        for s in held {
            let masks: Vec<_> = (0..s.len()).map(|t| Some(s.mask(t))).collect();
            let fields = vec![DisplacementField::zeros(&s.spec.grid); s.len()];
            let input = TrackingInput { frames: &s.frames, masks: &masks };
            total += evaluate_tracking(&input, &fields, &[self.eval_frame])?.mean_dice;
        }
        Ok(total / held.len() as f64)
    }
}

/// Held-out scores of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct Score {
    pub dice: Vec<f64>,
    pub frac_nonpos: f64,
    pub endpoint_error: f64,
}

fn mean_loss(trainer: &Trainer, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for f in &data.frames {
        total += trainer.evaluate_loss(f)?[4];
    }
    Ok(total / data.frames.len() as f64)
}

/// Summed endpoint distance over labelled cells and their count.
fn endpoint_error(u: &DisplacementField<f32>, truth: &DisplacementField<f32>, mask: &crate::Tensor<f32>) -> (f64, usize) {
    let (mut sum, mut n) = (0.0, 0);
    for (s, &m) in mask.data().iter().enumerate() {
        if m > 0.5 {
            let (a, b) = (u.vector(s), truth.vector(s));
            sum += (a[0] as f64 - b[0] as f64).hypot(a[1] as f64 - b[1] as f64);
            n += 1;
        }
    }
    (sum, n)
}
