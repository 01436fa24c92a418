//! Unsupervised training on phantom datasets, checkpoints and inference.
//!
//! One optimizer step processes one full sequence. All randomness (parameter
//! init, sequence order, reparameterization noise, flips) comes from a single
//! ChaCha stream whose position is stored in checkpoints, so a resumed run
//! continues exactly where the uninterrupted run would have been.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::FilterOptions;
use crate::losses::{total_loss, LossOptions};
use crate::metrics::{evaluate_tracking, TrackingInput, TrackingReport};
use crate::net::{DeltaMode, NetConfig, ParamStore, TrackNet};
use crate::phantom::{self, SequenceSample};
use crate::tensor::{clip_grad_norm, ndt, AdamConfig, AdamState, StepDecay, Tape, Tensor};
use crate::warp::{compose, integrate_velocity, DisplacementField, VelocityField};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_CSV_HEADER: &str = "epoch,term_a,term_b,term_c,term_d,total";

/// Architecture knobs; the frame shape comes from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub patch: usize,
    pub channels: usize,
    pub pos_scale: f64,
    pub logvar_init: f64,
    pub sample_velocity: bool,
    pub delta_mode: DeltaMode,
    pub gp_filter: FilterOptions,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let n = NetConfig::default();
        Self {
            layers: n.layers,
            patch: n.patch,
            channels: n.channels,
            pos_scale: n.pos_scale,
            logvar_init: n.logvar_init,
            sample_velocity: n.sample_velocity,
            delta_mode: n.delta_mode,
            gp_filter: n.gp_filter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Learning-rate multiplier applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    /// Frames per training sequence (the first `seq_len` of each sequence).
    pub seq_len: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub bidirectional: bool,
    pub gp: bool,
    /// Random flips of the last spatial axis.
    pub flip: bool,
    pub model: ModelConfig,
    pub loss: LossOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 2e-3,
            lr_decay: 0.5,
            decay_every: 100,
            batch_size: 1,
            seq_len: 8,
            clip_norm: 1.0,
            seed: 0,
            bidirectional: true,
            gp: true,
            flip: false,
            model: ModelConfig::default(),
            loss: LossOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if self.batch_size != 1 {
            return bad(format!("only batch_size = 1 is supported, got {}", self.batch_size));
        }
        if self.seq_len < 2 {
            return bad(format!("seq_len must be >= 2, got {}", self.seq_len));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if self.loss.window < 3 || self.loss.window.is_multiple_of(2) {
            return bad(format!("loss window must be odd and >= 3, got {}", self.loss.window));
        }
        self.loss.weights.validate()
    }

    pub fn net_config(&self, frame: &[usize]) -> NetConfig {
        let m = &self.model;
        NetConfig {
            frame: frame.to_vec(),
            patch: m.patch,
            channels: m.channels,
            layers: m.layers,
            pos_scale: m.pos_scale,
            bidirectional: self.bidirectional,
            gp: self.gp,
            gp_filter: m.gp_filter,
            delta_mode: m.delta_mode,
            logvar_init: m.logvar_init,
            sample_velocity: m.sample_velocity,
        }
    }

    /// Hash of everything that shapes the trajectory except the epoch budget.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.epochs = 0;
        let text = serde_json::to_string(&c).expect("config serializes");
        // FNV-1a, stable across platforms and releases
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// Training sequences, each cropped to the configured length.
pub struct Dataset {
    pub paths: Vec<PathBuf>,
    pub frames: Vec<Tensor<f32>>,
}

impl Dataset {
    pub fn load(root: &Path, seq_len: usize) -> Result<Self> {
        let paths = phantom::list_sequences(root)?;
        let mut frames = Vec::with_capacity(paths.len());
        let mut shape: Option<Vec<usize>> = None;
        for p in &paths {
            let s = phantom::load(p)?;
            if s.len() < seq_len {
                return Err(Error::format(p, format!("{} frames, need {seq_len}", s.len())));
            }
            let f = crop(&s.frames, seq_len)?;
            match &shape {
                Some(sh) if sh.as_slice() != &f.shape()[1..] => {
                    return Err(Error::format(p, format!("frame shape {:?} differs from {sh:?}", &f.shape()[1..])))
                }
                None => shape = Some(f.shape()[1..].to_vec()),
                _ => {}
            }
            frames.push(f);
        }
        Ok(Self { paths, frames })
    }

    pub fn frame_shape(&self) -> &[usize] {
        &self.frames[0].shape()[1..]
    }
}

/// First `len` frames of a `[T, spatial...]` stack.
pub(crate) fn crop(frames: &Tensor<f32>, len: usize) -> Result<Tensor<f32>> {
    let per: usize = frames.shape()[1..].iter().product();
    let mut shape = frames.shape().to_vec();
    shape[0] = len;
    Tensor::new(&shape, frames.data()[..len * per].to_vec())
}

fn flip_last(frames: &Tensor<f32>) -> Tensor<f32> {
    let w = *frames.shape().last().expect("non-scalar");
    Tensor::from_fn(frames.shape(), |s| frames.data()[s - s % w + (w - 1 - s % w)])
}

/// Per-epoch mean loss terms `[a, b, c, d, total]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub terms: [f64; 5],
}

/// Structure, parameters and integration depth needed for inference.
#[derive(Clone, Debug)]
pub struct Model {
    pub net: TrackNet,
    pub params: ParamStore<f32>,
    pub squarings: u32,
}

/// Inference output for one sequence.
#[derive(Clone, Debug)]
pub struct Tracked {
    /// `φ_{t:t+1}` for each step.
    pub steps: Vec<DisplacementField<f32>>,
    /// `φ_{0:t}` for every frame; entry 0 is the identity.
    pub lagrangian: Vec<DisplacementField<f32>>,
}

impl Model {
    /// Mean-only decoding; deterministic.
    pub fn track(&self, frames: &Tensor<f32>) -> Result<Tracked> {
        let sh = frames.shape();
        if sh.len() != self.net.grid().rank() + 1 || sh[1..] != *self.net.grid().spatial() {
            return Err(Error::shape("track", sh, self.net.grid().spatial()));
        }
        let velocities = self.net.infer(&self.params, frames)?;
        let mut steps = Vec::with_capacity(velocities.len());
        for v in velocities {
            steps.push(integrate_velocity(&VelocityField::new(v)?, self.squarings)?);
        }
        let mut lagrangian = vec![DisplacementField::zeros(&sh[1..])];
        for (t, s) in steps.iter().enumerate() {
            let next = if t == 0 { s.clone() } else { compose(&lagrangian[t], s)? };
            lagrangian.push(next);
        }
        Ok(Tracked { steps, lagrangian })
    }

    /// Tracks `sample` from its first frame and scores `eval_frames`.
    pub fn evaluate(&self, sample: &SequenceSample, len: usize, eval_frames: &[usize]) -> Result<TrackingReport> {
        let frames = crop(&sample.frames, len)?;
        let tracked = self.track(&frames)?;
        let masks: Vec<Option<Tensor<f32>>> = (0..len).map(|t| Some(sample.mask(t))).collect();
        evaluate_tracking(&TrackingInput { frames: &frames, masks: &masks }, &tracked.lagrangian, eval_frames)
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    adam: AdamState<f32>,
    rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochLoss>,
}

impl Trainer {
    pub fn new(config: TrainConfig, frame: &[usize]) -> Result<Self> {
        config.validate()?;
        let net = TrackNet::new(config.net_config(frame))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = net.init_params::<f32, _>(&mut rng)?;
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        let adam = AdamState::new(AdamConfig { lr: config.lr, ..Default::default() }, &sizes);
        Ok(Self {
            model: Model {
                net,
                params,
                squarings: config.loss.squarings,
            },
            config,
            adam,
            rng,
            epoch: 0,
            history: Vec::new(),
        })
    }

    fn schedule(&self) -> StepDecay {
        StepDecay {
            base_lr: self.config.lr,
            factor: self.config.lr_decay,
            every: self.config.decay_every,
        }
    }

    /// Loss terms for `frames` without updating anything (mean decoding).
    pub fn evaluate_loss(&self, frames: &Tensor<f32>) -> Result<[f64; 5]> {
        let tape = Tape::new();
        let bound = self.model.params.bind(&tape);
        let x = tape.constant(frames);
        let out = self.model.net.forward(&bound, &x, None::<&mut ChaCha8Rng>)?;
        Ok(total_loss(&x, &out, &self.config.loss)?.values())
    }

    /// One optimizer step on one sequence; returns the loss terms.
    pub fn step(&mut self, frames: &Tensor<f32>) -> Result<[f64; 5]> {
        let frames = if self.config.flip && self.rng.random::<bool>() {
            flip_last(frames)
        } else {
            frames.clone()
        };
        let tape = Tape::new();
        let bound = self.model.params.bind(&tape);
        let x = tape.constant(&frames);
        let out = self.model.net.forward(&bound, &x, Some(&mut self.rng))?;
        let terms = total_loss(&x, &out, &self.config.loss)?;
        let values = terms.values();
        let grads = terms.total.backward()?;
        let mut g: Vec<Vec<f32>> = bound.vars().iter().map(|v| grads.get_or_zeros(v)).collect();
        clip_grad_norm(&mut g, self.config.clip_norm);
        let refs: Vec<&[f32]> = g.iter().map(|v| v.as_slice()).collect();
        let mut params: Vec<&mut Tensor<f32>> = self.model.params.tensors_mut().iter_mut().collect();
        self.adam.step(&mut params, &refs)?;
        Ok(values)
    }

    /// One pass over `data` in a shuffled order.
    pub fn run_epoch(&mut self, data: &Dataset) -> Result<EpochLoss> {
        self.adam.set_lr(self.schedule().lr_at(self.epoch));
        let mut order: Vec<usize> = (0..data.frames.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = [0.0; 5];
        for &i in &order {
            let v = self.step(&data.frames[i])?;
            for k in 0..5 {
                sum[k] += v[k];
            }
        }
        let n = order.len() as f64;
        let rec = EpochLoss {
            epoch: self.epoch,
            terms: sum.map(|s| s / n),
        };
        self.epoch += 1;
        self.history.push(rec.clone());
        Ok(rec)
    }

    /// Runs until `config.epochs` epochs are complete.
    pub fn fit(&mut self, data: &Dataset, mut progress: impl FnMut(&EpochLoss)) -> Result<()> {
        if data.frame_shape() != self.model.net.grid().spatial() {
            return Err(Error::shape("fit", data.frame_shape(), self.model.net.grid().spatial()));
        }
        while self.epoch < self.config.epochs {
            let rec = self.run_epoch(data)?;
            progress(&rec);
        }
        Ok(())
    }

    pub fn loss_csv(&self) -> String {
        let mut s = format!("{LOSS_CSV_HEADER}\n");
        for r in &self.history {
            let [a, b, c, d, t] = r.terms;
            writeln!(s, "{},{a},{b},{c},{d},{t}", r.epoch).expect("string write");
        }
        s
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (m, v) = self.adam.moments();
        let mut entries = Vec::new();
        for (i, (name, t)) in self.model.params.iter().enumerate() {
            let file = |kind: &str| format!("{kind}.{i:03}.ndt");
            ndt::write(dir.join(file("param")), t)?;
            ndt::write(dir.join(file("adam_m")), &Tensor::new(t.shape(), m[i].clone())?)?;
            ndt::write(dir.join(file("adam_v")), &Tensor::new(t.shape(), v[i].clone())?)?;
            entries.push(ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                file: file("param"),
            });
        }
        let manifest = CheckpointManifest {
            format_version: CHECKPOINT_VERSION,
            epoch: self.epoch,
            adam_steps: self.adam.steps(),
            config_hash: self.config.hash(),
            config: self.config.clone(),
            frame: self.model.net.grid().spatial().to_vec(),
            rng: RngState::capture(&self.rng),
            params: entries,
            history: self.history.clone(),
        };
        let path = dir.join(CHECKPOINT_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    /// Restores a checkpoint written by [`Trainer::save`]. `path` may be the
    /// checkpoint directory or its manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let (dir, manifest) = read_manifest(path)?;
        let mut t = Trainer::new(manifest.config.clone(), &manifest.frame)?;
        if manifest.params.len() != t.model.params.len() {
            return Err(Error::format(&dir, "parameter count differs from the configured model"));
        }
        let (mut ms, mut vs) = (Vec::new(), Vec::new());
        for (i, e) in manifest.params.iter().enumerate() {
            if t.model.params.names()[i] != e.name {
                return Err(Error::format(&dir, format!("unexpected parameter {}", e.name)));
            }
            let p: Tensor<f32> = ndt::read(dir.join(&e.file))?;
            if p.shape() != e.shape.as_slice() || p.shape() != t.model.params.tensors()[i].shape() {
                return Err(Error::format(dir.join(&e.file), format!("shape {:?}, expected {:?}", p.shape(), e.shape)));
            }
            t.model.params.tensors_mut()[i] = p;
            ms.push(ndt::read::<f32>(dir.join(format!("adam_m.{i:03}.ndt")))?.into_data());
            vs.push(ndt::read::<f32>(dir.join(format!("adam_v.{i:03}.ndt")))?.into_data());
        }
        t.adam = AdamState::from_parts(t.adam.config, manifest.adam_steps, ms, vs)?;
        t.rng = manifest.rng.restore()?;
        t.epoch = manifest.epoch;
        t.history = manifest.history;
        Ok(t)
    }

    /// Resumes from a checkpoint with a possibly larger epoch budget; the
    /// rest of the configuration must match.
    pub fn resume(path: &Path, config: &TrainConfig) -> Result<Self> {
        let mut t = Self::load(path)?;
        if t.config.hash() != config.hash() {
            return Err(Error::invalid("checkpoint was trained with a different configuration"));
        }
        t.config.epochs = config.epochs;
        Ok(t)
    }
}

/// Loads a model for inference from a checkpoint directory or manifest.
pub fn load_model(path: &Path) -> Result<Model> {
    Ok(Trainer::load(path)?.model)
}

fn read_manifest(path: &Path) -> Result<(PathBuf, CheckpointManifest)> {
    let file = if path.is_dir() { path.join(CHECKPOINT_FILE) } else { path.to_path_buf() };
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::format(&file, e.to_string()))?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::format(&file, format!("unsupported format_version {}", manifest.format_version)));
    }
    if manifest.config.hash() != manifest.config_hash {
        return Err(Error::format(&file, "config hash mismatch"));
    }
    Ok((dir, manifest))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

/// Exact position in a ChaCha stream.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    /// Word position, as a decimal string (u128 is not portable JSON).
    word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::invalid("malformed rng state in checkpoint");
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    format_version: u32,
    epoch: usize,
    adam_steps: u64,
    config_hash: String,
    config: TrainConfig,
    frame: Vec<usize>,
    rng: RngState,
    params: Vec<ParamEntry>,
    history: Vec<EpochLoss>,
}

/// Trains on every sequence under `data`, writing the checkpoint and
/// `losses.csv` to `out`. Resumes if `out` already holds a checkpoint with a
/// matching configuration.
pub fn train(data: &Path, config: &TrainConfig, out: &Path, progress: impl FnMut(&EpochLoss)) -> Result<Trainer> {
    config.validate()?;
    let dataset = Dataset::load(data, config.seq_len)?;
    let mut trainer = if out.join(CHECKPOINT_FILE).is_file() {
        Trainer::resume(out, config)?
    } else {
        Trainer::new(config.clone(), dataset.frame_shape())?
    };
    trainer.fit(&dataset, progress)?;
    trainer.save(out)?;
    let csv = out.join("losses.csv");
    std::fs::write(&csv, trainer.loss_csv()).map_err(|e| Error::io(&csv, e))?;
    Ok(trainer)
}
