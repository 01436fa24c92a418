//! The tracking network: patch embedding, positional encoding, stacked
//! bidirectional linear-attention layers, the GP latent filter and the
//! velocity decoder.
//!
//! From `T` frames the network produces `T − 1` forward fields (transition
//! `t → t+1`, decoded from the code at `t+1`) and `T − 1` backward fields
//! (transition `t+1 → t`, decoded from the code at `t` with separate heads).

pub mod cell;
pub mod decoder;
pub mod embed;
pub mod params;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{filter_latent, FilterOptions, GpVars};
use crate::tensor::{Scalar, Tape, Tensor, Var};

pub use cell::{bidirectional_encode, cell_step, linear_attention, CellParams};
pub use decoder::{decode_velocity, depthwise_smooth, HeadParams, VelocityOut};
pub use embed::{patch_embed, positional_encoding, temporal_encoding, PatchGrid};
pub use params::{Bound, ParamStore};

/// How GP step lengths are derived.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaMode {
    /// Per-patch distance between consecutive positional encodings, `/ √C`.
    #[default]
    Distance,
    /// Every gap is one.
    Unit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub frame: Vec<usize>,
    pub patch: usize,
    pub channels: usize,
    pub layers: usize,
    pub pos_scale: f64,
    pub bidirectional: bool,
    pub gp: bool,
    pub gp_filter: FilterOptions,
    pub delta_mode: DeltaMode,
    /// Initial bias of the log-variance heads. Zero starts the KL term at
    /// its minimum for zero mean fields; a large negative value makes the KL
    /// gradient dominate the clipped update for the first epochs.
    pub logvar_init: f64,
    /// Draw reparameterized samples during training. Off by default: with a
    /// unit-variance prior the sampling noise swamps sub-pixel motion.
    pub sample_velocity: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            frame: vec![64, 64],
            patch: 8,
            channels: 32,
            layers: 2,
            pos_scale: 10_000.0,
            bidirectional: true,
            gp: true,
            gp_filter: FilterOptions::default(),
            delta_mode: DeltaMode::Distance,
            logvar_init: 0.0,
            sample_velocity: false,
        }
    }
}

/// Per-step fields for one sequence.
pub struct ForwardOutput<T: Scalar> {
    /// Transitions `t → t+1`.
    pub forward: Vec<VelocityOut<T>>,
    /// Transitions `t+1 → t`.
    pub backward: Vec<VelocityOut<T>>,
    /// Latent codes after the GP filter, `[T, P, C]`.
    pub latent: Var<T>,
}

/// Network structure; parameters live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct TrackNet {
    config: NetConfig,
    grid: PatchGrid,
}

impl TrackNet {
    pub fn new(config: NetConfig) -> Result<Self> {
        if config.channels == 0 || !config.channels.is_multiple_of(2) {
            return Err(Error::invalid(format!("channels must be even and positive, got {}", config.channels)));
        }
        if config.layers == 0 {
            return Err(Error::invalid("at least one layer is required"));
        }
        let grid = PatchGrid::new(&config.frame, config.patch)?;
        Ok(Self { config, grid })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn grid(&self) -> &PatchGrid {
        &self.grid
    }

    pub fn init_params<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore<T>> {
        let c = self.config.channels;
        let mut s = ParamStore::new();
        s.insert("embed.w", params::glorot(rng, self.grid.local(), c, 1.0))?;
        s.insert("embed.b", Tensor::zeros(&[c]))?;
        s.insert("pos.spatial", params::normal(rng, &[self.grid.patches(), c], 1.0))?;
        for l in 0..self.config.layers {
            CellParams::init(&mut s, &format!("layer{l}.fwd"), c, rng)?;
            if self.config.bidirectional {
                CellParams::init(&mut s, &format!("layer{l}.bwd"), c, rng)?;
            }
        }
        if self.config.gp {
            s.insert("gp.sigma", Tensor::full(&[c], T::of(params::softplus_inv(1.0))))?;
            s.insert("gp.ell", Tensor::full(&[c], T::of(params::softplus_inv(1.0))))?;
            s.insert("gp.noise", Tensor::full(&[c], T::of(params::softplus_inv(0.1))))?;
        }
        HeadParams::init(&mut s, "dec.fwd", c, &self.grid, self.config.logvar_init)?;
        HeadParams::init(&mut s, "dec.bwd", c, &self.grid, self.config.logvar_init)?;
        Ok(s)
    }

    /// Per-frame positional encodings `[P, C]`.
    pub fn positions<T: Scalar>(&self, params: &Bound<T>, steps: usize) -> Result<Vec<Var<T>>> {
        let spatial = params.var("pos.spatial")?;
        (0..steps)
            .map(|t| positional_encoding(spatial, t, self.config.pos_scale))
            .collect()
    }

    /// GP step lengths `[T−1, P]` from consecutive positional encodings.
    pub fn gp_deltas<T: Scalar>(&self, pos: &[Var<T>]) -> Result<Option<Var<T>>> {
        if self.config.delta_mode == DeltaMode::Unit {
            return Ok(None);
        }
        let p = self.grid.patches();
        let inv = T::of(1.0 / (self.config.channels as f64).sqrt());
        let rows = pos
            .windows(2)
            .map(|w| {
                // small floor keeps the square root differentiable at zero
                w[1].sub(&w[0])?.square().sum_last().shift(T::of(1e-12)).sqrt().scale(inv).reshape(&[p])
            })
            .collect::<Result<Vec<_>>>()?;
        Var::stack(&rows.iter().collect::<Vec<_>>()).map(Some)
    }

    /// Encodes `frames` (`[T, spatial...]`) and decodes per-step fields.
    pub fn forward<T: Scalar, R: RngCore + ?Sized>(&self, params: &Bound<T>, frames: &Var<T>, mut rng: Option<&mut R>) -> Result<ForwardOutput<T>> {
        let sh = frames.shape();
        if sh.len() != self.grid.rank() + 1 || sh[1..] != *self.grid.spatial() {
            return Err(Error::shape("forward", sh, self.grid.spatial()));
        }
        let steps = sh[0];
        if steps < 2 {
            return Err(Error::invalid(format!("a sequence needs at least 2 frames, got {steps}")));
        }
        let (p, c) = (self.grid.patches(), self.config.channels);
        let emb = patch_embed(&self.grid.patchify(frames)?, params.var("embed.w")?, params.var("embed.b")?)?;
        let mut xs: Vec<Var<T>> = (0..steps).map(|t| emb.select(t)).collect::<Result<_>>()?;
        let pos = self.positions(params, steps)?;
        for l in 0..self.config.layers {
            let fwd = CellParams::bind(params, &format!("layer{l}.fwd"))?;
            let bwd = if self.config.bidirectional {
                Some(CellParams::bind(params, &format!("layer{l}.bwd"))?)
            } else {
                None
            };
            xs = bidirectional_encode(&xs, &pos, &fwd, bwd.as_ref())?;
        }
        let z = Var::stack(&xs.iter().collect::<Vec<_>>())?;
        let latent = if self.config.gp {
            let sigma = params.var("gp.sigma")?.softplus();
            let ell = params.var("gp.ell")?.softplus();
            let noise = params.var("gp.noise")?.softplus();
            let deltas = self.gp_deltas(&pos)?;
            let hp = GpVars { sigma: &sigma, ell: &ell, noise: &noise };
            filter_latent(&z, deltas.as_ref(), &hp, self.config.gp_filter)?
        } else {
            z
        };
        debug_assert_eq!(latent.shape(), [steps, p, c]);
        let fh = HeadParams::bind(params, "dec.fwd")?;
        let bh = HeadParams::bind(params, "dec.bwd")?;
        let sample = self.config.sample_velocity;
        let mut forward = Vec::with_capacity(steps - 1);
        let mut backward = Vec::with_capacity(steps - 1);
        for t in 0..steps - 1 {
            let r = if sample { rng.as_deref_mut() } else { None };
            forward.push(decode_velocity(&latent.select(t + 1)?, &fh, &self.grid, r)?);
            let r = if sample { rng.as_deref_mut() } else { None };
            backward.push(decode_velocity(&latent.select(t)?, &bh, &self.grid, r)?);
        }
        Ok(ForwardOutput { forward, backward, latent })
    }

    /// Inference: mean velocity fields for every forward transition.
    pub fn infer(&self, store: &ParamStore<f32>, frames: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
        let tape = Tape::new();
        let params = store.bind(&tape);
        let out = self.forward(&params, &tape.constant(frames), None::<&mut rand_chacha::ChaCha8Rng>)?;
        Ok(out.forward.iter().map(|v| v.mu.to_tensor()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(bi: bool, gp: bool) -> TrackNet {
        TrackNet::new(NetConfig {
            frame: vec![16, 16],
            patch: 8,
            channels: 8,
            layers: 1,
            bidirectional: bi,
            gp,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn forward_shapes_and_identity_init() {
        for (bi, gp) in [(true, true), (false, false), (true, false), (false, true)] {
            let net = small(bi, gp);
            let store = net.init_params::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let frames = Tensor::from_fn(&[3, 16, 16], |s| (s as f32 * 0.1).sin());
            let fields = net.infer(&store, &frames).unwrap();
            assert_eq!(fields.len(), 2);
            for f in fields {
                assert_eq!(f.shape(), [2, 16, 16]);
                assert_eq!(f.max_abs(), 0.0);
            }
        }
    }

    #[test]
    fn variable_sequence_length() {
        let net = small(true, true);
        let store = net.init_params::<f32, _>(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for t in [2, 5] {
            let frames = Tensor::from_fn(&[t, 16, 16], |s| (s as f32 * 0.3).cos());
            assert_eq!(net.infer(&store, &frames).unwrap().len(), t - 1);
        }
        assert!(net.infer(&store, &Tensor::zeros(&[1, 16, 16])).is_err());
    }

    #[test]
    fn ablation_omits_parameters() {
        let full = small(true, true).init_params::<f32, _>(&mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let base = small(false, false).init_params::<f32, _>(&mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(full.get("gp.sigma").is_some() && base.get("gp.sigma").is_none());
        assert!(full.get("layer0.bwd.wq").is_some() && base.get("layer0.bwd.wq").is_none());
    }
}
