//! Unsupervised sequential motion tracking.
//!
//! A bidirectional recursive linear-attention encoder produces per-frame
//! latent codes, a Matérn-3/2 Gaussian-process prior filters them in O(T)
//! through its Kalman state-space form, and a decoder turns them into
//! stationary velocity fields that are integrated into diffeomorphic
//! displacement fields.

pub mod benchmark;
pub mod checks;
pub mod error;
pub mod gp;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod phantom;
pub mod tensor;
pub mod trainer;
pub mod warp;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tape, Tensor, Var};
