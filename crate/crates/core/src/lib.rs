//! Global autoregressive models (GAMs) over binary sequences.
//!
//! A GAM scores a sequence by an autoregressive policy `r` times a
//! log-linear factor, `P_λ(x) = r(x) · exp⟨λ, φ(x)⟩`. Training happens in
//! two stages: fit `λ` by moment matching (Training-1, [`ebm`]), then
//! project the unnormalized `P_λ` back onto a normalized policy π_θ by
//! distillation or distributional policy gradient (Training-2,
//! [`training2`]). The [`truth`] module provides the exact synthetic
//! process everything is measured against.

pub mod ebm;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod model;
pub mod policy;
pub mod rng;
pub mod sequence;
pub mod sweep;
pub mod training2;
pub mod truth;

pub use error::{GamError, Result};
pub use features::{FeatureMask, FeatureSet};
pub use model::{SequenceModel, SequenceSampler};
pub use policy::{Gradient, PolicyHyper, PolicyParams};
pub use sequence::Sequence;
