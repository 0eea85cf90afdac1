//! Modality-gap measurement and gap-closing contrastive training on toy
//! dual-encoder models.
//!
//! The crate is organised as `numerics` (dense linear algebra), `geometry`
//! (gap and spectral metrics), `losses` (CLIP-style objectives with analytic
//! gradients), `curriculum` (α schedule), `trainkit` (synthetic data, encoders,
//! training loop), `evalkit` (downstream metrics) and `sweep`.

pub mod curriculum;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod losses;
pub mod numerics;
pub mod sweep;
pub mod trainkit;

pub use error::{Error, Result};
pub use numerics::Matrix;
