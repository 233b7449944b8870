//! Mask-guided face de-identification.
//!
//! A generator latent is optimized so that the generated face keeps the
//! perceptual content of the input while moving away from its identity
//! features; the result is merged back into the original image with a
//! multi-band Gaussian blend.

pub mod blend;
pub mod error;
pub mod eval;
pub mod facemask;
pub mod image;
pub mod latentopt;
pub mod metrics;
pub mod model;
pub mod synth;

pub use error::{Error, Result};
