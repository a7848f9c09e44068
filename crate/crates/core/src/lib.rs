//! Low-shot learning on feature vectors.
//!
//! The crate covers both phases of the base/novel protocol: a representation
//! is learned on data-rich base classes (optionally regularized by squared
//! gradient magnitude, feature norms or a triplet margin), then a linear
//! classifier over base and novel classes is fit from a handful of novel
//! examples, optionally padded with feature vectors hallucinated from
//! base-class analogies. [`theory`] checks the curvature and distance bounds
//! that motivate the gradient-magnitude regularizer.

pub mod benchmark;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod hallucinator;
mod io;
pub mod mlp;
pub mod numerics;
pub mod repr;
pub mod theory;

pub use io::{read_json, write_json};

pub use error::{Error, Result};
