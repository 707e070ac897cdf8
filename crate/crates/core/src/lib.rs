//! Online open-world continual learning over feature streams with
//! prototype-based exemplar rehearsal and dual-level (feature and data)
//! perturbations.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dlp;
pub mod error;
pub mod fitting;
pub mod flp;
pub mod io;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod protocol;
pub mod prototype;
pub mod seed;

pub use error::{Error, Result};
pub use numeric::{FeatureMap, FeatureVector};

/// Category identifier shared by streams, prototypes and the model head.
pub type CategoryId = u32;
