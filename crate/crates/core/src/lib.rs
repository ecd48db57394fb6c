//! Modular efficiency classification for decision-making units.
//!
//! The pipeline scores units with input-oriented CCR efficiency, bands the
//! scores into performance classes, picks a cluster count by clustering the
//! variables, partitions the units with a one-dimensional SOM, and trains a
//! reduced multivariate polynomial classifier per cluster.

pub mod dataset;
pub mod dea;
pub mod error;
pub mod evaluation;
pub mod lp;
pub mod pipeline;
pub mod rm;
pub mod som;
pub mod varclus;

pub use error::{Error, Result};

/// Derives an independent stream seed from a master seed (SplitMix64 step).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
