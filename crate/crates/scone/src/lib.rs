//! Multi-label visual attribute prediction with partial labels: object-
//! conditioned feature composition, a relevant-object localizer, multi-head
//! attention, imbalance-aware losses and samplers, contrastive pretraining,
//! and annotated-only evaluation. All numerics are f64 and bit-deterministic
//! under fixed seeds.

pub mod dataset;
pub mod embedding;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod sampling;
pub mod taxonomy;
pub mod trainer;

pub use error::{Result, SconeError};
