//! Clinical risk assessment on tabular records.
//!
//! Two model families share one training stack: a small transformer that
//! embeds each feature as a token (continuous, categorical, and checkbox
//! groups each get their own embedding scheme, with explicit missing-value
//! handling and exportable attention maps), and a sign-constrained MLP whose
//! outputs are provably monotone in its non-negative inputs.
//!
//! Layout:
//! - [`tensor`]: f64 tensors and reverse-mode differentiation on a tape.
//! - [`data`]: schemas, CSV ingestion, splits, batching, synthetic cohorts.
//! - [`embed`]: per-modality token embedders.
//! - [`model`]: the transformer encoder and attention capture.
//! - [`nnmlp`]: the constrained baseline.
//! - [`train`]: losses, optimizers, scheduling, metrics, the fit loop.
//! - [`explain`]: attention aggregation and CSV export.
//! - [`checkpoint`]: exact-round-trip model serialization.

pub mod checkpoint;
pub mod data;
pub mod embed;
pub mod error;
pub mod explain;
pub mod model;
pub mod nnmlp;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
