//! Deterministic federated-learning simulator.
//!
//! Two or more simulated nodes train a small batch-normalized MLP on
//! synthetic multi-label data with covariate shift and partial labels. The
//! representation block is aggregated by FedAvg, FedBN or FedFBN (frozen
//! batch norm); per-label heads are merged across nodes. Evaluation uses
//! mean AUROC with bootstrap confidence intervals and paired t-tests.

pub mod datagen;
pub mod error;
pub mod experiments;
pub mod federation;
pub mod metrics;
pub mod neural;
pub mod numerics;

pub use error::{Error, Result};
