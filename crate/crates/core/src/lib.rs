//! Evidential binary classification with Beta opinions.
//!
//! A network emits non-negative evidence for each class; evidence maps to a
//! Beta distribution over `P(y = 1)`, whose expected value is the prediction
//! and whose vacuity `u = 2 / (α + β)` is the uncertainty. The uncertainty
//! drives rejection at fixed coverage and the filtering of noisy training
//! samples before retraining.

pub mod data;
pub mod error;
pub mod evidential;
pub mod metrics;
pub mod net;
pub mod selection;
pub mod specfun;
pub mod train;

pub use error::{Error, Result};
pub use evidential::{opinion_from_evidence, AnnealedWeight, BetaOpinion, Evidence, Label, RegularizerMode};
pub use metrics::{roc_auc, ScoredSet};
pub use net::{Head, NetworkSpec};
pub use train::{TrainConfig, TrainedModel};
