//! Energy-based out-of-distribution detection.
//!
//! - [`scores`]: energy, label energy, softmax and MSP over logits
//! - [`detector`]: threshold calibration and the in/out decision
//! - [`metrics`]: FPR at fixed TPR, AUROC, AUPR
//! - [`mlp`]: a small classifier with energy-bounded fine-tuning
//! - [`gda`]: shared-covariance Gaussian discriminant energy and Mahalanobis score
//! - [`bench`]: synthetic benchmark, table I/O, score assembly
//! - [`pipeline`]: the pretrain / fine-tune / evaluate experiment

pub mod bench;
pub mod detector;
pub mod error;
pub mod gda;
pub mod metrics;
pub mod mlp;
pub mod pipeline;
pub mod rng;
pub mod scores;

pub use error::{Error, Result};
