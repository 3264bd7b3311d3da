//! Two-stage semi-supervised segmentation training: global contrastive pretraining
//! of the encoder, then mean-teacher training with a local contrastive term.
//! Also holds the optimizers, Dice/Jaccard evaluation, run configuration and the
//! pieces behind the `dcl` command-line tool.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod stage1;
pub mod stage2;
pub mod suite;

pub use config::TrainConfig;
pub use error::{Result, TrainError};
