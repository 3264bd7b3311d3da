//! Objectives for two-stage dual contrastive training: the similarity-weighted
//! global contrastive loss (Stage I) and, for Stage II, mask centers, the teacher
//! memory bank, the local contrastive loss, Dice+CE and consistency.

mod bank;
mod centers;
mod error;
mod global;
mod local;
mod schedule;
mod supervised;

pub use bank::{MemoryBank, DEFAULT_BANK_CAPACITY};
pub use centers::{mask_centers, MaskCenterSet};
pub use error::{LossError, Result};
pub use global::{gcl_loss, positive_weights, require_positives};
pub use local::{has_direction, lcl_loss};
pub use schedule::{lambda3, stage2_total, warmup, LossWeights, Progress, Stage2Terms, LAMBDA3_PEAK};
pub use supervised::{consistency_loss, dice_ce_loss, dice_ce_terms, DICE_SMOOTH};
