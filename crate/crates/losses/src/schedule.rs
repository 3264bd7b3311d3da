//! Loss weights, the consistency warm-up and the Stage II objective.

use tensorgrad::{Real, Tape, Var};

use crate::error::{check_tau, LossError, Result};

pub const LAMBDA3_PEAK: f64 = 0.1;

/// `peak · exp(-5 (1 - step/total)^2)`.
pub fn warmup(peak: f64, step: usize, total: usize) -> Result<f64> {
    if total == 0 || step > total {
        return Err(LossError::Schedule { step, total });
    }
    let r = 1.0 - step as f64 / total as f64;
    Ok(peak * (-5.0 * r * r).exp())
}

/// Consistency weight at `step` of `total` training steps.
pub fn lambda3(step: usize, total: usize) -> Result<f64> {
    warmup(LAMBDA3_PEAK, step, total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3_peak: f64,
    pub threshold: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.01,
            lambda2: 1.0,
            lambda3_peak: LAMBDA3_PEAK,
            threshold: 0.65,
            tau: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3_peak", self.lambda3_peak),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(LossError::Weight { name, value });
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(LossError::Threshold(self.threshold));
        }
        check_tau(self.tau)
    }

    pub fn lambda3(&self, step: usize, total: usize) -> Result<f64> {
        warmup(self.lambda3_peak, step, total)
    }
}

/// Where training stands when the objective is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    pub epoch: usize,
    pub step: usize,
    pub total_steps: usize,
    /// First epoch (1-based, like `epoch`) at which the local contrastive term is switched on.
    pub lcl_start_epoch: usize,
}

impl Progress {
    pub fn lcl_active(&self) -> bool {
        self.epoch >= self.lcl_start_epoch
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Terms {
    pub seg: Var,
    pub cons: Var,
    /// `None` when no local term could be formed on this batch.
    pub lcl: Option<Var>,
}

/// `λ1·L_lcl + λ2·L_seg + λ3(δ)·L_cons`, with the local term gated off before
/// `lcl_start_epoch`. Returns the objective and the λ3 used.
pub fn stage2_total<T: Real>(
    tape: &mut Tape<T>,
    terms: Stage2Terms,
    weights: &LossWeights,
    progress: Progress,
) -> Result<(Var, f64)> {
    weights.validate()?;
    let l3 = weights.lambda3(progress.step, progress.total_steps)?;
    let seg = tape.scale(terms.seg, T::of(weights.lambda2));
    let cons = tape.scale(terms.cons, T::of(l3));
    let mut total = tape.add(seg, cons)?;
    if let (Some(lcl), true) = (terms.lcl, progress.lcl_active()) {
        let lcl = tape.scale(lcl, T::of(weights.lambda1));
        total = tape.add(total, lcl)?;
    }
    Ok((total, l3))
}
