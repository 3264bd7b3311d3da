//! Organ-aware local contrastive loss against the memory bank.

use tensorgrad::{Real, Tape, Tensor, Var, NORM_EPS};

use crate::bank::MemoryBank;
use crate::centers::MaskCenterSet;
use crate::error::{check_tau, LossError, Result};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Vectors at or below the normalization floor have no direction and take no part
/// in cosine similarity.
pub fn has_direction(v: &[f64]) -> bool {
    norm(v) > NORM_EPS
}

/// Sum over classes present in `unlabeled` (with a nonzero center) and with a non-empty bank buffer of the mean,
/// over that class's bank vectors `k+`, of `-log(e^{a+} / (e^{a+} + Σ e^{a-}))`, where
/// `a = cos(M_c, k) / τ` and `k-` ranges over the other classes' buffers.
/// Bank vectors are constants.
pub fn lcl_loss<T: Real>(
    tape: &mut Tape<T>,
    unlabeled: &MaskCenterSet,
    bank: &MemoryBank,
    tau: f64,
) -> Result<Var> {
    check_tau(tau)?;
    if unlabeled.classes() != bank.classes() {
        return Err(LossError::Shape {
            op: "lcl_loss",
            detail: format!("{} center classes against a {}-class bank", unlabeled.classes(), bank.classes()),
        });
    }
    let k = tape.shape(unlabeled.centers)[1];
    if k != bank.dim() {
        return Err(LossError::Dimension {
            expected: bank.dim(),
            got: k,
        });
    }
    let mut rows = Vec::new();
    let mut owner = Vec::new();
    for c in 1..=bank.classes() {
        for v in bank.buffer(c).iter().filter(|v| has_direction(v)) {
            let n = norm(v);
            rows.extend(v.iter().map(|x| x / n));
            owner.push(c);
        }
    }
    let values = unlabeled.values(tape);
    let total_bank = owner.len();
    let mut terms = Vec::new();
    if total_bank > 0 {
        let keys = Tensor::new(vec![total_bank, k], rows.into_iter().map(T::of).collect())?;
        let keys = tape.constant(keys);
        let keys_t = tape.transpose(keys)?;
        for c in 1..=bank.classes() {
            let positives = owner.iter().filter(|&&o| o == c).count();
            let usable = values[c - 1].as_deref().is_some_and(has_direction);
            if !usable || positives == 0 {
                continue;
            }
            let m = unlabeled.row(tape, c)?;
            let m = tape.l2_normalize(m, 1)?;
            let sims = tape.matmul(m, keys_t)?;
            let logits = tape.scale(sims, T::of(1.0 / tau));
            // shift by the row max (a constant) so exp never overflows
            let shift = tape.value(logits).data().iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let shifted = tape.add_scalar(logits, -shift);
            let e = tape.exp(shifted);
            let is_pos: Vec<T> = owner.iter().map(|&o| if o == c { T::one() } else { T::zero() }).collect();
            let is_neg: Vec<T> = is_pos.iter().map(|&p| T::one() - p).collect();
            let pos_mask = tape.constant(Tensor::new(vec![1, total_bank], is_pos)?);
            let neg_mask = tape.constant(Tensor::new(vec![1, total_bank], is_neg)?);
            let neg = tape.mul(e, neg_mask)?;
            let neg_sum = tape.sum(neg);
            let neg_sum = tape.broadcast(neg_sum, &[1, total_bank])?;
            let denom = tape.add(e, neg_sum)?;
            let log_denom = tape.log(denom);
            let per_key = tape.sub(log_denom, shifted)?;
            let per_pos = tape.mul(per_key, pos_mask)?;
            let s = tape.sum(per_pos);
            terms.push(tape.scale(s, T::of(1.0 / positives as f64)));
        }
    }
    let Some((&first, rest)) = terms.split_first() else {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    };
    let mut acc = first;
    for &t in rest {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}
