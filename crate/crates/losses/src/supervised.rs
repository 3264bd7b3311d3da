//! Supervised Dice + cross-entropy and the teacher-student consistency term.

use tensorgrad::{Real, Tape, Tensor, Var};

use crate::error::{shape_err, LossError, Result};

pub const DICE_SMOOTH: f64 = 1e-5;

/// One-hot `[N, C, HW]` layout plus the per-class pixel totals.
fn one_hot<T: Real>(labels: &[u8], n: usize, c: usize, hw: usize) -> Result<(Vec<T>, Vec<usize>)> {
    let mut y = vec![T::zero(); n * c * hw];
    let mut counts = vec![0; c];
    for (i, &l) in labels.iter().enumerate() {
        if l as usize >= c {
            return Err(LossError::LabelOutOfRange { label: l, max: c - 1 });
        }
        let (img, p) = (i / hw, i % hw);
        y[(img * c + l as usize) * hw + p] = T::one();
        counts[l as usize] += 1;
    }
    Ok((y, counts))
}

/// Soft Dice averaged over all classes (background included) plus mean pixel cross-entropy.
/// `logits` is `[N, C, H, W]`, `labels` holds `N·H·W` ids in `0..C`.
pub fn dice_ce_loss<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &[u8]) -> Result<Var> {
    let (dice, ce) = dice_ce_terms(tape, logits, labels)?;
    Ok(tape.add(dice, ce)?)
}

/// The Dice and cross-entropy parts of [`dice_ce_loss`], in that order.
pub fn dice_ce_terms<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &[u8]) -> Result<(Var, Var)> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 4 {
        return Err(shape_err("dice_ce_loss", format!("need [N, C, H, W], got {shape:?}")));
    }
    let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    if labels.len() != n * hw {
        return Err(shape_err("dice_ce_loss", format!("{} labels for {n}×{hw} pixels", labels.len())));
    }
    let (y, counts) = one_hot::<T>(labels, n, c, hw)?;
    let y = tape.constant(Tensor::new(shape, y)?);
    let y_sum = counts.iter().map(|&k| T::of(k as f64 + DICE_SMOOTH)).collect();

    let q = tape.softmax_channels(logits)?;
    let inter = tape.mul(q, y)?;
    let inter = tape.sum_axes(inter, &[0, 2, 3])?;
    let num = tape.scale(inter, T::of(2.0));
    let num = tape.add_scalar(num, T::of(DICE_SMOOTH));
    let q_sum = tape.sum_axes(q, &[0, 2, 3])?;
    let y_sum = tape.constant(Tensor::new(vec![c], y_sum)?);
    let den = tape.add(q_sum, y_sum)?;
    let ratio = tape.div(num, den)?;
    let ratio = tape.mean(ratio);
    let dice = tape.scale(ratio, -T::one());
    let dice = tape.add_scalar(dice, T::one());

    let log_q = tape.log_softmax_channels(logits)?;
    let picked = tape.mul(log_q, y)?;
    let picked = tape.sum(picked);
    let ce = tape.scale(picked, T::of(-1.0 / (n * hw) as f64));
    Ok((dice, ce))
}

/// Mean squared difference of two probability maps. The teacher side is detached,
/// so gradient reaches only `student`.
pub fn consistency_loss<T: Real>(tape: &mut Tape<T>, student: Var, teacher: Var) -> Result<Var> {
    let (a, b) = (tape.shape(student), tape.shape(teacher));
    if a != b {
        return Err(shape_err("consistency_loss", format!("student {a:?} vs teacher {b:?}")));
    }
    let teacher = tape.detach(teacher);
    let d = tape.sub(student, teacher)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}
