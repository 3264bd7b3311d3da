//! Similarity-weighted global contrastive loss over a batch of slice embeddings.

use tensorgrad::{Real, Tape, Tensor, Var};

use crate::error::{check_tau, shape_err, LossError, Result};

/// Pushes the self-pair out of every softmax denominator; `exp` of it is exactly zero.
const SELF_MASK: f64 = -1e9;

/// Per-pair weights `s_ij * 1[s_ij > t]`, zero on the diagonal.
pub fn positive_weights(similarity: &[f64], n: usize, threshold: f64) -> Vec<f64> {
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let s = similarity[i * n + j];
            if i != j && s > threshold {
                w[i * n + j] = s;
            }
        }
    }
    w
}

/// `z` holds 2B unit embeddings as rows, `similarity` the row-major 2B×2B slice similarities.
///
/// Anchors whose positive set is empty contribute nothing. If every anchor is empty
/// the loss is exactly zero.
pub fn gcl_loss<T: Real>(
    tape: &mut Tape<T>,
    z: Var,
    similarity: &[f64],
    threshold: f64,
    tau: f64,
) -> Result<Var> {
    check_tau(tau)?;
    let shape = tape.shape(z).to_vec();
    if shape.len() != 2 || shape[0] < 2 {
        return Err(shape_err("gcl_loss", format!("need [2B, d] with 2B >= 2, got {shape:?}")));
    }
    let n = shape[0];
    if similarity.len() != n * n {
        return Err(shape_err(
            "gcl_loss",
            format!("{} similarity entries for {n} embeddings", similarity.len()),
        ));
    }
    for i in 0..n {
        for j in 0..n {
            let s = similarity[i * n + j];
            if !(0.0..=1.0).contains(&s) || s != similarity[j * n + i] {
                return Err(shape_err("gcl_loss", format!("similarity ({i}, {j}) = {s} not symmetric in [0, 1]")));
            }
        }
    }
    let weights = positive_weights(similarity, n, threshold);
    if weights.iter().all(|&w| w == 0.0) {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }

    let zt = tape.transpose(z)?;
    let gram = tape.matmul(z, zt)?;
    let logits = tape.scale(gram, T::of(1.0 / tau));
    let mask = Tensor::from_fn(vec![n, n], |k| if k / n == k % n { T::of(SELF_MASK) } else { T::zero() });
    let mask = tape.constant(mask);
    let logits = tape.add(logits, mask)?;
    let logits = tape.reshape(logits, &[n, n, 1, 1])?;
    let log_prob = tape.log_softmax_channels(logits)?;
    let log_prob = tape.reshape(log_prob, &[n, n])?;
    let w = tape.constant(Tensor::new(vec![n, n], weights.into_iter().map(T::of).collect())?);
    let weighted = tape.mul(log_prob, w)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, T::of(-1.0 / n as f64)))
}

/// Fails when no anchor in the batch has a positive; useful for callers that treat
/// a fully empty batch as a configuration error rather than a zero loss.
pub fn require_positives(similarity: &[f64], n: usize, threshold: f64) -> Result<()> {
    if positive_weights(similarity, n, threshold).iter().any(|&w| w > 0.0) {
        Ok(())
    } else {
        Err(LossError::NoPositives { threshold })
    }
}
