//! Per-class mean of projected pixel features.

use tensorgrad::{Real, Tape, Tensor, Var};

use crate::error::{shape_err, LossError, Result};

/// Mask centers of one image: row `c - 1` of `centers` is `M_c` for foreground class `c`.
/// Rows of absent classes are zero and must be ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskCenterSet {
    pub centers: Var,
    pub present: Vec<bool>,
    pub counts: Vec<usize>,
}

impl MaskCenterSet {
    pub fn classes(&self) -> usize {
        self.present.len()
    }

    pub fn is_present(&self, class: usize) -> bool {
        class >= 1 && self.present.get(class - 1).copied().unwrap_or(false)
    }

    /// Raw center values, `None` for absent classes.
    pub fn values<T: Real>(&self, tape: &Tape<T>) -> Vec<Option<Vec<f64>>> {
        let t = tape.value(self.centers);
        let k = t.shape()[1];
        self.present
            .iter()
            .enumerate()
            .map(|(c, &p)| p.then(|| t.data()[c * k..(c + 1) * k].iter().map(|x| x.as_f64()).collect()))
            .collect()
    }

    /// Row of class `c` (1-based) as a `[1, K]` variable.
    pub fn row<T: Real>(&self, tape: &mut Tape<T>, class: usize) -> Result<Var> {
        Ok(tape.slice_batch(self.centers, class - 1, 1)?)
    }
}

/// `projected` is `[N, K, H, W]`, `mask` holds `N·H·W` class ids in `0..=classes_fg`.
/// Background (class 0) gets no center.
pub fn mask_centers<T: Real>(
    tape: &mut Tape<T>,
    projected: Var,
    mask: &[u8],
    classes_fg: usize,
) -> Result<Vec<MaskCenterSet>> {
    let shape = tape.shape(projected).to_vec();
    if shape.len() != 4 {
        return Err(shape_err("mask_centers", format!("need [N, K, H, W], got {shape:?}")));
    }
    let (n, k, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    if mask.len() != n * hw {
        return Err(shape_err(
            "mask_centers",
            format!("mask has {} entries, features cover {n}×{}×{}", mask.len(), shape[2], shape[3]),
        ));
    }
    if let Some(&bad) = mask.iter().find(|&&m| m as usize > classes_fg) {
        return Err(LossError::LabelOutOfRange {
            label: bad,
            max: classes_fg,
        });
    }
    let mut out = Vec::with_capacity(n);
    for img in 0..n {
        let labels = &mask[img * hw..(img + 1) * hw];
        let mut counts = vec![0usize; classes_fg];
        for &l in labels.iter().filter(|&&l| l > 0) {
            counts[l as usize - 1] += 1;
        }
        // averaging matrix A[p, c-1] = 1/count_c for pixels of class c
        let mut avg = vec![T::zero(); hw * classes_fg];
        for (p, &l) in labels.iter().enumerate() {
            if l > 0 {
                let c = l as usize - 1;
                avg[p * classes_fg + c] = T::one() / T::of(counts[c] as f64);
            }
        }
        let avg = tape.constant(Tensor::new(vec![hw, classes_fg], avg)?);
        let feats = tape.slice_batch(projected, img, 1)?;
        let feats = tape.reshape(feats, &[k, hw])?;
        let centers = tape.matmul(feats, avg)?;
        let centers = tape.transpose(centers)?;
        out.push(MaskCenterSet {
            centers,
            present: counts.iter().map(|&c| c > 0).collect(),
            counts,
        });
    }
    Ok(out)
}
