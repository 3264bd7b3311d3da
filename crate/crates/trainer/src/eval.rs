//! Argmax prediction and per-volume evaluation of a parameter set.

use std::collections::BTreeMap;

use nets::{segment_forward, ModelParams};
use phantom::Split;
use tensorgrad::{Real, Tape};

use crate::data::Dataset;
use crate::error::{Result, TrainError};
use crate::metrics::{score_volumes, Scores};

const PREDICT_CHUNK: usize = 16;

/// Per-pixel argmax class of every selected slice, concatenated.
pub fn predict<T: Real>(params: &ModelParams<T>, data: &Dataset, idx: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(idx.len() * data.pixels());
    for chunk in idx.chunks(PREDICT_CHUNK) {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let x = tape.constant(data.images::<T>(chunk));
        let (_, dec) = segment_forward(&mut tape, &bound, x)?;
        let logits = tape.value(dec.logits);
        let c = logits.shape()[1];
        let hw = data.pixels();
        for n in 0..chunk.len() {
            for p in 0..hw {
                let mut best = 0;
                for k in 1..c {
                    if logits.data()[(n * c + k) * hw + p] > logits.data()[(n * c + best) * hw + p] {
                        best = k;
                    }
                }
                out.push(best as u8);
            }
        }
    }
    Ok(out)
}

/// Pools each volume's slices of `split`, then scores per volume.
pub fn evaluate<T: Real>(params: &ModelParams<T>, data: &Dataset, split: Split, classes: usize) -> Result<Scores> {
    if !split.has_labels() {
        return Err(TrainError::Invalid(format!("cannot evaluate on the {} split", split.as_str())));
    }
    let mut by_volume: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in data.indices(split) {
        by_volume.entry(data.records[i].volume_id).or_default().push(i);
    }
    if by_volume.is_empty() {
        return Err(TrainError::Invalid(format!("the {} split is empty", split.as_str())));
    }
    let mut volumes = Vec::with_capacity(by_volume.len());
    for idx in by_volume.values() {
        let truth = data.labels(idx)?;
        volumes.push((predict(params, data, idx)?, truth));
    }
    Ok(score_volumes(&volumes, classes))
}
