//! In-memory dataset access, batch assembly and input perturbations.

use std::path::Path;

use phantom::{generate_dataset, read_dataset, SliceRecord, Split, MANIFEST_FILE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tensorgrad::{Real, Tensor};

use crate::config::TrainConfig;
use crate::error::{Result, TrainError};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<SliceRecord>,
    pub height: usize,
    pub width: usize,
}

impl Dataset {
    pub fn new(records: Vec<SliceRecord>) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| TrainError::Invalid("dataset has no slices".into()))?;
        let (height, width) = (first.height(), first.width());
        if records.iter().any(|r| r.height() != height || r.width() != width) {
            return Err(TrainError::Invalid("slices differ in size".into()));
        }
        Ok(Dataset { records, height, width })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.join(MANIFEST_FILE).is_file() {
            return Err(TrainError::MissingFile(dir.join(MANIFEST_FILE)));
        }
        Self::new(read_dataset(dir)?)
    }

    /// Reads `data_dir` when set, otherwise generates the phantom dataset the config describes.
    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        match &cfg.data_dir {
            Some(dir) => Self::load(dir),
            None => Self::new(generate_dataset(&cfg.dataset_spec())?),
        }
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].split == split).collect()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// `[n, 1, H, W]` stack of the selected slice images.
    pub fn images<T: Real>(&self, idx: &[usize]) -> Tensor<T> {
        let mut data = Vec::with_capacity(idx.len() * self.pixels());
        for &i in idx {
            data.extend(self.records[i].image.data().iter().map(|&x| T::of(x as f64)));
        }
        Tensor::new(vec![idx.len(), 1, self.height, self.width], data).expect("sizes checked on construction")
    }

    /// Concatenated labels of the selected slices.
    pub fn labels(&self, idx: &[usize]) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(idx.len() * self.pixels());
        for &i in idx {
            let r = &self.records[i];
            let l = r.label.as_ref().ok_or_else(|| {
                TrainError::Invalid(format!(
                    "slice {} of volume {} ({}) has no label",
                    r.slice_index,
                    r.volume_id,
                    r.split.as_str()
                ))
            })?;
            out.extend_from_slice(l);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseRole {
    Student = 0,
    Teacher = 1,
}

/// Gaussian perturbation for one model's input at one step. Each (seed, step, role)
/// owns an independent ChaCha stream, so a run can be replayed step by step.
pub fn input_noise<T: Real>(seed: u64, step: usize, role: NoiseRole, len: usize, sigma: f64) -> Vec<T> {
    if sigma == 0.0 {
        return vec![T::zero(); len];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * step as u64 + role as u64);
    (0..len)
        .map(|_| T::of(sigma * rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

/// `images + noise`, elementwise.
pub fn perturb<T: Real>(images: &Tensor<T>, noise: &[T]) -> Tensor<T> {
    let data = images.data().iter().zip(noise).map(|(&x, &n)| x + n).collect();
    Tensor::new(images.shape().to_vec(), data).expect("same element count")
}
