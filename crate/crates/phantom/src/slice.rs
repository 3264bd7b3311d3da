use std::fmt;
use std::str::FromStr;

use tensorgrad::Tensor;

use crate::error::{DataError, Result};
use crate::generate::PhantomVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Labeled,
    Unlabeled,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Labeled, Split::Unlabeled, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Labeled => "labeled",
            Split::Unlabeled => "unlabeled",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn has_labels(self) -> bool {
        self != Split::Unlabeled
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.as_str() == s)
            .ok_or_else(|| format!("unknown split tag {s:?}"))
    }
}

/// One 2D slice of a volume with its normalized depth position.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceRecord {
    /// H×W intensities in [0, 1].
    pub image: Tensor<f32>,
    /// `slice_index / (depth - 1)`.
    pub position: f64,
    pub volume_id: usize,
    pub slice_index: usize,
    /// H×W class ids, present iff the split carries labels.
    pub label: Option<Vec<u8>>,
    pub split: Split,
}

impl SliceRecord {
    pub fn height(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[1]
    }
}

/// Position code of slice `k` in a volume of `depth` slices.
pub fn position_code(k: usize, depth: usize) -> f64 {
    k as f64 / (depth - 1) as f64
}

/// Cuts a volume into per-slice records. Labels are dropped for the unlabeled split.
pub fn slice_volume(volume: &PhantomVolume, volume_id: usize, split: Split) -> Result<Vec<SliceRecord>> {
    let (d, h, w) = (volume.depth, volume.height, volume.width);
    if d < 2 {
        return Err(DataError::TooFewSlices(d));
    }
    if volume.intensity.len() != d * h * w || volume.labels.len() != d * h * w {
        return Err(DataError::ShapeMismatch(format!(
            "{} intensities and {} labels for {d}x{h}x{w}",
            volume.intensity.len(),
            volume.labels.len()
        )));
    }
    (0..d)
        .map(|k| {
            Ok(SliceRecord {
                image: Tensor::new(vec![h, w], volume.intensity_slice(k).to_vec())?,
                position: position_code(k, d),
                volume_id,
                slice_index: k,
                label: split.has_labels().then(|| volume.label_slice(k).to_vec()),
                split,
            })
        })
        .collect()
}
