//! Synthetic multi-organ phantoms and everything needed to feed them to training:
//! slicing with position codes, positional similarity, paired-view augmentation,
//! volume-level splits, and the raster/manifest file formats.

mod augment;
mod dataset;
mod error;
mod generate;
mod raster;
mod similarity;
mod slice;
mod split;

pub use augment::{augment_pair, augment_view, AugmentConfig, View};
pub use dataset::{generate_dataset, read_dataset, write_dataset, DatasetSpec, MANIFEST_FILE};
pub use error::{DataError, Result};
pub use generate::{class_intensity, gen_phantom, PhantomSpec, PhantomVolume};
pub use raster::{decode_raster, encode_raster, read_raster, write_raster, RASTER_MAGIC, RASTER_VERSION};
pub use similarity::{similarity, similarity_matrix, SimilarityMatrix};
pub use slice::{position_code, slice_volume, SliceRecord, Split};
pub use split::{split_dataset, SplitSizes};
