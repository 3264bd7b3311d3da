//! Phantom datasets on disk: one raster per slice image and label, plus a
//! manifest with one line per slice:
//! `file,volume_id,slice_index,position,split,label_file`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorgrad::Tensor;

use crate::error::{DataError, Result};
use crate::generate::{gen_phantom, PhantomSpec};
use crate::raster::{read_raster, write_raster};
use crate::slice::{slice_volume, SliceRecord, Split};
use crate::split::{split_dataset, SplitSizes};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    /// Template for every volume; its seed is replaced per volume.
    pub phantom: PhantomSpec,
    pub volumes: usize,
    pub sizes: SplitSizes,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            phantom: PhantomSpec::default(),
            volumes: 40,
            sizes: SplitSizes {
                labeled: 4,
                unlabeled: 28,
                val: 2,
                test: 6,
            },
            seed: 0,
        }
    }
}

/// Generates, splits and slices every volume. Unassigned volumes are skipped.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<SliceRecord>> {
    let assignment = split_dataset(spec.volumes, spec.sizes, spec.seed)?;
    let mut seeds = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0f_f0a1);
    let mut records = Vec::new();
    for (vid, split) in assignment.into_iter().enumerate() {
        let vol_seed = seeds.next_u64();
        let Some(split) = split else { continue };
        let volume = gen_phantom(&PhantomSpec {
            seed: vol_seed,
            ..spec.phantom.clone()
        })?;
        records.extend(slice_volume(&volume, vid, split)?);
    }
    Ok(records)
}

fn stem(r: &SliceRecord) -> String {
    format!("v{:04}_s{:03}", r.volume_id, r.slice_index)
}

pub fn write_dataset(dir: &Path, records: &[SliceRecord]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let mut manifest = String::new();
    for r in records {
        let s = stem(r);
        let file = format!("{s}.dclt");
        write_raster(&dir.join(&file), &s, &r.image)?;
        let label_file = match &r.label {
            Some(l) => {
                let name = format!("{s}_label.dclt");
                let t = Tensor::new(
                    vec![r.height(), r.width()],
                    l.iter().map(|&c| c as f32).collect(),
                )?;
                write_raster(&dir.join(&name), &format!("{s}_label"), &t)?;
                name
            }
            None => String::new(),
        };
        writeln!(
            manifest,
            "{file},{},{},{},{},{label_file}",
            r.volume_id, r.slice_index, r.position, r.split
        )
        .expect("writing to a String");
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| DataError::io(&path, e))
}

pub fn read_dataset(dir: &Path) -> Result<Vec<SliceRecord>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |detail: String| DataError::Manifest {
            line: line_no,
            detail,
        };
        let fields: Vec<&str> = line.split(',').collect();
        let [file, vid, idx, pos, split, label_file] = fields[..] else {
            return Err(bad(format!("expected 6 fields, found {}", fields.len())));
        };
        let volume_id = vid.parse().map_err(|_| bad(format!("volume id {vid:?}")))?;
        let slice_index = idx.parse().map_err(|_| bad(format!("slice index {idx:?}")))?;
        let position: f64 = pos.parse().map_err(|_| bad(format!("position {pos:?}")))?;
        let split: Split = split.parse().map_err(bad)?;
        let (_, image) = read_raster::<f32>(&dir.join(file))?;
        if image.rank() != 2 {
            return Err(bad(format!("image {file} has shape {:?}", image.shape())));
        }
        let label = if label_file.is_empty() {
            None
        } else {
            let (_, l) = read_raster::<f32>(&dir.join(label_file))?;
            if l.shape() != image.shape() {
                return Err(bad(format!("label {label_file} shape differs from image")));
            }
            Some(l.data().iter().map(|&c| c as u8).collect())
        };
        if label.is_some() != split.has_labels() {
            return Err(bad(format!("split {split} with label file {label_file:?}")));
        }
        out.push(SliceRecord {
            image,
            position,
            volume_id,
            slice_index,
            label,
            split,
        });
    }
    Ok(out)
}
