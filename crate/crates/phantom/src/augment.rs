//! Paired-view augmentation for contrastive pretraining.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use tensorgrad::Tensor;

use crate::slice::SliceRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Fraction of the slice area kept by the random crop before resizing back.
    pub crop_area: f64,
    pub scale_range: (f64, f64),
    pub shift_range: (f64, f64),
    pub noise_sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            crop_area: 0.875,
            scale_range: (0.9, 1.1),
            shift_range: (-0.1, 0.1),
            noise_sigma: 0.02,
        }
    }
}

impl AugmentConfig {
    /// Every step disabled; views equal the input.
    pub fn identity() -> Self {
        AugmentConfig {
            flip_prob: 0.0,
            crop_area: 1.0,
            scale_range: (1.0, 1.0),
            shift_range: (0.0, 0.0),
            noise_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub image: Tensor<f32>,
    pub label: Option<Vec<u8>>,
    pub position: f64,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn bilinear(src: &[f32], w: usize, y: f64, x: f64) -> f32 {
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let h = src.len() / w;
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = ((y - y0 as f64) as f32, (x - x0 as f64) as f32);
    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
    let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// One augmented view: flip, crop-and-resize, intensity scale/shift, noise.
/// Label geometry follows the image geometry.
pub fn augment_view<R: Rng + ?Sized>(slice: &SliceRecord, config: &AugmentConfig, rng: &mut R) -> View {
    let (h, w) = (slice.height(), slice.width());
    let mut img = slice.image.data().to_vec();
    let mut label = slice.label.clone();

    if config.flip_prob > 0.0 && rng.gen_bool(config.flip_prob.min(1.0)) {
        for row in img.chunks_mut(w) {
            row.reverse();
        }
        if let Some(l) = label.as_mut() {
            for row in l.chunks_mut(w) {
                row.reverse();
            }
        }
    }

    if config.crop_area < 1.0 {
        let side = config.crop_area.sqrt();
        let ch = ((h as f64 * side).round() as usize).clamp(1, h);
        let cw = ((w as f64 * side).round() as usize).clamp(1, w);
        let oy = rng.gen_range(0..=h - ch);
        let ox = rng.gen_range(0..=w - cw);
        let mut out = vec![0f32; h * w];
        let mut out_label = label.as_ref().map(|_| vec![0u8; h * w]);
        for y in 0..h {
            // pixel-center alignment of the crop window onto the full grid
            let sy = ((y as f64 + 0.5) * ch as f64 / h as f64 - 0.5).clamp(0.0, (ch - 1) as f64);
            for x in 0..w {
                let sx = ((x as f64 + 0.5) * cw as f64 / w as f64 - 0.5).clamp(0.0, (cw - 1) as f64);
                out[y * w + x] = bilinear(&img, w, oy as f64 + sy, ox as f64 + sx);
                if let (Some(ol), Some(l)) = (out_label.as_mut(), label.as_ref()) {
                    let ny = oy + (sy.round() as usize);
                    let nx = ox + (sx.round() as usize);
                    ol[y * w + x] = l[ny * w + nx];
                }
            }
        }
        img = out;
        label = out_label;
    }

    let scale = uniform(rng, config.scale_range) as f32;
    let shift = uniform(rng, config.shift_range) as f32;
    if scale != 1.0 || shift != 0.0 {
        for v in &mut img {
            *v = (*v * scale + shift).clamp(0.0, 1.0);
        }
    }
    if config.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, config.noise_sigma).expect("positive sigma");
        for v in &mut img {
            *v = (*v + noise.sample(rng) as f32).clamp(0.0, 1.0);
        }
    }
    View {
        image: Tensor::new(vec![h, w], img).expect("shape preserved"),
        label,
        position: slice.position,
    }
}

/// Two independent views of the same slice.
pub fn augment_pair<R: Rng + ?Sized>(slice: &SliceRecord, config: &AugmentConfig, rng: &mut R) -> (View, View) {
    let a = augment_view(slice, config, rng);
    let b = augment_view(slice, config, rng);
    (a, b)
}
