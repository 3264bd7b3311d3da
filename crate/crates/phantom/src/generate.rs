//! Synthetic multi-organ phantom volumes.
//!
//! Organs are nested elliptic cylinders whose cross-section radii and centers
//! drift smoothly with depth, so neighbouring slices look alike and distant
//! slices do not. Organ `c + 1` always lies inside organ `c`; each voxel takes
//! the label of the innermost organ containing it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DataError, Result};

/// Smallest semi-axis (in pixels) accepted for the innermost organ.
const MIN_RADIUS_PX: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    /// Foreground organ count; labels are `1..=organs`, background is 0.
    pub organs: usize,
    pub noise_sigma: f64,
    /// Background blobs carrying organ intensities but background labels.
    pub distractors: usize,
    /// Peak relative amplitude of a linear multiplicative bias field.
    pub bias_field: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            depth: 16,
            height: 64,
            width: 64,
            organs: 3,
            noise_sigma: 0.05,
            distractors: 0,
            bias_field: 0.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 4 {
            return Err(DataError::InvalidSpec(format!("depth {} < 4", self.depth)));
        }
        if self.organs == 0 {
            return Err(DataError::InvalidSpec("at least one organ required".into()));
        }
        if self.organs > u8::MAX as usize - 1 {
            return Err(DataError::InvalidSpec(format!("{} organs exceed label range", self.organs)));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(DataError::InvalidSpec(format!("noise sigma {}", self.noise_sigma)));
        }
        if !(0.0..1.0).contains(&self.bias_field) {
            return Err(DataError::InvalidSpec(format!("bias field {}", self.bias_field)));
        }
        if self.height == 0 || self.width == 0 {
            return Err(DataError::InvalidSpec("empty slice dimensions".into()));
        }
        Ok(())
    }
}

/// Mean intensity of a class; background is 0.1, organs evenly spaced up to 0.85.
pub fn class_intensity(class: usize, organs: usize) -> f64 {
    0.1 + 0.75 * class as f64 / organs as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomVolume {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    /// D×H×W intensities in [0, 1], row-major.
    pub intensity: Vec<f32>,
    /// D×H×W labels in `0..=organs`, row-major.
    pub labels: Vec<u8>,
}

impl PhantomVolume {
    pub fn slice_len(&self) -> usize {
        self.height * self.width
    }

    pub fn intensity_slice(&self, k: usize) -> &[f32] {
        &self.intensity[k * self.slice_len()..(k + 1) * self.slice_len()]
    }

    pub fn label_slice(&self, k: usize) -> &[u8] {
        &self.labels[k * self.slice_len()..(k + 1) * self.slice_len()]
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let dy = (y - self.cy) / self.ry;
        let dx = (x - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }
}

/// Per-volume random layout, fixed across slices.
struct Layout {
    center: (f64, f64),
    scale: f64,
    aspect: f64,
    child_angles: Vec<f64>,
    means: Vec<f64>,
    distractors: Vec<(f64, f64, f64, f64)>,
    bias: (f64, f64),
}

/// Child-to-parent radius ratio at normalized depth `z`; alternates trend per level.
fn child_ratio(level: usize, z: f64) -> f64 {
    if level % 2 == 1 {
        0.78 - 0.18 * z
    } else {
        0.5 + 0.1 * z
    }
}

fn organ_ellipses(spec: &PhantomSpec, layout: &Layout, z: f64) -> Vec<Ellipse> {
    let (h, w) = (spec.height as f64, spec.width as f64);
    let grow = 0.65 + 0.35 * z;
    let mut out = Vec::with_capacity(spec.organs);
    let mut e = Ellipse {
        cy: layout.center.0,
        cx: layout.center.1,
        ry: 0.33 * h * layout.scale * grow,
        rx: 0.33 * w * layout.scale * layout.aspect * grow,
    };
    out.push(e);
    for level in 1..spec.organs {
        let rho = child_ratio(level, z);
        // offset magnitude below (1 - rho) keeps the child inside its parent
        let reach = (1.0 - rho) * (0.25 + 0.5 * z);
        let a = layout.child_angles[level - 1];
        e = Ellipse {
            cy: e.cy + e.ry * reach * a.sin(),
            cx: e.cx + e.rx * reach * a.cos(),
            ry: e.ry * rho,
            rx: e.rx * rho,
        };
        out.push(e);
    }
    out
}

fn random_layout(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Layout {
    let (h, w) = (spec.height as f64, spec.width as f64);
    let center = (
        h / 2.0 + rng.gen_range(-0.06..0.06) * h,
        w / 2.0 + rng.gen_range(-0.06..0.06) * w,
    );
    let scale = rng.gen_range(0.85..1.05);
    let aspect = rng.gen_range(0.9..1.15);
    let child_angles = (1..spec.organs)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    let means = (0..=spec.organs)
        .map(|c| class_intensity(c, spec.organs) + rng.gen_range(-0.02..0.02))
        .collect();
    let mut distractors = Vec::with_capacity(spec.distractors);
    for _ in 0..spec.distractors {
        // corners of the field of view stay clear of the largest organ extent
        let corner_y = if rng.gen_bool(0.5) { 0.12 } else { 0.88 };
        let corner_x = if rng.gen_bool(0.5) { 0.12 } else { 0.88 };
        let cy = (corner_y + rng.gen_range(-0.04..0.04)) * h;
        let cx = (corner_x + rng.gen_range(-0.04..0.04)) * w;
        let r = rng.gen_range(0.05..0.08) * h.min(w);
        let class = rng.gen_range(1..=spec.organs);
        distractors.push((cy, cx, r, class as f64));
    }
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let amp = if spec.bias_field > 0.0 {
        rng.gen_range(0.0..spec.bias_field)
    } else {
        0.0
    };
    Layout {
        center,
        scale,
        aspect,
        child_angles,
        means,
        distractors,
        bias: (amp, theta),
    }
}

fn check_fit(spec: &PhantomSpec) -> Result<()> {
    // worst case over the layout ranges: smallest scale for the innermost organ,
    // largest scale plus center jitter for the outermost
    let (h, w) = (spec.height as f64, spec.width as f64);
    let mut min_inner = f64::INFINITY;
    for &z in &[0.0, 1.0] {
        let mut r = 0.33 * h.min(w) * 0.85 * 0.9 * (0.65 + 0.35 * z);
        for level in 1..spec.organs {
            r *= child_ratio(level, z);
        }
        min_inner = min_inner.min(r);
    }
    if min_inner < MIN_RADIUS_PX {
        return Err(DataError::DoesNotFit(format!(
            "innermost organ radius {min_inner:.2}px below {MIN_RADIUS_PX}px in a {}x{} slice with {} nested organs",
            spec.height, spec.width, spec.organs
        )));
    }
    let outer = 0.33 * 1.05 * 1.15;
    if 0.5 - 0.06 - outer <= 0.0 {
        return Err(DataError::DoesNotFit("outer organ exceeds the field of view".into()));
    }
    Ok(())
}

/// Generates one phantom volume. Pure function of `spec` (including its seed).
pub fn gen_phantom(spec: &PhantomSpec) -> Result<PhantomVolume> {
    spec.validate()?;
    check_fit(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layout = random_layout(spec, &mut rng);
    let (d, h, w) = (spec.depth, spec.height, spec.width);
    let mut labels = vec![0u8; d * h * w];
    let mut intensity = vec![0f32; d * h * w];
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let (amp, theta) = layout.bias;
    for k in 0..d {
        let z = k as f64 / (d - 1) as f64;
        let organs = organ_ellipses(spec, &layout, z);
        for y in 0..h {
            for x in 0..w {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                let mut label = 0usize;
                for (c, e) in organs.iter().enumerate() {
                    if e.contains(py, px) {
                        label = c + 1;
                    } else {
                        break;
                    }
                }
                let mut mean = layout.means[label];
                if label == 0 {
                    for &(cy, cx, r, class) in &layout.distractors {
                        let (dy, dx) = (py - cy, px - cx);
                        if dy * dy + dx * dx <= r * r {
                            mean = layout.means[class as usize];
                        }
                    }
                }
                let u = (px / w as f64 - 0.5) * theta.cos() + (py / h as f64 - 0.5) * theta.sin();
                let mut v = mean * (1.0 + amp * 2.0 * u);
                if spec.noise_sigma > 0.0 {
                    v += noise.sample(&mut rng);
                }
                let idx = (k * h + y) * w + x;
                labels[idx] = label as u8;
                intensity[idx] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(PhantomVolume {
        depth: d,
        height: h,
        width: w,
        intensity,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_shallow_and_tiny_volumes() {
        let shallow = PhantomSpec {
            depth: 3,
            ..Default::default()
        };
        assert!(matches!(gen_phantom(&shallow), Err(DataError::InvalidSpec(_))));
        let tiny = PhantomSpec {
            height: 8,
            width: 8,
            ..Default::default()
        };
        assert!(matches!(gen_phantom(&tiny), Err(DataError::DoesNotFit(_))));
        let deep = PhantomSpec {
            organs: 7,
            ..Default::default()
        };
        assert!(matches!(gen_phantom(&deep), Err(DataError::DoesNotFit(_))));
    }

    #[test]
    fn child_ellipses_stay_inside_parents() {
        let spec = PhantomSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let layout = random_layout(&spec, &mut rng);
            for &z in &[0.0, 0.3, 1.0] {
                let es = organ_ellipses(&spec, &layout, z);
                for pair in es.windows(2) {
                    let (p, c) = (pair[0], pair[1]);
                    // sample the child boundary
                    for t in 0..64 {
                        let a = t as f64 / 64.0 * std::f64::consts::TAU;
                        let y = c.cy + c.ry * a.sin();
                        let x = c.cx + c.rx * a.cos();
                        assert!(p.contains(y, x));
                    }
                }
            }
        }
    }
}
