//! Synthetic elongated "spine" phantoms.
//!
//! A body block runs through the whole volume. Inside it, `n_segments`
//! labelled segments are stacked along `z` below a margin of `z_offset`
//! slices. Each segment is a solid slab whose last slice is dimmer (the
//! "disc"). With `ambiguity` on every segment looks the same, so its index
//! can only be read off its distance to the ends of the column.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{VERTEBRA_FIRST, VERTEBRA_LAST};
use crate::volume::{LabelVolume, ScalarVolume};

pub const MAX_SEGMENTS: usize = (VERTEBRA_LAST - VERTEBRA_FIRST + 1) as usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub n_segments: usize,
    pub segment_depth_vox: usize,
    /// `(d, h, w)`.
    pub shape: [usize; 3],
    /// `(z, y, x)` mm.
    pub spacing: [f64; 3],
    /// Segment intensity above the soft-tissue level.
    pub contrast: f64,
    pub noise_sigma: f64,
    pub ambiguity: bool,
    pub seed: u64,
    /// Slices of soft tissue above the first segment.
    pub z_offset: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            n_segments: 12,
            segment_depth_vox: 4,
            shape: [56, 8, 8],
            spacing: [4.0, 1.0, 1.0],
            contrast: 1.0,
            noise_sigma: 0.05,
            ambiguity: true,
            seed: 0,
            z_offset: 4,
        }
    }
}

/// Intensity of soft tissue inside the body; air outside is 0.
pub const TISSUE_LEVEL: f64 = 0.2;

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_segments == 0 || self.n_segments > MAX_SEGMENTS {
            return bad(format!(
                "n_segments must be in 1..={MAX_SEGMENTS}, got {}",
                self.n_segments
            ));
        }
        if self.segment_depth_vox < 2 {
            return bad(format!(
                "segment_depth_vox must be at least 2, got {}",
                self.segment_depth_vox
            ));
        }
        if self.shape.contains(&0) {
            return bad(format!("shape {:?} has an empty axis", self.shape));
        }
        if self.shape[1] < 2 || self.shape[2] < 2 {
            return bad(format!(
                "in-plane shape {:?} too small for a body",
                &self.shape[1..]
            ));
        }
        let end = self.z_offset + self.n_segments * self.segment_depth_vox;
        if end > self.shape[0] {
            return bad(format!(
                "segments span slices {}..{end} but the volume has only {}",
                self.z_offset, self.shape[0]
            ));
        }
        if !self.spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
            return bad(format!("spacing {:?} must be positive", self.spacing));
        }
        if !(self.contrast.is_finite() && self.contrast > 0.0) {
            return bad(format!("contrast must be positive, got {}", self.contrast));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            ));
        }
        Ok(())
    }

    /// Half-open in-plane body extents `(y0, y1, x0, x1)`: the middle half.
    pub fn body_box(&self) -> (usize, usize, usize, usize) {
        let [_, h, w] = self.shape;
        (h / 4, h - h / 4, w / 4, w - w / 4)
    }

    /// Half-open slice range of segment `k`.
    pub fn segment_range(&self, k: usize) -> std::ops::Range<usize> {
        let s = self.z_offset + k * self.segment_depth_vox;
        s..s + self.segment_depth_vox
    }

    fn segment_level(&self, k: usize) -> f64 {
        if self.ambiguity {
            TISSUE_LEVEL + self.contrast
        } else {
            TISSUE_LEVEL + self.contrast * (1.0 + k as f64 / self.n_segments as f64)
        }
    }
}

pub struct Phantom {
    pub image: ScalarVolume,
    pub labels: LabelVolume,
}

/// Segment `k` carries class `9 + k`. Deterministic in `spec.seed`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let [d, h, w] = spec.shape;
    let (y0, y1, x0, x1) = spec.body_box();
    let depth = spec.segment_depth_vox;
    let spine = spec.z_offset..spec.z_offset + spec.n_segments * depth;
    let segment_of = |z: usize| spine.contains(&z).then(|| (z - spec.z_offset) / depth);
    let mut image = Array3::<f64>::zeros((d, h, w));
    let mut labels = Array3::<u16>::zeros((d, h, w));
    for ((z, y, x), v) in image.indexed_iter_mut() {
        if !((y0..y1).contains(&y) && (x0..x1).contains(&x)) {
            continue;
        }
        *v = match segment_of(z) {
            None => TISSUE_LEVEL,
            Some(k) => {
                labels[[z, y, x]] = VERTEBRA_FIRST + k as u16;
                let level = spec.segment_level(k);
                let last = (z - spec.z_offset) % depth == depth - 1;
                if last {
                    TISSUE_LEVEL + 0.5 * (level - TISSUE_LEVEL)
                } else {
                    level
                }
            }
        };
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal =
            Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        for v in image.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(Phantom {
        image: ScalarVolume::new(image, spec.spacing, [0.0; 3])?,
        labels: LabelVolume::new(labels, spec.spacing, [0.0; 3])?,
    })
}
