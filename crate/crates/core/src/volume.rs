//! Volumes with physical geometry. Axis order is always `(z, y, x)`.

use ndarray::{s, Array3};

use crate::error::{Error, Result};

fn check_spacing(spacing: [f64; 3]) -> Result<()> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "spacing must be strictly positive, got {spacing:?}"
        )))
    }
}

/// Position of a voxel centre in millimetres.
pub fn physical_position(index: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> [f64; 3] {
    [
        index[0] as f64 * spacing[0] + origin[0],
        index[1] as f64 * spacing[1] + origin[1],
        index[2] as f64 * spacing[2] + origin[2],
    ]
}

/// Intensity volume (CT values, phantom intensities).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    pub data: Array3<f64>,
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl ScalarVolume {
    pub fn new(data: Array3<f64>, spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        check_spacing(spacing)?;
        Ok(Self {
            data,
            spacing,
            origin,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        let d = self.data.dim();
        [d.0, d.1, d.2]
    }
}

/// Integer class map: ground truth, pseudo labels or fused output.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub voxels: Array3<u16>,
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl LabelVolume {
    pub fn new(voxels: Array3<u16>, spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        check_spacing(spacing)?;
        Ok(Self {
            voxels,
            spacing,
            origin,
        })
    }

    /// Unit spacing, zero origin.
    pub fn from_voxels(voxels: Array3<u16>) -> Self {
        Self {
            voxels,
            spacing: [1.0; 3],
            origin: [0.0; 3],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            voxels: Array3::zeros(self.voxels.raw_dim()),
            spacing: self.spacing,
            origin: self.origin,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        let d = self.voxels.dim();
        [d.0, d.1, d.2]
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn position(&self, index: [usize; 3]) -> [f64; 3] {
        physical_position(index, self.spacing, self.origin)
    }

    /// Errors unless both volumes share shape, spacing and origin.
    pub fn check_same_geometry(&self, other: &LabelVolume) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Data(format!(
                "geometry mismatch: shapes {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        if self.spacing != other.spacing || self.origin != other.origin {
            return Err(Error::Data(format!(
                "geometry mismatch: spacing {:?}/{:?}, origin {:?}/{:?}",
                self.spacing, other.spacing, self.origin, other.origin
            )));
        }
        Ok(())
    }

    /// Sub-volume starting at `start` with extents `shape`; the origin moves
    /// so physical positions are preserved.
    pub fn crop(&self, start: [usize; 3], shape: [usize; 3]) -> Result<LabelVolume> {
        let full = self.shape();
        if (0..3).any(|a| shape[a] == 0 || start[a] + shape[a] > full[a]) {
            return Err(Error::Input(format!(
                "crop {start:?}+{shape:?} outside volume {full:?}"
            )));
        }
        let voxels = self
            .voxels
            .slice(s![
                start[0]..start[0] + shape[0],
                start[1]..start[1] + shape[1],
                start[2]..start[2] + shape[2]
            ])
            .to_owned();
        Ok(LabelVolume {
            voxels,
            spacing: self.spacing,
            origin: self.position(start),
        })
    }

    pub fn max_label(&self) -> u16 {
        self.voxels.iter().copied().max().unwrap_or(0)
    }
}
