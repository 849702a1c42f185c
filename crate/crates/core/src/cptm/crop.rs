//! Tri-patch cropping: three patches of depth `pd` starting `pd/2` apart,
//! together spanning a window of depth `2·pd`.

use ndarray::{s, Array3, ArrayView3};

use crate::error::{Error, Result};

/// Padding applied in-plane before cropping.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Padding {
    /// Voxels added before and after along `(z, y, x)`.
    pub before: [usize; 3],
    pub after: [usize; 3],
    pub value: f64,
}

impl Padding {
    pub fn is_empty(&self) -> bool {
        self.before.iter().chain(&self.after).all(|&p| p == 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchTriple {
    pub patches: [Array3<f64>; 3],
    /// Patch starts along `z` in the (padded) source volume.
    pub z_offsets: [usize; 3],
    /// In-plane start `(y, x)` in the (padded) source volume.
    pub yx_offset: [usize; 2],
    pub overlap_depth: usize,
    pub padding: Padding,
}

impl PatchTriple {
    pub fn middle(&self) -> &Array3<f64> {
        &self.patches[1]
    }

    pub fn window_depth(&self) -> usize {
        self.z_offsets[2] + self.patches[2].dim().0 - self.z_offsets[0]
    }
}

/// Pads `volume` with `value` so it is at least `min_shape` along each axis,
/// splitting the padding evenly with the extra voxel after.
pub fn pad_to(
    volume: ArrayView3<f64>,
    min_shape: [usize; 3],
    value: f64,
) -> (Array3<f64>, Padding) {
    let (d, h, w) = volume.dim();
    let shape = [d, h, w];
    let mut pad = Padding {
        value,
        ..Padding::default()
    };
    for a in 0..3 {
        let extra = min_shape[a].saturating_sub(shape[a]);
        pad.before[a] = extra / 2;
        pad.after[a] = extra - extra / 2;
    }
    if pad.is_empty() {
        return (volume.to_owned(), pad);
    }
    let mut out = Array3::from_elem(
        (
            d + pad.before[0] + pad.after[0],
            h + pad.before[1] + pad.after[1],
            w + pad.before[2] + pad.after[2],
        ),
        value,
    );
    out.slice_mut(s![
        pad.before[0]..pad.before[0] + d,
        pad.before[1]..pad.before[1] + h,
        pad.before[2]..pad.before[2] + w
    ])
    .assign(&volume);
    (out, pad)
}

pub fn min_value(volume: ArrayView3<f64>) -> f64 {
    volume.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Range of valid window starts along `z` for a volume of depth `depth`.
pub fn window_starts(depth: usize, patch_depth: usize) -> Option<std::ops::RangeInclusive<usize>> {
    (depth >= 2 * patch_depth).then(|| 0..=depth - 2 * patch_depth)
}

/// Crops the three patches of `patch_shape` for the window starting at
/// `window_z` and in-plane offset `yx`. Volumes narrower than the patch are
/// padded in-plane with their minimum intensity first; `yx` then refers to
/// the padded volume.
pub fn tri_crop(
    volume: ArrayView3<f64>,
    patch_shape: [usize; 3],
    window_z: usize,
    yx: [usize; 2],
) -> Result<PatchTriple> {
    let (d, h, w) = volume.dim();
    if d == 0 || h == 0 || w == 0 {
        return Err(Error::Input(format!(
            "degenerate volume of shape {:?}",
            [d, h, w]
        )));
    }
    let [pd, ph, pw] = patch_shape;
    if pd == 0 || pd % 2 != 0 {
        return Err(Error::Config(format!(
            "patch depth {pd} must be even and positive"
        )));
    }
    if d < 2 * pd {
        return Err(Error::Input(format!(
            "volume depth {d} is less than the window depth {}",
            2 * pd
        )));
    }
    if window_z + 2 * pd > d {
        return Err(Error::Input(format!(
            "window at z={window_z} of depth {} overruns volume depth {d}",
            2 * pd
        )));
    }
    let (src, padding) = pad_to(volume, [0, ph, pw], min_value(volume));
    let (_, hp, wp) = src.dim();
    if yx[0] + ph > hp || yx[1] + pw > wp {
        return Err(Error::Input(format!(
            "in-plane offset {yx:?} with patch {ph}×{pw} overruns {hp}×{wp}"
        )));
    }
    let half = pd / 2;
    let z_offsets = [window_z, window_z + half, window_z + pd];
    let patches = z_offsets.map(|z| {
        src.slice(s![z..z + pd, yx[0]..yx[0] + ph, yx[1]..yx[1] + pw])
            .to_owned()
    });
    Ok(PatchTriple {
        patches,
        z_offsets,
        yx_offset: yx,
        overlap_depth: half,
        padding,
    })
}

/// Reassembles the `2·pd` window from the three patches.
pub fn stitch(triple: &PatchTriple) -> Array3<f64> {
    let (pd, ph, pw) = triple.patches[0].dim();
    let z0 = triple.z_offsets[0];
    let mut out = Array3::zeros((triple.window_depth(), ph, pw));
    for (p, &z) in triple.patches.iter().zip(&triple.z_offsets) {
        out.slice_mut(s![z - z0..z - z0 + pd, .., ..]).assign(p);
    }
    out
}
