use ndarray::{s, Array3, Array4, ArrayView3, Axis};
use rayon::prelude::*;

use super::crop::{min_value, pad_to, tri_crop};
use super::model::{model_forward, CptmModel};
use crate::error::{Error, Result};
use crate::volume::{LabelVolume, ScalarVolume};

/// Starts `0, stride, 2·stride, …` with the last clamped to `len − size`.
pub fn tile_starts(len: usize, size: usize, stride: usize) -> Vec<usize> {
    if len <= size {
        return vec![0];
    }
    let mut out: Vec<usize> = (0..)
        .map(|i| i * stride)
        .take_while(|&s| s + size < len)
        .collect();
    out.push(len - size);
    out
}

/// Averaged middle-patch logits `(n_classes, d, h, w)` over every window.
///
/// The volume is padded by `pd/2` slices of its minimum intensity at both
/// ends of `z`, so every slice can sit in a middle patch. Middle patches
/// start every `pd/2` slices (the last clamped to the end); in-plane the
/// volume is tiled with patch-sized steps. Windows run in parallel and are
/// accumulated in a fixed order.
pub fn sliding_logits(model: &CptmModel, volume: ArrayView3<f64>) -> Result<Array4<f64>> {
    let c = model.config();
    let [pd, ph, pw] = c.patch_shape;
    let (d, h, w) = volume.dim();
    if d == 0 || h == 0 || w == 0 {
        return Err(Error::Input(format!(
            "degenerate volume of shape {:?}",
            [d, h, w]
        )));
    }
    if d < pd {
        return Err(Error::Input(format!(
            "volume depth {d} is less than the patch depth {pd}"
        )));
    }
    let fill = min_value(volume);
    let half = pd / 2;
    let (padded, pad) = pad_to(volume, [d + pd, ph, pw], fill);
    // pad_to centres the padding; along z that is exactly pd/2 each side.
    debug_assert_eq!(pad.before[0], half);
    let (_, hp, wp) = padded.dim();
    let mut windows = Vec::new();
    for &z in &tile_starts(d, pd, half) {
        for &y in &tile_starts(hp, ph, ph) {
            for &x in &tile_starts(wp, pw, pw) {
                windows.push((z, y, x));
            }
        }
    }
    let outputs: Vec<Array4<f64>> = windows
        .par_iter()
        .map(|&(z, y, x)| {
            let triple = tri_crop(padded.view(), c.patch_shape, z, [y, x])?;
            model_forward(model, &triple)
        })
        .collect::<Result<_>>()?;
    let mut acc = Array4::<f64>::zeros((c.n_classes, d, hp, wp));
    let mut count = Array3::<f64>::zeros((d, hp, wp));
    for (&(z, y, x), out) in windows.iter().zip(&outputs) {
        acc.slice_mut(s![.., z..z + pd, y..y + ph, x..x + pw])
            .zip_mut_with(out, |a, &o| *a += o);
        count
            .slice_mut(s![z..z + pd, y..y + ph, x..x + pw])
            .mapv_inplace(|n| n + 1.0);
    }
    let (y0, x0) = (pad.before[1], pad.before[2]);
    let mut acc = acc.slice(s![.., .., y0..y0 + h, x0..x0 + w]).to_owned();
    let count = count.slice(s![.., y0..y0 + h, x0..x0 + w]).to_owned();
    for mut class in acc.axis_iter_mut(Axis(0)) {
        class.zip_mut_with(&count, |a, &n| *a /= n);
    }
    Ok(acc)
}

/// Per-voxel argmax of `(n_classes, d, h, w)` logits; ties go to the lower
/// class.
pub fn argmax_labels(logits: &Array4<f64>) -> Array3<u16> {
    let (c, d, h, w) = logits.dim();
    Array3::from_shape_fn((d, h, w), |(z, y, x)| {
        let mut best = 0;
        for k in 1..c {
            if logits[[k, z, y, x]] > logits[[best, z, y, x]] {
                best = k;
            }
        }
        best as u16
    })
}

/// Sliding-window segmentation of a whole volume.
pub fn sliding_infer(model: &CptmModel, volume: &ScalarVolume) -> Result<LabelVolume> {
    let logits = sliding_logits(model, volume.data.view())?;
    LabelVolume::new(argmax_labels(&logits), volume.spacing, volume.origin)
}
