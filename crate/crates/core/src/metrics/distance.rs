//! Surface extraction and exact Euclidean distance transforms on anisotropic
//! grids.

use ndarray::{Array3, ArrayView3};

/// Voxels of `mask` with at least one 6-neighbour outside the mask. The
/// volume border counts as outside.
pub fn surface_voxels(mask: ArrayView3<bool>) -> Vec<[usize; 3]> {
    let (d, h, w) = mask.dim();
    let mut out = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if !mask[[z, y, x]] {
                    continue;
                }
                let interior = z > 0
                    && z + 1 < d
                    && y > 0
                    && y + 1 < h
                    && x > 0
                    && x + 1 < w
                    && mask[[z - 1, y, x]]
                    && mask[[z + 1, y, x]]
                    && mask[[z, y - 1, x]]
                    && mask[[z, y + 1, x]]
                    && mask[[z, y, x - 1]]
                    && mask[[z, y, x + 1]];
                if !interior {
                    out.push([z, y, x]);
                }
            }
        }
    }
    out
}

/// One-dimensional squared distance transform (lower envelope of parabolas)
/// with sample positions `i·step`. Infinite inputs are not features.
fn edt_1d(f: &mut [f64], step: f64, v: &mut Vec<usize>, zs: &mut Vec<f64>, out: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    zs.clear();
    let pos = |i: usize| i as f64 * step;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + pos(q) * pos(q);
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    zs.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let fp = f[p] + pos(p) * pos(p);
                    let s = (fq - fp) / (2.0 * (pos(q) - pos(p)));
                    if s <= *zs.last().unwrap() {
                        v.pop();
                        zs.pop();
                    } else {
                        v.push(q);
                        zs.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        return;
    }
    out.clear();
    let mut k = 0;
    for q in 0..n {
        let x = pos(q);
        while k + 1 < v.len() && zs[k + 1] < x {
            k += 1;
        }
        let dx = x - pos(v[k]);
        out.push(dx * dx + f[v[k]]);
    }
    f.copy_from_slice(out);
}

/// Squared distance in mm from every voxel to the nearest feature voxel.
/// Voxels are infinitely far when there are no features.
pub fn squared_edt(features: ArrayView3<bool>, spacing: [f64; 3]) -> Array3<f64> {
    let mut dist = features.mapv(|f| if f { 0.0 } else { f64::INFINITY });
    let shape = dist.shape().to_vec();
    let (mut v, mut zs, mut out) = (Vec::new(), Vec::new(), Vec::new());
    let mut line = Vec::new();
    for axis in [2usize, 1, 0] {
        let n = shape[axis];
        let step = spacing[axis];
        for mut lane in dist.lanes_mut(ndarray::Axis(axis)) {
            line.clear();
            line.extend(lane.iter().copied());
            debug_assert_eq!(line.len(), n);
            edt_1d(&mut line, step, &mut v, &mut zs, &mut out);
            for (dst, src) in lane.iter_mut().zip(&line) {
                *dst = *src;
            }
        }
    }
    dist
}

/// Smallest box `[lo, hi)` holding all `points`.
pub(crate) fn bounding_box(
    points: impl IntoIterator<Item = [usize; 3]>,
) -> Option<([usize; 3], [usize; 3])> {
    let mut it = points.into_iter();
    let first = it.next()?;
    let (mut lo, mut hi) = (first, first.map(|c| c + 1));
    for p in it {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a] + 1);
        }
    }
    Some((lo, hi))
}

/// For every point of `from`, the distance in mm to the nearest point of
/// `to`. `to` must be nonempty.
pub fn directed_distances(from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f64; 3]) -> Vec<f64> {
    assert!(!to.is_empty(), "target point set is empty");
    // The transform restricted to a box containing every point is exact.
    let (lo, hi) = bounding_box(from.iter().chain(to).copied()).unwrap();
    let ext = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let mut feat = Array3::from_elem((ext[0], ext[1], ext[2]), false);
    for p in to {
        feat[[p[0] - lo[0], p[1] - lo[1], p[2] - lo[2]]] = true;
    }
    let dt = squared_edt(feat.view(), spacing);
    from.iter()
        .map(|p| dt[[p[0] - lo[0], p[1] - lo[1], p[2] - lo[2]]].sqrt())
        .collect()
}

/// Linear-interpolated percentile of sorted data, inclusive method:
/// position `q·(n−1)`.
pub fn percentile_inclusive(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}
