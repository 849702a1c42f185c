//! Brute-force oracles and generators shared by the integration tests.

#![allow(dead_code)]

use std::collections::VecDeque;

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use spinefuse_core::metrics::Landmark;
use spinefuse_core::{LabelVolume, ParamStore};

pub fn jitter(store: &mut ParamStore, std: f64, rng: &mut ChaCha8Rng) {
    let n = Normal::new(0.0, std).unwrap();
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v += n.sample(rng);
        }
    }
}

/// Random label volume: either per-voxel noise over `n_classes` or a few
/// overlapping boxes, so both ragged and compact shapes come up.
pub fn random_labels(
    shape: [usize; 3],
    n_classes: u16,
    spacing: [f64; 3],
    rng: &mut ChaCha8Rng,
) -> LabelVolume {
    let (d, h, w) = (shape[0], shape[1], shape[2]);
    let voxels = if rng.gen_bool(0.5) {
        let p_bg = rng.gen_range(0.2..0.8);
        Array3::from_shape_fn((d, h, w), |_| {
            if rng.gen_bool(p_bg) {
                0
            } else {
                rng.gen_range(1..n_classes)
            }
        })
    } else {
        let mut v = Array3::zeros((d, h, w));
        for _ in 0..rng.gen_range(1..6) {
            let c = rng.gen_range(1..n_classes);
            let lo = [
                rng.gen_range(0..d),
                rng.gen_range(0..h),
                rng.gen_range(0..w),
            ];
            let hi = [
                rng.gen_range(lo[0] + 1..=d),
                rng.gen_range(lo[1] + 1..=h),
                rng.gen_range(lo[2] + 1..=w),
            ];
            v.slice_mut(ndarray::s![lo[0]..hi[0], lo[1]..hi[1], lo[2]..hi[2]])
                .fill(c);
        }
        v
    };
    LabelVolume::new(voxels, spacing, [0.0; 3]).unwrap()
}

pub fn dice_oracle(gt: &LabelVolume, pred: &LabelVolume, class: u16) -> Option<f64> {
    let mut inter = 0;
    let mut total = 0;
    for (a, b) in gt.voxels.iter().zip(pred.voxels.iter()) {
        if *a == class {
            total += 1;
        }
        if *b == class {
            total += 1;
        }
        if *a == class && *b == class {
            inter += 1;
        }
    }
    if total == 0 {
        None
    } else {
        Some(2.0 * inter as f64 / total as f64)
    }
}

/// Voxels of `class` with a face neighbour outside the class or outside the
/// grid.
pub fn surface_oracle(v: &LabelVolume, class: u16) -> Vec<[usize; 3]> {
    let (d, h, w) = v.voxels.dim();
    let mut out = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if v.voxels[[z, y, x]] != class {
                    continue;
                }
                let p = [z as i64, y as i64, x as i64];
                let boundary = [
                    [1, 0, 0],
                    [-1, 0, 0],
                    [0, 1, 0],
                    [0, -1, 0],
                    [0, 0, 1],
                    [0, 0, -1],
                ]
                .iter()
                .any(|o: &[i64; 3]| {
                    let q = [p[0] + o[0], p[1] + o[1], p[2] + o[2]];
                    if q[0] < 0
                        || q[1] < 0
                        || q[2] < 0
                        || q[0] >= d as i64
                        || q[1] >= h as i64
                        || q[2] >= w as i64
                    {
                        return true;
                    }
                    v.voxels[[q[0] as usize, q[1] as usize, q[2] as usize]] != class
                });
                if boundary {
                    out.push([z, y, x]);
                }
            }
        }
    }
    out
}

fn mm_distance(a: [usize; 3], b: [usize; 3], spacing: [f64; 3]) -> f64 {
    (0..3)
        .map(|i| ((a[i] as f64 - b[i] as f64) * spacing[i]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `(HD, HD95)` by comparing every surface voxel pair.
pub fn hausdorff_oracle(gt: &LabelVolume, pred: &LabelVolume, class: u16) -> Option<(f64, f64)> {
    let a = surface_oracle(gt, class);
    let b = surface_oracle(pred, class);
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let nearest = |from: &[[usize; 3]], to: &[[usize; 3]]| -> Vec<f64> {
        from.iter()
            .map(|&p| {
                to.iter()
                    .map(|&q| mm_distance(p, q, gt.spacing))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    let mut all = nearest(&a, &b);
    all.extend(nearest(&b, &a));
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let hd = all[all.len() - 1];
    let rank = 0.95 * (all.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let hd95 = all[lo] + (rank - lo as f64) * (all[hi] - all[lo]);
    Some((hd, hd95))
}

pub fn centroid_oracle(v: &LabelVolume, class: u16) -> Option<[f64; 3]> {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for ((z, y, x), &c) in v.voxels.indexed_iter() {
        if c == class {
            let idx = [z, y, x];
            for i in 0..3 {
                sum[i] += idx[i] as f64 * v.spacing[i] + v.origin[i];
            }
            n += 1;
        }
    }
    (n > 0).then(|| sum.map(|s| s / n as f64))
}

/// `(identified, total, mean distance)` by the same-class-within-threshold,
/// no-other-class-strictly-closer rule.
pub fn identification_oracle(
    gt: &LabelVolume,
    pred: &LabelVolume,
    classes: &[u16],
    threshold: f64,
) -> (usize, usize, Option<f64>) {
    let gt_marks: Vec<(u16, [f64; 3])> = classes
        .iter()
        .filter_map(|&c| centroid_oracle(gt, c).map(|p| (c, p)))
        .collect();
    let pred_marks: Vec<(u16, [f64; 3])> = classes
        .iter()
        .filter_map(|&c| centroid_oracle(pred, c).map(|p| (c, p)))
        .collect();
    let dist = |a: [f64; 3], b: [f64; 3]| {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    };
    let mut hits = Vec::new();
    for &(c, g) in &gt_marks {
        let Some(&(_, p)) = pred_marks.iter().find(|(k, _)| *k == c) else {
            continue;
        };
        let d = dist(g, p);
        if d <= threshold && !pred_marks.iter().any(|&(k, q)| k != c && dist(g, q) < d) {
            hits.push(d);
        }
    }
    let mean = (!hits.is_empty()).then(|| hits.iter().sum::<f64>() / hits.len() as f64);
    (hits.len(), gt_marks.len(), mean)
}

pub fn landmark_positions(marks: &[Landmark]) -> Vec<(u16, [f64; 3])> {
    marks.iter().map(|m| (m.class_id, m.position)).collect()
}

/// Breadth-first 26-connected flood fill; for every class keeps the
/// component with the most voxels, the one met first in scan order on ties.
pub fn largest_component_oracle(v: &LabelVolume) -> LabelVolume {
    let (d, h, w) = v.voxels.dim();
    let mut comp = Array3::<usize>::from_elem((d, h, w), usize::MAX);
    let mut members: Vec<(u16, Vec<[usize; 3]>)> = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let c = v.voxels[[z, y, x]];
                if c == 0 || comp[[z, y, x]] != usize::MAX {
                    continue;
                }
                let id = members.len();
                let mut cells = Vec::new();
                let mut queue = VecDeque::from([[z, y, x]]);
                comp[[z, y, x]] = id;
                while let Some(p) = queue.pop_front() {
                    cells.push(p);
                    for dz in -1i64..=1 {
                        for dy in -1i64..=1 {
                            for dx in -1i64..=1 {
                                let q = [p[0] as i64 + dz, p[1] as i64 + dy, p[2] as i64 + dx];
                                if q.iter().any(|&c| c < 0)
                                    || q[0] >= d as i64
                                    || q[1] >= h as i64
                                    || q[2] >= w as i64
                                {
                                    continue;
                                }
                                let q = [q[0] as usize, q[1] as usize, q[2] as usize];
                                if v.voxels[q] == c && comp[q] == usize::MAX {
                                    comp[q] = id;
                                    queue.push_back(q);
                                }
                            }
                        }
                    }
                }
                members.push((c, cells));
            }
        }
    }
    let mut out = v.zeros_like();
    let mut best: std::collections::BTreeMap<u16, usize> = Default::default();
    for (i, (c, cells)) in members.iter().enumerate() {
        let e = best.entry(*c).or_insert(i);
        if cells.len() > members[*e].1.len() {
            *e = i;
        }
    }
    for (&c, &i) in &best {
        for &p in &members[i].1 {
            out.voxels[p] = c;
        }
    }
    out
}
