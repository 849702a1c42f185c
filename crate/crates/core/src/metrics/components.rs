use std::collections::BTreeMap;

use ndarray::Array3;

use crate::volume::LabelVolume;

const NEIGHBOURS_26: usize = 26;

fn offsets_26() -> [[isize; 3]; NEIGHBOURS_26] {
    let mut out = [[0; 3]; NEIGHBOURS_26];
    let mut k = 0;
    for dz in -1..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                if (dz, dy, dx) != (0, 0, 0) {
                    out[k] = [dz, dy, dx];
                    k += 1;
                }
            }
        }
    }
    out
}

/// Labels the 26-connected components of every nonzero class. Components are
/// numbered from 1 in scan order of their first voxel, so a component's seed
/// is its lexicographically smallest voxel. Returns the component map, and
/// for each component its class and size.
pub fn label_components(volume: &LabelVolume) -> (Array3<u32>, Vec<(u16, usize)>) {
    let v = &volume.voxels;
    let (d, h, w) = v.dim();
    let mut comp = Array3::<u32>::zeros((d, h, w));
    let mut info = Vec::new();
    let mut stack = Vec::new();
    let offs = offsets_26();
    for ((z, y, x), &class) in v.indexed_iter() {
        if class == 0 || comp[[z, y, x]] != 0 {
            continue;
        }
        let id = info.len() as u32 + 1;
        comp[[z, y, x]] = id;
        stack.push([z, y, x]);
        let mut size = 0;
        while let Some(p) = stack.pop() {
            size += 1;
            for o in &offs {
                let q = [
                    p[0] as isize + o[0],
                    p[1] as isize + o[1],
                    p[2] as isize + o[2],
                ];
                if q[0] < 0
                    || q[1] < 0
                    || q[2] < 0
                    || q[0] >= d as isize
                    || q[1] >= h as isize
                    || q[2] >= w as isize
                {
                    continue;
                }
                let q = [q[0] as usize, q[1] as usize, q[2] as usize];
                if v[q] == class && comp[q] == 0 {
                    comp[q] = id;
                    stack.push(q);
                }
            }
        }
        info.push((class, size));
    }
    (comp, info)
}

/// Keeps, per nonzero class, only its largest 26-connected component. Ties go
/// to the component whose first voxel comes first in scan order.
pub fn largest_component_filter(pred: &LabelVolume) -> LabelVolume {
    let (comp, info) = label_components(pred);
    let mut best: BTreeMap<u16, (usize, u32)> = BTreeMap::new();
    for (i, &(class, size)) in info.iter().enumerate() {
        let id = i as u32 + 1;
        best.entry(class)
            .and_modify(|b| {
                if size > b.0 {
                    *b = (size, id);
                }
            })
            .or_insert((size, id));
    }
    let mut keep = vec![false; info.len() + 1];
    for (_, (_, id)) in best {
        keep[id as usize] = true;
    }
    let mut out = pred.clone();
    out.voxels.zip_mut_with(&comp, |v, &c| {
        if !keep[c as usize] {
            *v = 0;
        }
    });
    out
}
