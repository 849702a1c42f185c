//! Voxel ordering for the strided-convolution encoder and decoder.
//!
//! Every stage is a convolution whose kernel equals its stride, so each token
//! owns a disjoint block of voxels and each stage output owns a disjoint
//! sub-block. Storing the patch voxels in hierarchical order (token, then
//! stage-3 offset, stage-2 offset, stage-1 offset) turns every stage into a
//! reshape followed by a matrix product.

use super::CptmConfig;

pub const N_STAGES: usize = 3;

/// Splits `n` into `N_STAGES` factors as evenly as possible. Prime factors
/// are handed out largest first to the stage with the smallest product,
/// earliest stage on ties.
pub fn stage_factors(n: usize) -> [usize; N_STAGES] {
    let mut primes = Vec::new();
    let mut m = n;
    let mut p = 2;
    while m > 1 {
        if m.is_multiple_of(p) {
            primes.push(p);
            m /= p;
        } else {
            p += 1;
        }
    }
    primes.sort_unstable_by(|a, b| b.cmp(a));
    let mut out = [1; N_STAGES];
    for p in primes {
        let (i, _) = out.iter().enumerate().min_by_key(|(_, &v)| v).unwrap();
        out[i] *= p;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchLayout {
    /// `strides[s]` is the `(z, y, x)` kernel of stage `s` (finest first).
    pub strides: [[usize; 3]; N_STAGES],
    /// Channel width after each stage; the last equals the embedding width.
    pub channels: [usize; N_STAGES],
    /// `perm[r]` is the row-major voxel index stored at hierarchical row `r`.
    pub perm: Vec<usize>,
}

impl PatchLayout {
    pub fn new(config: &CptmConfig) -> Self {
        let ext = config.token_extent();
        let per_axis = ext.map(stage_factors);
        let strides = std::array::from_fn(|s| [per_axis[0][s], per_axis[1][s], per_axis[2][s]]);
        let dim = config.embed_dim;
        let channels = [(dim / 4).max(4), (dim / 2).max(8), dim];
        let perm = hierarchical_order(config, &strides);
        Self {
            strides,
            channels,
            perm,
        }
    }

    pub fn kernel_volume(&self, stage: usize) -> usize {
        self.strides[stage].iter().product()
    }

    pub fn n_voxels(&self) -> usize {
        self.perm.len()
    }
}

fn hierarchical_order(config: &CptmConfig, strides: &[[usize; 3]; N_STAGES]) -> Vec<usize> {
    let [_, ph, pw] = config.patch_shape;
    let g = config.token_grid;
    let kv: Vec<usize> = strides.iter().map(|k| k.iter().product()).collect();
    let n = config.patch_voxels();
    let mut perm = Vec::with_capacity(n);
    for r in 0..n {
        // r = ((t·K3 + o3)·K2 + o2)·K1 + o1
        let mut rest = r;
        let mut offs = [[0usize; 3]; N_STAGES];
        for s in 0..N_STAGES {
            let o = rest % kv[s];
            rest /= kv[s];
            let [_, ky, kx] = strides[s];
            offs[s] = [o / (ky * kx), (o / kx) % ky, o % kx];
        }
        let t = rest;
        let mut pos = [t / (g.h * g.w), (t / g.w) % g.h, t % g.w];
        for s in (0..N_STAGES).rev() {
            for a in 0..3 {
                pos[a] = pos[a] * strides[s][a] + offs[s][a];
            }
        }
        perm.push((pos[0] * ph + pos[1]) * pw + pos[2]);
    }
    perm
}
