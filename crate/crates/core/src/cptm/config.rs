use serde::{Deserialize, Serialize};

use crate::attention::TokenGrid;
use crate::error::{Error, Result};

/// Model geometry and size. Serialises with exactly these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CptmConfig {
    /// `(d, h, w)` voxels of one patch.
    pub patch_shape: [usize; 3],
    /// Slices shared by consecutive patches; must be half the patch depth.
    pub overlap_depth: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_cptm_layers: usize,
    pub token_grid: TokenGrid,
    pub n_classes: usize,
    /// One T2 block for both fusion directions instead of one per direction.
    pub share_t2_params: bool,
    pub positional_embedding: bool,
    /// One T1 block for all three patches instead of one per patch.
    pub share_t1_params: bool,
}

impl Default for CptmConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl CptmConfig {
    /// 32×64×64 patches, 128 tokens of width 64, two layers, full taxonomy.
    pub fn desk() -> Self {
        Self {
            patch_shape: [32, 64, 64],
            overlap_depth: 16,
            embed_dim: 64,
            n_heads: 4,
            n_cptm_layers: 2,
            token_grid: TokenGrid::new(8, 4, 4),
            n_classes: 34,
            share_t2_params: false,
            positional_embedding: true,
            share_t1_params: true,
        }
    }

    /// Smallest configuration used for full gradient checks.
    pub fn micro() -> Self {
        Self {
            patch_shape: [16, 16, 16],
            overlap_depth: 8,
            embed_dim: 16,
            n_heads: 2,
            n_cptm_layers: 1,
            token_grid: TokenGrid::new(4, 2, 2),
            n_classes: 4,
            ..Self::desk()
        }
    }

    /// Sized for the synthetic spine phantoms: one token per two slices.
    pub fn phantom() -> Self {
        Self {
            patch_shape: [16, 8, 8],
            overlap_depth: 8,
            embed_dim: 32,
            n_heads: 4,
            n_cptm_layers: 2,
            token_grid: TokenGrid::new(8, 1, 1),
            n_classes: 34,
            ..Self::desk()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("model config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let [pd, ph, pw] = self.patch_shape;
        let g = self.token_grid;
        if pd == 0 || ph == 0 || pw == 0 {
            return bad(format!(
                "patch_shape {:?} has an empty axis",
                self.patch_shape
            ));
        }
        if pd % 2 != 0 {
            return bad(format!("patch depth {pd} must be even"));
        }
        if self.overlap_depth != pd / 2 {
            return bad(format!(
                "overlap_depth must be half the patch depth ({}), got {}",
                pd / 2,
                self.overlap_depth
            ));
        }
        if g.d == 0 || g.h == 0 || g.w == 0 {
            return bad(format!("token_grid {g:?} has an empty axis"));
        }
        if !g.d.is_multiple_of(2) {
            return bad(format!("token_grid.d {} must be even", g.d));
        }
        for (axis, (p, t)) in ["d", "h", "w"]
            .iter()
            .zip(self.patch_shape.iter().zip([g.d, g.h, g.w]))
        {
            if p % t != 0 {
                return bad(format!(
                    "patch extent {p} along {axis} is not a multiple of the token grid ({t})"
                ));
            }
        }
        if self.embed_dim == 0 || self.n_heads == 0 || !self.embed_dim.is_multiple_of(self.n_heads)
        {
            return bad(format!(
                "embed_dim {} must be a positive multiple of n_heads {}",
                self.embed_dim, self.n_heads
            ));
        }
        if self.n_cptm_layers == 0 {
            return bad("n_cptm_layers must be at least 1".into());
        }
        if self.n_classes == 0 || self.n_classes > u16::MAX as usize + 1 {
            return bad(format!("n_classes {} out of range", self.n_classes));
        }
        Ok(())
    }

    pub fn patch_voxels(&self) -> usize {
        self.patch_shape.iter().product()
    }

    /// Voxels covered by one token along each axis.
    pub fn token_extent(&self) -> [usize; 3] {
        let g = self.token_grid;
        [
            self.patch_shape[0] / g.d,
            self.patch_shape[1] / g.h,
            self.patch_shape[2] / g.w,
        ]
    }
}
