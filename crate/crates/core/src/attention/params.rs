use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub dim: usize,
    pub scale: ParamId,
    pub shift: ParamId,
}

impl LayerNormParams {
    pub fn register(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            dim,
            scale: store.insert_full(format!("{prefix}.scale"), &[dim], 1.0)?,
            shift: store.insert_full(format!("{prefix}.shift"), &[dim], 0.0)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub dim: usize,
    pub n_heads: usize,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

impl AttentionParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        n_heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n_heads == 0 || !dim.is_multiple_of(n_heads) {
            return Err(Error::Config(format!(
                "dim {dim} is not divisible by n_heads {n_heads}"
            )));
        }
        let mut mat = |s: &mut ParamStore, n: &str| {
            s.insert_normal(format!("{prefix}.{n}"), &[dim, dim], dim, rng)
        };
        let wq = mat(store, "wq")?;
        let wk = mat(store, "wk")?;
        let wv = mat(store, "wv")?;
        let wo = mat(store, "wo")?;
        let mut vec0 = |n: &str| store.insert_full(format!("{prefix}.{n}"), &[dim], 0.0);
        Ok(Self {
            dim,
            n_heads,
            wq,
            bq: vec0("bq")?,
            wk,
            bk: vec0("bk")?,
            wv,
            bv: vec0("bv")?,
            wo,
            bo: vec0("bo")?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FfnParams {
    pub dim: usize,
    pub hidden: usize,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FfnParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            dim,
            hidden,
            w1: store.insert_normal(format!("{prefix}.w1"), &[dim, hidden], dim, rng)?,
            b1: store.insert_full(format!("{prefix}.b1"), &[hidden], 0.0)?,
            w2: store.insert_normal(format!("{prefix}.w2"), &[hidden, dim], hidden, rng)?,
            b2: store.insert_full(format!("{prefix}.b2"), &[dim], 0.0)?,
        })
    }
}

/// Parameters of one residual block. `ln_kv` is present only for the
/// cross-attention (T2) variant, which normalises both of its inputs.
#[derive(Debug, Clone)]
pub struct BlockParams {
    pub ln_attn: LayerNormParams,
    pub ln_kv: Option<LayerNormParams>,
    pub attn: AttentionParams,
    pub ln_ffn: LayerNormParams,
    pub ffn: FfnParams,
}

impl BlockParams {
    /// Registers a block under `prefix` with `ffn_dim = 4·dim`.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        n_heads: usize,
        cross: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let ln_attn = LayerNormParams::register(store, &format!("{prefix}.ln1"), dim)?;
        let ln_kv = if cross {
            Some(LayerNormParams::register(
                store,
                &format!("{prefix}.ln_kv"),
                dim,
            )?)
        } else {
            None
        };
        let attn = AttentionParams::register(store, &format!("{prefix}.attn"), dim, n_heads, rng)?;
        let ln_ffn = LayerNormParams::register(store, &format!("{prefix}.ln2"), dim)?;
        let ffn = FfnParams::register(store, &format!("{prefix}.ffn"), dim, 4 * dim, rng)?;
        Ok(Self {
            ln_attn,
            ln_kv,
            attn,
            ln_ffn,
            ffn,
        })
    }

    /// Zeroes the attention output projection and the second FFN layer,
    /// which turns the block into the identity map.
    pub fn zero_output_projections(&self, store: &mut ParamStore) {
        for id in [self.attn.wo, self.attn.bo, self.ffn.w2, self.ffn.b2] {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.ln_attn.scale, self.ln_attn.shift];
        if let Some(ln) = &self.ln_kv {
            ids.extend([ln.scale, ln.shift]);
        }
        let a = &self.attn;
        ids.extend([a.wq, a.bq, a.wk, a.bk, a.wv, a.bv, a.wo, a.bo]);
        ids.extend([self.ln_ffn.scale, self.ln_ffn.shift]);
        let f = &self.ffn;
        ids.extend([f.w1, f.b1, f.w2, f.b2]);
        ids
    }
}
