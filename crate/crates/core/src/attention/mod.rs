//! Pre-norm transformer blocks over token sequences.
//!
//! [`t1_block`] is the intra-patch block (self-attention then feed-forward,
//! each wrapped in a residual). [`t2_fuse`] is the inter-patch block: queries
//! come from one half of the middle patch, keys and values from the
//! overlapping half of an adjacent patch, and the residual goes to the query
//! side, so the output keeps the middle half's token count.

mod params;

pub use params::{AttentionParams, BlockParams, FfnParams, LayerNormParams};

use crate::error::{Error, Result};
use crate::tensor::{Bound, Graph, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Which of the three consecutive patches a sequence was encoded from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PatchPosition {
    First,
    Middle,
    Last,
}

impl PatchPosition {
    pub fn number(self) -> usize {
        match self {
            PatchPosition::First => 1,
            PatchPosition::Middle => 2,
            PatchPosition::Last => 3,
        }
    }
}

/// Extents of a token grid, `(d, h, w)` with `d` along the cranio-caudal axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct TokenGrid {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl TokenGrid {
    pub fn new(d: usize, h: usize, w: usize) -> Self {
        Self { d, h, w }
    }

    pub fn len(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flattened feature map `[n_tokens × dim]` living on a graph.
#[derive(Debug, Clone, Copy)]
pub struct TokenSequence {
    pub tokens: Var,
    pub grid: TokenGrid,
    pub patch: PatchPosition,
}

impl TokenSequence {
    pub fn new(g: &Graph, tokens: Var, grid: TokenGrid, patch: PatchPosition) -> Result<Self> {
        match g.shape(tokens) {
            [n, _] if *n == grid.len() => Ok(Self {
                tokens,
                grid,
                patch,
            }),
            s => Err(Error::Shape(format!(
                "token tensor of shape {s:?} does not fit grid {}×{}×{}",
                grid.d, grid.h, grid.w
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn dim(&self, g: &Graph) -> usize {
        g.shape(self.tokens)[1]
    }

    fn with_tokens(&self, tokens: Var) -> Self {
        Self { tokens, ..*self }
    }

    /// Splits along `d` into the cranial (upper) and caudal (lower) halves.
    pub fn split_halves(&self, g: &mut Graph) -> Result<(TokenSequence, TokenSequence)> {
        if !self.grid.d.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "token grid depth {} is odd; halves are undefined",
                self.grid.d
            )));
        }
        let half = self.len() / 2;
        let parts = g.split(self.tokens, 0, &[half, half])?;
        let grid = TokenGrid {
            d: self.grid.d / 2,
            ..self.grid
        };
        Ok((
            TokenSequence {
                tokens: parts[0],
                grid,
                patch: self.patch,
            },
            TokenSequence {
                tokens: parts[1],
                grid,
                patch: self.patch,
            },
        ))
    }

    /// Inverse of [`split_halves`](Self::split_halves).
    pub fn join_halves(
        g: &mut Graph,
        upper: &TokenSequence,
        lower: &TokenSequence,
    ) -> Result<TokenSequence> {
        if upper.grid != lower.grid {
            return Err(Error::Shape(format!(
                "halves have different grids {:?} and {:?}",
                upper.grid, lower.grid
            )));
        }
        let tokens = g.concat(&[upper.tokens, lower.tokens], 0)?;
        Ok(TokenSequence {
            tokens,
            grid: TokenGrid {
                d: upper.grid.d * 2,
                ..upper.grid
            },
            patch: upper.patch,
        })
    }
}

fn check_dim(g: &Graph, x: &TokenSequence, expected: usize, what: &str) -> Result<()> {
    let dim = x.dim(g);
    if dim != expected {
        return Err(Error::Shape(format!(
            "{what}: token dim {dim} but parameters expect {expected}"
        )));
    }
    Ok(())
}

/// Per-token normalisation to zero mean and unit variance, then affine.
pub fn layer_norm(
    g: &mut Graph,
    p: &Bound,
    params: &LayerNormParams,
    x: &TokenSequence,
) -> Result<TokenSequence> {
    check_dim(g, x, params.dim, "layer_norm")?;
    let n = g.normalize(x.tokens, LAYER_NORM_EPS);
    let s = g.mul_trailing(n, p[params.scale])?;
    let y = g.add_bias(s, p[params.shift])?;
    Ok(x.with_tokens(y))
}

fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

/// Attention output plus the per-head weight matrices `[n_q × n_kv]`.
pub struct AttentionOutput {
    pub output: TokenSequence,
    pub weights: Vec<Var>,
}

/// Scaled dot-product attention with heads split across the feature axis.
/// `q_src` supplies queries; `kv_src` supplies keys and values.
pub fn multi_head_attention_with_weights(
    g: &mut Graph,
    p: &Bound,
    params: &AttentionParams,
    q_src: &TokenSequence,
    kv_src: &TokenSequence,
) -> Result<AttentionOutput> {
    let dim = params.dim;
    check_dim(g, q_src, dim, "attention queries")?;
    check_dim(g, kv_src, dim, "attention keys")?;
    let heads = params.n_heads;
    let dh = dim / heads;
    let q = linear(g, q_src.tokens, p[params.wq], p[params.bq])?;
    let k = linear(g, kv_src.tokens, p[params.wk], p[params.bk])?;
    let v = linear(g, kv_src.tokens, p[params.wv], p[params.bv])?;
    let sizes = vec![dh; heads];
    let qs = g.split(q, 1, &sizes)?;
    let ks = g.split(k, 1, &sizes)?;
    let vs = g.split(v, 1, &sizes)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let scores = g.matmul_nt(qs[h], ks[h])?;
        let scores = g.scale(scores, scale);
        let a = g.softmax(scores)?;
        outs.push(g.matmul(a, vs[h])?);
        weights.push(a);
    }
    let merged = if heads == 1 {
        outs[0]
    } else {
        g.concat(&outs, 1)?
    };
    let y = linear(g, merged, p[params.wo], p[params.bo])?;
    Ok(AttentionOutput {
        output: q_src.with_tokens(y),
        weights,
    })
}

pub fn multi_head_attention(
    g: &mut Graph,
    p: &Bound,
    params: &AttentionParams,
    q_src: &TokenSequence,
    kv_src: &TokenSequence,
) -> Result<TokenSequence> {
    Ok(multi_head_attention_with_weights(g, p, params, q_src, kv_src)?.output)
}

pub fn feed_forward(
    g: &mut Graph,
    p: &Bound,
    params: &FfnParams,
    x: &TokenSequence,
) -> Result<TokenSequence> {
    check_dim(g, x, params.dim, "feed_forward")?;
    let h = linear(g, x.tokens, p[params.w1], p[params.b1])?;
    let h = g.gelu(h);
    let y = linear(g, h, p[params.w2], p[params.b2])?;
    Ok(x.with_tokens(y))
}

fn residual(g: &mut Graph, x: &TokenSequence, update: &TokenSequence) -> Result<TokenSequence> {
    let y = g.add(x.tokens, update.tokens)?;
    Ok(x.with_tokens(y))
}

fn ffn_residual(
    g: &mut Graph,
    p: &Bound,
    block: &BlockParams,
    y: &TokenSequence,
) -> Result<TokenSequence> {
    let n = layer_norm(g, p, &block.ln_ffn, y)?;
    let f = feed_forward(g, p, &block.ffn, &n)?;
    residual(g, y, &f)
}

/// `z' = MSA(LN(z)) + z`, then `z'' = FFN(LN(z')) + z'`.
pub fn t1_block(
    g: &mut Graph,
    p: &Bound,
    block: &BlockParams,
    z: &TokenSequence,
) -> Result<TokenSequence> {
    let n = layer_norm(g, p, &block.ln_attn, z)?;
    let a = multi_head_attention(g, p, &block.attn, &n, &n)?;
    let z1 = residual(g, z, &a)?;
    ffn_residual(g, p, block, &z1)
}

/// Cross-patch fusion: `y = MSA(LN(mid), LN(adj)) + mid`, then the feed-forward
/// residual on `y`. Both halves cover the same overlap so their token counts
/// must agree.
pub fn t2_fuse(
    g: &mut Graph,
    p: &Bound,
    block: &BlockParams,
    mid_half: &TokenSequence,
    adj_half: &TokenSequence,
) -> Result<TokenSequence> {
    if mid_half.len() != adj_half.len() {
        return Err(Error::Shape(format!(
            "t2_fuse halves differ in size: {} vs {} tokens",
            mid_half.len(),
            adj_half.len()
        )));
    }
    let ln_kv = block
        .ln_kv
        .as_ref()
        .ok_or_else(|| Error::Contract("t2_fuse needs a block built for cross-attention".into()))?;
    let q = layer_norm(g, p, &block.ln_attn, mid_half)?;
    let kv = layer_norm(g, p, ln_kv, adj_half)?;
    let a = multi_head_attention(g, p, &block.attn, &q, &kv)?;
    let y = residual(g, mid_half, &a)?;
    ffn_residual(g, p, block, &y)
}
