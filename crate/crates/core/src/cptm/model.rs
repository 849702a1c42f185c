use std::path::Path;

use ndarray::{Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layout::{PatchLayout, N_STAGES};
use super::{CptmConfig, PatchTriple};
use crate::attention::{t1_block, t2_fuse, BlockParams, PatchPosition, TokenSequence};
use crate::error::{Error, Result};
use crate::tensor::{read_checkpoint, write_checkpoint, Bound, Graph, ParamId, ParamStore, Var};

/// Standard deviation of the positional embedding initialisation.
const POS_INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Three patches with cross-patch fusion.
    Cptm,
    /// The middle patch alone: same encoder, T1 stack and decoder.
    Baseline,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cptm" => Ok(Self::Cptm),
            "baseline" => Ok(Self::Baseline),
            _ => Err(Error::Config(format!(
                "unknown model {s:?} (expected cptm or baseline)"
            ))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Cptm => "cptm",
            ModelKind::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn register(
        store: &mut ParamStore,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            w: store.insert_normal(format!("{prefix}.w"), &[fan_in, fan_out], fan_in, rng)?,
            b: store.insert_full(format!("{prefix}.b"), &[fan_out], 0.0)?,
        })
    }

    fn apply(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.w])?;
        g.add_bias(y, p[self.b])
    }
}

#[derive(Debug, Clone)]
enum T1Params {
    Shared(BlockParams),
    PerPatch([BlockParams; 3]),
}

impl T1Params {
    fn for_patch(&self, k: usize) -> &BlockParams {
        match self {
            T1Params::Shared(b) => b,
            T1Params::PerPatch(bs) => &bs[k],
        }
    }

    fn blocks(&self) -> Vec<&BlockParams> {
        match self {
            T1Params::Shared(b) => vec![b],
            T1Params::PerPatch(bs) => bs.iter().collect(),
        }
    }
}

/// The two fusion blocks of one layer; both fields hold the same block when
/// parameters are shared.
#[derive(Debug, Clone)]
struct T2Params {
    from1: BlockParams,
    from3: BlockParams,
}

/// Encoder, positional embeddings, layer stack and decoder with their
/// parameters.
///
/// Parameters are registered in a fixed order (encoder, positional
/// embeddings, T1 stack, decoder, then T2 stack), so a baseline and a
/// cross-patch model built from the same seed share identical weights for
/// every common component.
#[derive(Debug, Clone)]
pub struct CptmModel {
    config: CptmConfig,
    kind: ModelKind,
    layout: PatchLayout,
    store: ParamStore,
    encoder: [Linear; N_STAGES],
    decoder: [Linear; N_STAGES],
    pos: Option<ParamId>,
    t1: Vec<T1Params>,
    t2: Vec<T2Params>,
}

/// What a model reads for one prediction.
#[derive(Debug, Clone, Copy)]
pub enum ModelInput<'a> {
    Triple(&'a PatchTriple),
    Single(&'a Array3<f64>),
}

impl CptmModel {
    pub fn new(config: &CptmConfig, kind: ModelKind, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = PatchLayout::new(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let dim = config.embed_dim;
        let heads = config.n_heads;
        let ch = layout.channels;

        let mut encoder = Vec::with_capacity(N_STAGES);
        let mut c_in = 1;
        for s in 0..N_STAGES {
            let fan_in = layout.kernel_volume(s) * c_in;
            encoder.push(Linear::register(
                &mut store,
                &format!("enc.{s}"),
                fan_in,
                ch[s],
                &mut rng,
            )?);
            c_in = ch[s];
        }
        let pos = if config.positional_embedding {
            Some(store.insert_gaussian(
                "pos",
                &[config.token_grid.len(), dim],
                POS_INIT_STD,
                &mut rng,
            )?)
        } else {
            None
        };
        let mut t1 = Vec::with_capacity(config.n_cptm_layers);
        for l in 0..config.n_cptm_layers {
            t1.push(if config.share_t1_params {
                T1Params::Shared(BlockParams::register(
                    &mut store,
                    &format!("t1.{l}"),
                    dim,
                    heads,
                    false,
                    &mut rng,
                )?)
            } else {
                let mut reg = |k: usize| {
                    BlockParams::register(
                        &mut store,
                        &format!("t1.{l}.p{k}"),
                        dim,
                        heads,
                        false,
                        &mut rng,
                    )
                };
                T1Params::PerPatch([reg(1)?, reg(2)?, reg(3)?])
            });
        }
        // Decoder: dim → K3·C2 → K2·C1 → K1·n_classes.
        let outs = [
            layout.kernel_volume(2) * ch[1],
            layout.kernel_volume(1) * ch[0],
            layout.kernel_volume(0) * config.n_classes,
        ];
        let ins = [dim, ch[1], ch[0]];
        let mut decoder = Vec::with_capacity(N_STAGES);
        for s in 0..N_STAGES {
            decoder.push(Linear::register(
                &mut store,
                &format!("dec.{s}"),
                ins[s],
                outs[s],
                &mut rng,
            )?);
        }
        let mut t2 = Vec::new();
        if kind == ModelKind::Cptm {
            for l in 0..config.n_cptm_layers {
                t2.push(if config.share_t2_params {
                    let b = BlockParams::register(
                        &mut store,
                        &format!("t2.{l}.shared"),
                        dim,
                        heads,
                        true,
                        &mut rng,
                    )?;
                    T2Params {
                        from1: b.clone(),
                        from3: b,
                    }
                } else {
                    T2Params {
                        from1: BlockParams::register(
                            &mut store,
                            &format!("t2.{l}.from1"),
                            dim,
                            heads,
                            true,
                            &mut rng,
                        )?,
                        from3: BlockParams::register(
                            &mut store,
                            &format!("t2.{l}.from3"),
                            dim,
                            heads,
                            true,
                            &mut rng,
                        )?,
                    }
                });
            }
        }
        Ok(Self {
            config: config.clone(),
            kind,
            layout,
            store,
            encoder: encoder.try_into().unwrap(),
            decoder: decoder.try_into().unwrap(),
            pos,
            t1,
            t2,
        })
    }

    pub fn config(&self) -> &CptmConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn layout(&self) -> &PatchLayout {
        &self.layout
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Turns every T2 block into the identity.
    pub fn zero_t2_output_projections(&mut self) {
        for t2 in &self.t2 {
            t2.from1.zero_output_projections(&mut self.store);
            t2.from3.zero_output_projections(&mut self.store);
        }
    }

    /// Turns every T1 and T2 block into the identity.
    pub fn zero_block_output_projections(&mut self) {
        self.zero_t2_output_projections();
        for t1 in &self.t1 {
            for b in t1.blocks() {
                b.zero_output_projections(&mut self.store);
            }
        }
    }

    fn check_patch(&self, patch: &Array3<f64>) -> Result<()> {
        let (d, h, w) = patch.dim();
        if [d, h, w] != self.config.patch_shape {
            return Err(Error::Shape(format!(
                "patch of shape {:?}, model expects {:?}",
                [d, h, w],
                self.config.patch_shape
            )));
        }
        Ok(())
    }

    /// Shared encoder, then positional embeddings.
    pub fn encode(
        &self,
        g: &mut Graph,
        p: &Bound,
        patch: &Array3<f64>,
        position: PatchPosition,
    ) -> Result<TokenSequence> {
        self.check_patch(patch)?;
        let flat = patch.as_standard_layout();
        let flat = flat.as_slice().unwrap();
        let data: Vec<f64> = self.layout.perm.iter().map(|&i| flat[i]).collect();
        let n = data.len();
        let k0 = self.layout.kernel_volume(0);
        let mut x = g.constant(vec![n / k0, k0], data)?;
        let mut rows = n / k0;
        for s in 0..N_STAGES {
            if s > 0 {
                let k = self.layout.kernel_volume(s);
                rows /= k;
                x = g.reshape(x, vec![rows, k * self.layout.channels[s - 1]])?;
            }
            x = self.encoder[s].apply(g, p, x)?;
            if s + 1 < N_STAGES {
                x = g.gelu(x);
            }
        }
        if let Some(pos) = self.pos {
            x = g.add(x, p[pos])?;
        }
        TokenSequence::new(g, x, self.config.token_grid, position)
    }

    /// Logits `[n_voxels × n_classes]` in hierarchical voxel order; see
    /// [`PatchLayout::perm`].
    pub fn decode(&self, g: &mut Graph, p: &Bound, z: &TokenSequence) -> Result<Var> {
        let ch = self.layout.channels;
        let widths = [ch[1], ch[0], self.config.n_classes];
        let mut x = z.tokens;
        let mut rows = z.len();
        for s in 0..N_STAGES {
            x = self.decoder[s].apply(g, p, x)?;
            rows *= self.layout.kernel_volume(N_STAGES - 1 - s);
            x = g.reshape(x, vec![rows, widths[s]])?;
            if s + 1 < N_STAGES {
                x = g.gelu(x);
            }
        }
        Ok(x)
    }

    /// One layer of the stack. The middle patch is first fused with the
    /// overlapping halves of its neighbours (upper half with the first
    /// patch's lower half, lower half with the third patch's upper half),
    /// reading this layer's inputs, and then every patch goes through T1.
    /// Fusing first keeps the middle output of a single layer independent of
    /// the neighbours' far halves; deeper stacks widen the context through
    /// the neighbours' T1. With `last` the neighbours' T1 is skipped since
    /// nothing reads it.
    pub fn cptm_layer(
        &self,
        g: &mut Graph,
        p: &Bound,
        layer: usize,
        z: [TokenSequence; 3],
        last: bool,
    ) -> Result<[TokenSequence; 3]> {
        if z[0].grid != z[1].grid || z[1].grid != z[2].grid {
            return Err(Error::Shape(format!(
                "patch token grids differ: {:?}, {:?}, {:?}",
                z[0].grid, z[1].grid, z[2].grid
            )));
        }
        let t1 = &self.t1[layer];
        let z2 = match self.t2.get(layer) {
            Some(t2) => {
                let (_, lower1) = z[0].split_halves(g)?;
                let (upper2, lower2) = z[1].split_halves(g)?;
                let (upper3, _) = z[2].split_halves(g)?;
                let y_up = t2_fuse(g, p, &t2.from1, &upper2, &lower1)?;
                let y_lo = t2_fuse(g, p, &t2.from3, &lower2, &upper3)?;
                TokenSequence::join_halves(g, &y_up, &y_lo)?
            }
            None => z[1],
        };
        let z2 = t1_block(g, p, t1.for_patch(1), &z2)?;
        let (z1, z3) = if last {
            (z[0], z[2])
        } else {
            (
                t1_block(g, p, t1.for_patch(0), &z[0])?,
                t1_block(g, p, t1.for_patch(2), &z[2])?,
            )
        };
        Ok([z1, z2, z3])
    }

    /// Middle-patch logits for three patches.
    pub fn triple_logits(&self, g: &mut Graph, p: &Bound, triple: &PatchTriple) -> Result<Var> {
        if self.kind != ModelKind::Cptm {
            return Err(Error::Contract(
                "a baseline model reads a single patch".into(),
            ));
        }
        let positions = [
            PatchPosition::First,
            PatchPosition::Middle,
            PatchPosition::Last,
        ];
        let mut z = [0, 1, 2].map(|_| None);
        for k in 0..3 {
            z[k] = Some(self.encode(g, p, &triple.patches[k], positions[k])?);
        }
        let mut z = z.map(Option::unwrap);
        let n = self.config.n_cptm_layers;
        for l in 0..n {
            z = self.cptm_layer(g, p, l, z, l + 1 == n)?;
        }
        self.decode(g, p, &z[1])
    }

    /// Logits for one patch through the encoder, T1 stack and decoder only.
    pub fn single_logits(&self, g: &mut Graph, p: &Bound, patch: &Array3<f64>) -> Result<Var> {
        let mut z = self.encode(g, p, patch, PatchPosition::Middle)?;
        for t1 in &self.t1 {
            z = t1_block(g, p, t1.for_patch(1), &z)?;
        }
        self.decode(g, p, &z)
    }

    /// Dispatches on the model kind: a cross-patch model needs a triple, a
    /// baseline reads the middle patch of a triple or a single patch.
    pub fn logits(&self, g: &mut Graph, p: &Bound, input: ModelInput) -> Result<Var> {
        match (self.kind, input) {
            (ModelKind::Cptm, ModelInput::Triple(t)) => self.triple_logits(g, p, t),
            (ModelKind::Cptm, ModelInput::Single(_)) => Err(Error::Contract(
                "a cross-patch model needs three patches".into(),
            )),
            (ModelKind::Baseline, ModelInput::Triple(t)) => self.single_logits(g, p, t.middle()),
            (ModelKind::Baseline, ModelInput::Single(x)) => self.single_logits(g, p, x),
        }
    }

    /// Reorders hierarchical-order labels or values to row-major voxel order
    /// and back.
    pub fn to_hierarchical<T: Copy>(&self, row_major: &[T]) -> Vec<T> {
        self.layout.perm.iter().map(|&i| row_major[i]).collect()
    }

    /// `(n_classes, d, h, w)` from hierarchical-order logits.
    pub fn unpermute_logits(&self, logits: &[f64]) -> Array4<f64> {
        let c = self.config.n_classes;
        let [d, h, w] = self.config.patch_shape;
        let mut out = Array4::zeros((c, d, h, w));
        {
            let flat = out.as_slice_mut().unwrap();
            let n = d * h * w;
            for (r, &v) in self.layout.perm.iter().enumerate() {
                for k in 0..c {
                    flat[k * n + v] = logits[r * c + k];
                }
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_checkpoint(&self.store, path)
    }

    /// Loads weights saved from a model of the same config and kind.
    pub fn load_weights(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let other = read_checkpoint(path)?;
        if other.len() != self.store.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} tensors, model has {}",
                other.len(),
                self.store.len()
            )));
        }
        self.store.load_values(&other)
    }
}

fn forward_values(model: &CptmModel, input: ModelInput) -> Result<Array4<f64>> {
    let mut g = Graph::new();
    let p = model.store.bind(&mut g);
    let logits = match input {
        ModelInput::Triple(t) => model.triple_logits(&mut g, &p, t)?,
        ModelInput::Single(x) => model.single_logits(&mut g, &p, x)?,
    };
    Ok(model.unpermute_logits(g.value(logits)))
}

/// Middle-patch logits `(n_classes, d, h, w)` of a cross-patch model.
pub fn cptm_forward(model: &CptmModel, triple: &PatchTriple) -> Result<Array4<f64>> {
    forward_values(model, ModelInput::Triple(triple))
}

/// Single-patch logits `(n_classes, d, h, w)`; uses only the components a
/// baseline has, so it also runs on a cross-patch model.
pub fn baseline_forward(model: &CptmModel, patch: &Array3<f64>) -> Result<Array4<f64>> {
    forward_values(model, ModelInput::Single(patch))
}

/// Whatever the model kind reads: the triple, or its middle patch.
pub fn model_forward(model: &CptmModel, triple: &PatchTriple) -> Result<Array4<f64>> {
    match model.kind {
        ModelKind::Cptm => cptm_forward(model, triple),
        ModelKind::Baseline => baseline_forward(model, triple.middle()),
    }
}
