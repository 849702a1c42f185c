//! Identification on ambiguous phantoms: a cross-patch model against the
//! single-patch baseline trained and evaluated on identical data.

use ndarray::s;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::crop::{min_value, pad_to, tri_crop};
use super::infer::sliding_infer;
use super::model::{CptmModel, ModelKind};
use super::train::{fit, LogEntry, TrainConfig, TrainSample};
use super::CptmConfig;
use crate::error::{Error, Result};
use crate::io::{generate_phantom, Phantom, PhantomSpec};
use crate::labels::VERTEBRA_FIRST;
use crate::metrics::{
    centroids, identification, largest_component_filter, Identification, DEFAULT_THRESHOLD_MM,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomExperimentConfig {
    pub model: CptmConfig,
    pub train: TrainConfig,
    pub n_phantoms: usize,
    /// Phantoms held out for evaluation; the rest are for training.
    pub n_val: usize,
    pub n_segments: usize,
    pub segment_depth_vox: usize,
    /// `(h, w)` of every phantom.
    pub in_plane: [usize; 2],
    /// `(z, y, x)` mm.
    pub spacing: [f64; 3],
    /// Inclusive range of the soft-tissue margins above and below the
    /// column, drawn independently per phantom in steps of 2 slices.
    pub margin_range: [usize; 2],
    pub contrast: f64,
    pub noise_sigma: f64,
    pub threshold_mm: f64,
    /// Keep the largest component per class before evaluation.
    pub postprocess: bool,
}

impl Default for PhantomExperimentConfig {
    fn default() -> Self {
        Self {
            model: CptmConfig::phantom(),
            train: TrainConfig {
                steps: 3000,
                batch_size: 8,
                lr: 2e-3,
                ..TrainConfig::default()
            },
            n_phantoms: 200,
            n_val: 40,
            n_segments: 12,
            segment_depth_vox: 4,
            in_plane: [8, 8],
            spacing: [4.0, 1.0, 1.0],
            margin_range: [2, 10],
            contrast: 1.0,
            noise_sigma: 0.05,
            threshold_mm: DEFAULT_THRESHOLD_MM,
            postprocess: true,
        }
    }
}

impl PhantomExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.n_val == 0 || self.n_val >= self.n_phantoms {
            return bad(format!(
                "n_val {} must be in 1..{}",
                self.n_val, self.n_phantoms
            ));
        }
        let [lo, hi] = self.margin_range;
        if lo > hi || lo % 2 != 0 || hi % 2 != 0 {
            return bad(format!(
                "margin_range {:?} must be ordered and even",
                self.margin_range
            ));
        }
        if self.n_segments * self.segment_depth_vox + 2 * lo < self.model.patch_shape[0] {
            return bad("phantoms are shallower than one patch".into());
        }
        if self.model.n_classes < VERTEBRA_FIRST as usize + self.n_segments {
            return bad(format!(
                "n_classes {} cannot hold classes up to {}",
                self.model.n_classes,
                VERTEBRA_FIRST as usize + self.n_segments - 1
            ));
        }
        if !(self.threshold_mm.is_finite() && self.threshold_mm > 0.0) {
            return bad(format!(
                "threshold_mm must be positive, got {}",
                self.threshold_mm
            ));
        }
        self.spec(0, [lo, lo]).validate()
    }

    fn spec(&self, seed: u64, margins: [usize; 2]) -> PhantomSpec {
        PhantomSpec {
            n_segments: self.n_segments,
            segment_depth_vox: self.segment_depth_vox,
            shape: [
                margins[0] + self.n_segments * self.segment_depth_vox + margins[1],
                self.in_plane[0],
                self.in_plane[1],
            ],
            spacing: self.spacing,
            contrast: self.contrast,
            noise_sigma: self.noise_sigma,
            ambiguity: true,
            seed,
            z_offset: margins[0],
        }
    }

    /// Segments whose every voxel is more than a patch depth (from the
    /// boundary slice outside the column) away from both ends, so no single
    /// patch can contain both the segment and a column end.
    pub fn interior_segments(&self) -> Vec<usize> {
        let (n, seg, pd) = (
            self.n_segments,
            self.segment_depth_vox,
            self.model.patch_shape[0],
        );
        (0..n)
            .filter(|&k| seg * k + 2 > pd && seg * (n - k) > pd + 2)
            .collect()
    }

    pub fn n_train(&self) -> usize {
        self.n_phantoms - self.n_val
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    /// The `n_phantoms` volumes for `seed`, training set first.
    pub fn phantoms(&self, seed: u64) -> Result<Vec<Phantom>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a);
        let [lo, hi] = self.margin_range;
        (0..self.n_phantoms)
            .map(|i| {
                let mut margin = || lo + 2 * rng.gen_range(0..=(hi - lo) / 2);
                let margins = [margin(), margin()];
                generate_phantom(
                    &self.spec(seed.wrapping_mul(1_000_003).wrapping_add(i as u64), margins),
                )
            })
            .collect()
    }
}

/// Windows of the training phantoms, padded the way sliding inference pads.
struct WindowSampler<'a> {
    padded: Vec<(ndarray::Array3<f64>, &'a Phantom)>,
    patch: [usize; 3],
    rng: ChaCha8Rng,
}

impl<'a> WindowSampler<'a> {
    fn new(train: &'a [Phantom], patch: [usize; 3], seed: u64) -> Self {
        let pd = patch[0];
        let padded = train
            .iter()
            .map(|p| {
                let v = p.image.data.view();
                let (d, h, w) = v.dim();
                let (padded, _) =
                    pad_to(v, [d + pd, h.max(patch[1]), w.max(patch[2])], min_value(v));
                (padded, p)
            })
            .collect();
        Self {
            padded,
            patch,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xba7c_4e55),
        }
    }

    fn sample(&mut self) -> Result<TrainSample> {
        let [pd, ph, pw] = self.patch;
        let (vol, phantom) = &self.padded[self.rng.gen_range(0..self.padded.len())];
        let (d, h, w) = phantom.labels.voxels.dim();
        if h != ph || w != pw {
            return Err(Error::Config(format!(
                "phantom in-plane {h}×{w} must equal the patch {ph}×{pw}"
            )));
        }
        // Middle patch in original coordinates is [z, z + pd).
        let z = 2 * self.rng.gen_range(0..=(d - pd) / 2);
        Ok(TrainSample {
            triple: tri_crop(vol.view(), self.patch, z, [0, 0])?,
            labels: phantom
                .labels
                .voxels
                .slice(s![z..z + pd, .., ..])
                .to_owned(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomRunReport {
    pub model: ModelKind,
    pub seed: u64,
    /// Percentages over every validation landmark.
    pub id_rate: f64,
    pub interior_id_rate: f64,
    pub interior_segments: Vec<usize>,
    pub per_segment_id_rate: Vec<f64>,
    /// Mm over identified landmarks; `None` when none were.
    pub d_mean: Option<f64>,
    /// One in `n_segments`, in percent.
    pub chance_id_rate: f64,
    pub final_loss: f64,
    pub steps: usize,
    pub n_train: usize,
    pub n_val: usize,
}

/// Trains `kind` on the training phantoms of `seed`. Returns the model and
/// the loss of every step.
pub fn train_phantom_model(
    config: &PhantomExperimentConfig,
    kind: ModelKind,
    seed: u64,
    log: impl FnMut(&LogEntry),
) -> Result<(CptmModel, Vec<f64>)> {
    config.validate()?;
    let phantoms = config.phantoms(seed)?;
    let train = &phantoms[..config.n_train()];
    let mut model = CptmModel::new(&config.model, kind, seed)?;
    let mut sampler = WindowSampler::new(train, config.model.patch_shape, seed);
    let batch = config.train.batch_size;
    let losses = fit(
        &mut model,
        &config.train,
        seed,
        |_| (0..batch).map(|_| sampler.sample()).collect(),
        log,
    )?;
    Ok((model, losses))
}

/// Trains `kind` on the training phantoms of `seed`, segments the held-out
/// ones by sliding inference and scores identification.
pub fn run_phantom_experiment(
    config: &PhantomExperimentConfig,
    kind: ModelKind,
    seed: u64,
    log: impl FnMut(&LogEntry),
) -> Result<PhantomRunReport> {
    let (model, losses) = train_phantom_model(config, kind, seed, log)?;
    let phantoms = config.phantoms(seed)?;
    let mut report = evaluate_phantoms(config, &model, &phantoms[config.n_train()..])?;
    report.seed = seed;
    report.final_loss = losses.last().copied().unwrap_or(f64::NAN);
    report.steps = losses.len();
    report.n_train = config.n_train();
    Ok(report)
}

/// Identification of `model` on `phantoms`.
pub fn evaluate_phantoms(
    config: &PhantomExperimentConfig,
    model: &CptmModel,
    phantoms: &[Phantom],
) -> Result<PhantomRunReport> {
    let n = config.n_segments;
    let classes: Vec<u16> = (0..n).map(|k| VERTEBRA_FIRST + k as u16).collect();
    let interior = config.interior_segments();
    let mut per_segment = vec![
        Identification {
            identified: 0,
            total: 0,
            distance_sum: 0.0
        };
        n
    ];
    for p in phantoms {
        let pred = sliding_infer(model, &p.image)?;
        let pred = if config.postprocess {
            largest_component_filter(&pred)
        } else {
            pred
        };
        let gt_marks = centroids(&p.labels, &classes);
        let pred_marks = centroids(&pred, &classes);
        for g in &gt_marks {
            let k = (g.class_id - VERTEBRA_FIRST) as usize;
            per_segment[k] = per_segment[k].merge(&identification(
                std::slice::from_ref(g),
                &pred_marks,
                config.threshold_mm,
            ));
        }
    }
    let pool = |ks: &mut dyn Iterator<Item = usize>| {
        ks.fold(
            Identification {
                identified: 0,
                total: 0,
                distance_sum: 0.0,
            },
            |acc, k| acc.merge(&per_segment[k]),
        )
    };
    let all = pool(&mut (0..n));
    let inner = pool(&mut interior.iter().copied());
    Ok(PhantomRunReport {
        model: model.kind(),
        seed: 0,
        id_rate: all.id_rate().unwrap_or(0.0),
        interior_id_rate: inner.id_rate().unwrap_or(0.0),
        interior_segments: interior,
        per_segment_id_rate: per_segment
            .iter()
            .map(|i| i.id_rate().unwrap_or(0.0))
            .collect(),
        d_mean: all.d_mean(),
        chance_id_rate: 100.0 / n as f64,
        final_loss: f64::NAN,
        steps: 0,
        n_train: 0,
        n_val: phantoms.len(),
    })
}
