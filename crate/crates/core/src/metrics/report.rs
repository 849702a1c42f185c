use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{
    centroids, dice_masks, hausdorff_masks, identification, Identification, DEFAULT_THRESHOLD_MM,
};
use crate::error::{Error, Result};
use crate::labels::{is_vertebra, MAX_CLASS, VERTEBRA_FIRST, VERTEBRA_LAST};
use crate::volume::LabelVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationMode {
    #[serde(alias = "vertebra")]
    VertebraLevel,
    #[serde(alias = "patient")]
    PatientLevel,
}

impl std::str::FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vertebra-level" | "vertebra" => Ok(Self::VertebraLevel),
            "patient-level" | "patient" => Ok(Self::PatientLevel),
            _ => Err(Error::Config(format!(
                "unknown aggregation mode {s:?} (expected vertebra-level or patient-level)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Classes scored individually.
    pub classes: Vec<u16>,
    pub threshold_mm: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            classes: (1..=MAX_CLASS).collect(),
            threshold_mm: DEFAULT_THRESHOLD_MM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub id: u16,
    pub dc: Option<f64>,
    pub hd: Option<f64>,
    pub hd95: Option<f64>,
    pub present_gt: bool,
    pub present_pred: bool,
}

impl ClassMetrics {
    fn compute(
        id: u16,
        gt: &ndarray::Array3<bool>,
        pred: &ndarray::Array3<bool>,
        spacing: [f64; 3],
    ) -> Self {
        let hd = hausdorff_masks(gt.view(), pred.view(), spacing);
        Self {
            id,
            dc: dice_masks(gt.view(), pred.view()),
            hd: hd.map(|h| h.0),
            hd95: hd.map(|h| h.1),
            present_gt: gt.iter().any(|&b| b),
            present_pred: pred.iter().any(|&b| b),
        }
    }
}

/// Everything measured on one (ground truth, prediction) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub volume_id: String,
    pub per_class: Vec<ClassMetrics>,
    /// Binary union of all vertebra classes; `id` is 0.
    pub spine: ClassMetrics,
    pub identification: Identification,
    pub threshold_mm: f64,
}

impl CaseMetrics {
    /// Scores `pred` against `gt` as given. Post-processing such as
    /// [`largest_component_filter`](super::largest_component_filter) is the
    /// caller's choice.
    pub fn evaluate(
        volume_id: impl Into<String>,
        gt: &LabelVolume,
        pred: &LabelVolume,
        opts: &EvalOptions,
    ) -> Result<Self> {
        gt.check_same_geometry(pred)?;
        if !(opts.threshold_mm.is_finite() && opts.threshold_mm >= 0.0) {
            return Err(Error::Config(format!(
                "invalid identification threshold {}",
                opts.threshold_mm
            )));
        }
        let spacing = gt.spacing;
        let per_class = opts
            .classes
            .iter()
            .map(|&c| {
                ClassMetrics::compute(
                    c,
                    &gt.voxels.mapv(|v| v == c),
                    &pred.voxels.mapv(|v| v == c),
                    spacing,
                )
            })
            .collect();
        let spine = ClassMetrics::compute(
            0,
            &gt.voxels.mapv(is_vertebra),
            &pred.voxels.mapv(is_vertebra),
            spacing,
        );
        let vertebrae: Vec<u16> = (VERTEBRA_FIRST..=VERTEBRA_LAST).collect();
        let identification = identification(
            &centroids(gt, &vertebrae),
            &centroids(pred, &vertebrae),
            opts.threshold_mm,
        );
        Ok(Self {
            volume_id: volume_id.into(),
            per_class,
            spine,
            identification,
            threshold_mm: opts.threshold_mm,
        })
    }

    pub fn report(&self, mode: AggregationMode) -> MetricsReport {
        MetricsReport {
            volume_id: self.volume_id.clone(),
            mode,
            per_class: self.per_class.clone(),
            spine: self.spine.clone(),
            id_rate: self.identification.id_rate(),
            d_mean: self.identification.d_mean(),
            threshold_mm: self.threshold_mm,
        }
    }
}

/// Per-volume JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub volume_id: String,
    pub mode: AggregationMode,
    pub per_class: Vec<ClassMetrics>,
    pub spine: ClassMetrics,
    pub id_rate: Option<f64>,
    pub d_mean: Option<f64>,
    pub threshold_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub id: u16,
    pub dc: Option<f64>,
    pub hd: Option<f64>,
    pub hd95: Option<f64>,
    pub n_defined_dc: usize,
    pub n_defined_hd: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub mode: AggregationMode,
    pub volumes: usize,
    pub dc: Option<f64>,
    pub hd: Option<f64>,
    pub hd95: Option<f64>,
    /// Means per class over volumes; empty at patient level.
    pub per_class: Vec<ClassSummary>,
    pub id_rate: Option<f64>,
    pub d_mean: Option<f64>,
    pub threshold_mm: f64,
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn push(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.sum += v;
            self.n += 1;
        }
    }

    fn get(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

/// Vertebra level averages over every defined (volume, class) pair and pools
/// landmarks across volumes. Patient level scores the binary spine union of
/// each volume and averages per-volume values.
pub fn aggregate(cases: &[CaseMetrics], mode: AggregationMode) -> Result<AggregateSummary> {
    let first = cases
        .first()
        .ok_or_else(|| Error::Input("cannot aggregate an empty set of reports".into()))?;
    let threshold_mm = first.threshold_mm;
    if cases.iter().any(|c| c.threshold_mm != threshold_mm) {
        return Err(Error::Data(
            "reports were computed with different thresholds".into(),
        ));
    }
    let (mut dc, mut hd, mut hd95) = (Mean::default(), Mean::default(), Mean::default());
    let mut per_class = Vec::new();
    let (id_rate, d_mean);
    match mode {
        AggregationMode::VertebraLevel => {
            let mut ids: Vec<u16> = cases
                .iter()
                .flat_map(|c| c.per_class.iter().map(|m| m.id))
                .collect();
            ids.sort_unstable();
            ids.dedup();
            for id in ids {
                let (mut cdc, mut chd, mut chd95) =
                    (Mean::default(), Mean::default(), Mean::default());
                for m in cases
                    .iter()
                    .flat_map(|c| c.per_class.iter())
                    .filter(|m| m.id == id)
                {
                    cdc.push(m.dc);
                    chd.push(m.hd);
                    chd95.push(m.hd95);
                    dc.push(m.dc);
                    hd.push(m.hd);
                    hd95.push(m.hd95);
                }
                per_class.push(ClassSummary {
                    id,
                    dc: cdc.get(),
                    hd: chd.get(),
                    hd95: chd95.get(),
                    n_defined_dc: cdc.n,
                    n_defined_hd: chd.n,
                });
            }
            let pooled = cases.iter().fold(
                Identification {
                    identified: 0,
                    total: 0,
                    distance_sum: 0.0,
                },
                |acc, c| acc.merge(&c.identification),
            );
            id_rate = pooled.id_rate();
            d_mean = pooled.d_mean();
        }
        AggregationMode::PatientLevel => {
            let (mut rate, mut dist) = (Mean::default(), Mean::default());
            for c in cases {
                dc.push(c.spine.dc);
                hd.push(c.spine.hd);
                hd95.push(c.spine.hd95);
                rate.push(c.identification.id_rate());
                dist.push(c.identification.d_mean());
            }
            id_rate = rate.get();
            d_mean = dist.get();
        }
    }
    Ok(AggregateSummary {
        mode,
        volumes: cases.len(),
        dc: dc.get(),
        hd: hd.get(),
        hd95: hd95.get(),
        per_class,
        id_rate,
        d_mean,
        threshold_mm,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    volume_id: &'a str,
    class_id: u16,
    dc: Option<f64>,
    hd: Option<f64>,
    hd95: Option<f64>,
    present_gt: bool,
    present_pred: bool,
}

/// One row per (volume, class); undefined metrics are empty cells.
pub fn write_csv<W: Write>(cases: &[CaseMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in cases {
        for m in &c.per_class {
            w.serialize(CsvRow {
                volume_id: &c.volume_id,
                class_id: m.id,
                dc: m.dc,
                hd: m.hd,
                hd95: m.hd95,
                present_gt: m.present_gt,
                present_pred: m.present_pred,
            })
            .map_err(|e| Error::Data(format!("csv export failed: {e}")))?;
        }
    }
    w.flush()
        .map_err(|e| Error::Data(format!("csv export failed: {e}")))?;
    Ok(())
}
