use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spinefuse_core::io::read_label_volume;
use spinefuse_core::labels::MAX_CLASS;
use spinefuse_core::metrics::{
    aggregate, largest_component_filter, write_csv, AggregateSummary, AggregationMode, CaseMetrics,
    EvalOptions, MetricsReport, DEFAULT_THRESHOLD_MM,
};

use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::output::{ensure_parent, is_nifti, sidecar, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Ground-truth NIfTI, or a directory of them.
    #[arg(long)]
    pub gt: PathBuf,
    /// Prediction NIfTI, or a directory with the same file names.
    #[arg(long)]
    pub pred: PathBuf,
    /// `vertebra` (pooled per class and landmark) or `patient` (per volume).
    #[arg(long)]
    pub mode: Option<String>,
    /// Keep only the largest component of each predicted class first.
    #[arg(long, value_enum)]
    pub postprocess: Option<Switch>,
    #[arg(long)]
    pub threshold_mm: Option<f64>,
    /// JSON with any of `mode`, `postprocess`, `threshold_mm`, `classes`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Metrics JSON; the CSV goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: AggregationMode,
    pub postprocess: bool,
    pub threshold_mm: f64,
    pub classes: Vec<u16>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: AggregationMode::VertebraLevel,
            postprocess: true,
            threshold_mm: DEFAULT_THRESHOLD_MM,
            classes: (1..=MAX_CLASS).collect(),
        }
    }
}

impl EvalConfig {
    /// Defaults, overridden by the config file, overridden by flags.
    pub fn resolve(args: &EvaluateArgs) -> CliResult<Self> {
        let mut c = match &args.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        if let Some(m) = &args.mode {
            c.mode = m.parse()?;
        }
        if let Some(s) = args.postprocess {
            c.postprocess = s == Switch::On;
        }
        if let Some(t) = args.threshold_mm {
            c.threshold_mm = t;
        }
        if !(c.threshold_mm.is_finite() && c.threshold_mm >= 0.0) {
            return Err(CliError::config(format!(
                "threshold_mm must be non-negative, got {}",
                c.threshold_mm
            )));
        }
        if let Some(bad) = c.classes.iter().find(|&&k| k == 0 || k > MAX_CLASS) {
            return Err(CliError::config(format!(
                "class {bad} outside 1..={MAX_CLASS}"
            )));
        }
        Ok(c)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvaluationOutput {
    pub kind: String,
    pub config: EvalConfig,
    pub volumes: Vec<MetricsReport>,
    pub cases: Vec<CaseMetrics>,
    pub summary: AggregateSummary,
}

fn volume_id(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.trim_end_matches(".gz")
        .trim_end_matches(".nii")
        .to_string()
}

/// `(id, gt, pred)` triples: one pair of files, or every NIfTI in the gt
/// directory matched by name in the prediction directory.
fn pairs(gt: &Path, pred: &Path) -> CliResult<Vec<(String, PathBuf, PathBuf)>> {
    if !gt.is_dir() {
        if pred.is_dir() {
            return Err(CliError::input("--gt is a file but --pred is a directory"));
        }
        return Ok(vec![(volume_id(gt), gt.to_path_buf(), pred.to_path_buf())]);
    }
    if !pred.is_dir() {
        return Err(CliError::input("--gt is a directory but --pred is not"));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(gt)
        .map_err(|e| CliError::io(gt, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_nifti(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::input(format!(
            "no NIfTI files in {}",
            gt.display()
        )));
    }
    files
        .into_iter()
        .map(|g| {
            let p = pred.join(g.file_name().unwrap());
            if !p.exists() {
                return Err(CliError::input(format!(
                    "no prediction {} for {}",
                    p.display(),
                    g.display()
                )));
            }
            Ok((volume_id(&g), g, p))
        })
        .collect()
}

pub fn run(args: &EvaluateArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("evaluate");
    let config = EvalConfig::resolve(args)?;
    let pairs = pairs(&args.gt, &args.pred)?;
    let opts = EvalOptions {
        classes: config.classes.clone(),
        threshold_mm: config.threshold_mm,
    };
    let cases: Vec<CaseMetrics> = pairs
        .par_iter()
        .map(|(id, g, p)| -> CliResult<CaseMetrics> {
            let gt = read_label_volume(g)?;
            let pred = read_label_volume(p)?;
            let pred = if config.postprocess {
                largest_component_filter(&pred)
            } else {
                pred
            };
            CaseMetrics::evaluate(id.clone(), &gt, &pred, &opts)
                .map_err(|e| CliError::from(e).with_context(&format!("volume {id}")))
        })
        .collect::<CliResult<_>>()?;
    let summary = aggregate(&cases, config.mode)?;
    let output = EvaluationOutput {
        kind: "evaluation".into(),
        config: config.clone(),
        volumes: cases.iter().map(|c| c.report(config.mode)).collect(),
        cases,
        summary,
    };
    write_json(&args.out, &output)?;
    let csv_path = sidecar(&args.out, ".csv");
    ensure_parent(&csv_path)?;
    let file = std::fs::File::create(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    write_csv(&output.cases, file)?;

    let s = &output.summary;
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.2}"));
    println!(
        "{} volume(s), {:?}: DC {} HD {} HD95 {} id.rate {} d_mean {}",
        s.volumes,
        config.mode,
        pct(s.dc),
        pct(s.hd),
        pct(s.hd95),
        pct(s.id_rate),
        pct(s.d_mean)
    );
    for (_, g, p) in &pairs {
        manifest.input(g).input(p);
    }
    if let Some(c) = &args.config {
        manifest.input(c);
    }
    manifest
        .config_path(args.config.as_deref())
        .output(&args.out)
        .output(&csv_path)
        .effective_config(&config)?;
    manifest.write(&sidecar(&args.out, ".manifest.json"))?;
    Ok(())
}
