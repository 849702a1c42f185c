use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spinefuse_core::cptm::{
    evaluate_phantoms, sliding_infer, train_phantom_model, LogEntry, ModelKind,
    PhantomExperimentConfig, PhantomRunReport,
};
use spinefuse_core::io::{write_label_volume, write_scalar_volume, Datatype};

use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::output::{ensure_dir, write_json};

/// Settings shared by `phantom` and `train-demo`; flags override the file.
#[derive(Debug, Args)]
pub struct ExperimentFlags {
    /// Experiment config JSON (model, train and phantom settings).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub n_phantoms: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

impl ExperimentFlags {
    pub fn resolve(&self) -> CliResult<PhantomExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
            }
            None => PhantomExperimentConfig::default(),
        };
        if let Some(v) = self.steps {
            c.train.steps = v;
        }
        if let Some(v) = self.lr {
            c.train.lr = v;
        }
        if let Some(v) = self.batch_size {
            c.train.batch_size = v;
        }
        if let Some(v) = self.n_phantoms {
            c.n_phantoms = v;
        }
        if let Some(v) = self.n_val {
            c.n_val = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Cptm,
    Baseline,
    Both,
}

impl ModelChoice {
    fn kinds(self) -> Vec<ModelKind> {
        match self {
            ModelChoice::Cptm => vec![ModelKind::Cptm],
            ModelChoice::Baseline => vec![ModelKind::Baseline],
            ModelChoice::Both => vec![ModelKind::Baseline, ModelKind::Cptm],
        }
    }
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[command(flatten)]
    pub flags: ExperimentFlags,
    #[arg(long, value_enum, default_value = "both")]
    pub model: ModelChoice,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct TrainDemoArgs {
    #[command(flatten)]
    pub flags: ExperimentFlags,
    #[arg(long, value_enum, default_value = "cptm")]
    pub model: ModelChoice,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: ModelKind,
    pub runs: usize,
    pub mean_id_rate: f64,
    pub mean_interior_id_rate: f64,
    pub mean_d_mean: Option<f64>,
    pub mean_final_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub kind: String,
    pub runs: Vec<PhantomRunReport>,
    pub summary: Vec<ModelSummary>,
    /// Mean interior id.rate of the cross-patch model minus the baseline's,
    /// in percentage points, when both were run.
    pub interior_gap_pp: Option<f64>,
}

pub fn summarize(kind: &str, runs: Vec<PhantomRunReport>) -> ExperimentOutput {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut summary = Vec::new();
    for model in [ModelKind::Baseline, ModelKind::Cptm] {
        let rs: Vec<&PhantomRunReport> = runs.iter().filter(|r| r.model == model).collect();
        if rs.is_empty() {
            continue;
        }
        let d: Vec<f64> = rs.iter().filter_map(|r| r.d_mean).collect();
        summary.push(ModelSummary {
            model,
            runs: rs.len(),
            mean_id_rate: mean(&rs.iter().map(|r| r.id_rate).collect::<Vec<_>>()),
            mean_interior_id_rate: mean(&rs.iter().map(|r| r.interior_id_rate).collect::<Vec<_>>()),
            mean_d_mean: (!d.is_empty()).then(|| mean(&d)),
            mean_final_loss: mean(&rs.iter().map(|r| r.final_loss).collect::<Vec<_>>()),
        });
    }
    let interior = |m: ModelKind| {
        summary
            .iter()
            .find(|s| s.model == m)
            .map(|s| s.mean_interior_id_rate)
    };
    let interior_gap_pp = match (interior(ModelKind::Cptm), interior(ModelKind::Baseline)) {
        (Some(c), Some(b)) => Some(c - b),
        _ => None,
    };
    ExperimentOutput {
        kind: kind.to_string(),
        runs,
        summary,
        interior_gap_pp,
    }
}

/// JSON-lines training log that remembers its first write error.
struct LogFile {
    path: PathBuf,
    out: BufWriter<File>,
    error: Option<std::io::Error>,
}

impl LogFile {
    fn create(path: PathBuf) -> CliResult<Self> {
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(Self {
            path,
            out: BufWriter::new(file),
            error: None,
        })
    }

    fn push(&mut self, e: &LogEntry) {
        if self.error.is_some() {
            return;
        }
        let line = serde_json::to_string(e).expect("log entry serialises");
        if let Err(err) = writeln!(self.out, "{line}") {
            self.error = Some(err);
        }
    }

    fn finish(mut self) -> CliResult<PathBuf> {
        if let Some(e) = self.error.take() {
            return Err(CliError::io(&self.path, e));
        }
        self.out.flush().map_err(|e| CliError::io(&self.path, e))?;
        Ok(self.path)
    }
}

fn train_and_report(
    config: &PhantomExperimentConfig,
    kind: ModelKind,
    seed: u64,
    dir: &Path,
    progress: bool,
) -> CliResult<(PhantomRunReport, spinefuse_core::cptm::CptmModel, PathBuf)> {
    let mut log = LogFile::create(dir.join(format!("train_log_{kind}_seed{seed}.jsonl")))?;
    let every = (config.train.steps / 10).max(1);
    let (model, losses) = train_phantom_model(config, kind, seed, |e| {
        log.push(e);
        if progress && (e.step % every == 0 || e.step + 1 == config.train.steps) {
            println!(
                "{kind} seed {seed} step {:>5}: loss {:.4} lr {:.2e}",
                e.step, e.loss, e.lr
            );
        }
    })?;
    let log_path = log.finish()?;
    let phantoms = config.phantoms(seed)?;
    let mut report = evaluate_phantoms(config, &model, &phantoms[config.n_train()..])?;
    report.seed = seed;
    report.final_loss = losses.last().copied().unwrap_or(f64::NAN);
    report.steps = losses.len();
    report.n_train = config.n_train();
    Ok((report, model, log_path))
}

fn print_run(r: &PhantomRunReport) {
    println!(
        "{} seed {}: id.rate {:.1}% (interior {:.1}%, chance {:.1}%), d_mean {}, final loss {:.4}",
        r.model,
        r.seed,
        r.id_rate,
        r.interior_id_rate,
        r.chance_id_rate,
        r.d_mean.map_or("n/a".into(), |d| format!("{d:.2} mm")),
        r.final_loss
    );
}

pub fn run_phantom(args: &PhantomArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("phantom");
    let config = args.flags.resolve()?;
    if args.seeds.is_empty() {
        return Err(CliError::config("--seeds must name at least one seed"));
    }
    let dir = &args.flags.out;
    ensure_dir(dir)?;
    let runs: Vec<(ModelKind, u64)> = args
        .seeds
        .iter()
        .flat_map(|&s| args.model.kinds().into_iter().map(move |k| (k, s)))
        .collect();
    let results: Vec<(PhantomRunReport, PathBuf)> = runs
        .par_iter()
        .map(|&(kind, seed)| {
            train_and_report(&config, kind, seed, dir, false).map(|(r, _, log)| (r, log))
        })
        .collect::<CliResult<_>>()?;
    let mut reports = Vec::new();
    for (r, log) in results {
        print_run(&r);
        manifest.output(&log);
        reports.push(r);
    }
    let output = summarize("phantom-experiment", reports);
    for s in &output.summary {
        println!(
            "{} mean over {} seed(s): id.rate {:.1}%, interior {:.1}%",
            s.model, s.runs, s.mean_id_rate, s.mean_interior_id_rate
        );
    }
    let report_path = dir.join("report.json");
    write_json(&report_path, &output)?;
    manifest
        .config_path(args.flags.config.as_deref())
        .output(&report_path)
        .seeds(&args.seeds)
        .effective_config(&config)?;
    manifest.write(&dir.join("manifest.json"))?;
    Ok(())
}

pub fn run_train_demo(args: &TrainDemoArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("train-demo");
    let config = args.flags.resolve()?;
    let kind = match args.model {
        ModelChoice::Cptm => ModelKind::Cptm,
        ModelChoice::Baseline => ModelKind::Baseline,
        ModelChoice::Both => {
            return Err(CliError::config(
                "train-demo trains one model: cptm or baseline",
            ))
        }
    };
    let dir = &args.flags.out;
    ensure_dir(dir)?;
    let (report, model, log_path) = train_and_report(&config, kind, args.seed, dir, true)?;
    print_run(&report);

    let ckpt = dir.join("model.ckpt");
    model.save(&ckpt)?;
    // One held-out phantom with its prediction, for inspection.
    let phantoms = config.phantoms(args.seed)?;
    let sample = &phantoms[config.n_train()];
    let image = dir.join("val_image.nii.gz");
    let labels = dir.join("val_labels.nii.gz");
    let pred = dir.join("val_prediction.nii.gz");
    write_scalar_volume(&sample.image, Datatype::F32, &image)?;
    write_label_volume(&sample.labels, &labels)?;
    write_label_volume(&sliding_infer(&model, &sample.image)?, &pred)?;

    let output = summarize("train-demo", vec![report]);
    let report_path = dir.join("report.json");
    write_json(&report_path, &output)?;
    for p in [&report_path, &log_path, &ckpt, &image, &labels, &pred] {
        manifest.output(p);
    }
    manifest
        .config_path(args.flags.config.as_deref())
        .seeds(&[args.seed])
        .effective_config(&config)?;
    manifest.write(&dir.join("manifest.json"))?;
    Ok(())
}
