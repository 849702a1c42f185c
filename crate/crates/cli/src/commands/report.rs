use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use spinefuse_core::cptm::PhantomRunReport;
use spinefuse_core::metrics::{aggregate, AggregateSummary, AggregationMode, CaseMetrics};

use super::evaluate::EvaluationOutput;
use super::experiment::{summarize, ExperimentOutput};
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::output::{read_json_value, sidecar, write_json};

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `evaluate` outputs, or `phantom` / `train-demo` reports. All must be
    /// of one kind.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Aggregation for evaluation inputs; defaults to the first file's.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct CombinedEvaluation {
    kind: &'static str,
    mode: AggregationMode,
    sources: Vec<String>,
    summary: AggregateSummary,
}

enum Loaded {
    Evaluation(Vec<EvaluationOutput>),
    Experiment(Vec<ExperimentOutput>),
}

fn load(inputs: &[PathBuf]) -> CliResult<Loaded> {
    let mut evals = Vec::new();
    let mut exps = Vec::new();
    for p in inputs {
        let v = read_json_value(p)?;
        let kind = v
            .get("kind")
            .and_then(|k| k.as_str())
            .unwrap_or("")
            .to_string();
        let parsed = match kind.as_str() {
            "evaluation" => serde_json::from_value(v).map(|e| evals.push(e)),
            "phantom-experiment" | "train-demo" => serde_json::from_value(v).map(|e| exps.push(e)),
            other => {
                return Err(CliError::input(format!(
                    "{}: unknown report kind {other:?}",
                    p.display()
                )))
            }
        };
        parsed.map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
    }
    match (evals.is_empty(), exps.is_empty()) {
        (false, true) => Ok(Loaded::Evaluation(evals)),
        (true, false) => Ok(Loaded::Experiment(exps)),
        _ => Err(CliError::input(
            "inputs mix evaluation and experiment reports",
        )),
    }
}

pub fn run(args: &ReportArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("report");
    for p in &args.inputs {
        manifest.input(p);
    }
    let sources: Vec<String> = args
        .inputs
        .iter()
        .map(|p| p.display().to_string())
        .collect();
    let json = match load(&args.inputs)? {
        Loaded::Evaluation(evals) => {
            let mode = match &args.mode {
                Some(m) => m.parse()?,
                None => evals[0].config.mode,
            };
            let cases: Vec<CaseMetrics> = evals.into_iter().flat_map(|e| e.cases).collect();
            let summary = aggregate(&cases, mode)?;
            let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.2}"));
            println!(
                "{} volume(s), {mode:?}: DC {} HD {} HD95 {} id.rate {} d_mean {}",
                summary.volumes,
                pct(summary.dc),
                pct(summary.hd),
                pct(summary.hd95),
                pct(summary.id_rate),
                pct(summary.d_mean)
            );
            serde_json::to_value(CombinedEvaluation {
                kind: "evaluation-summary",
                mode,
                sources,
                summary,
            })?
        }
        Loaded::Experiment(exps) => {
            if args.mode.is_some() {
                return Err(CliError::config(
                    "--mode applies to evaluation reports only",
                ));
            }
            let runs: Vec<PhantomRunReport> = exps.into_iter().flat_map(|e| e.runs).collect();
            println!(
                "{:<9} {:>5} {:>8} {:>9} {:>9} {:>10}",
                "model", "seed", "id.rate", "interior", "d_mean", "final loss"
            );
            for r in &runs {
                println!(
                    "{:<9} {:>5} {:>8.1} {:>9.1} {:>9} {:>10.4}",
                    r.model.to_string(),
                    r.seed,
                    r.id_rate,
                    r.interior_id_rate,
                    r.d_mean.map_or("n/a".into(), |d| format!("{d:.2}")),
                    r.final_loss
                );
            }
            let combined = summarize("phantom-experiment", runs);
            for s in &combined.summary {
                println!(
                    "{} mean over {} run(s): id.rate {:.1}%, interior {:.1}%",
                    s.model, s.runs, s.mean_id_rate, s.mean_interior_id_rate
                );
            }
            if let Some(gap) = combined.interior_gap_pp {
                println!("interior gap: {gap:+.1} pp");
            }
            serde_json::to_value(combined)?
        }
    };
    if let Some(out) = &args.out {
        write_json(out, &json)?;
        manifest
            .output(out)
            .effective_config(&serde_json::json!({ "mode": args.mode }))?;
        manifest.write(&sidecar(out, ".manifest.json"))?;
    }
    Ok(())
}
