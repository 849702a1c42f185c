use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use spinefuse_core::io::{read_label_volume, write_label_volume};
use spinefuse_core::labels::{
    fuse_pseudo_with_gt, remap_to_universal, validate_fused, AnatomyTaxonomy, DatasetLabelMap,
};

use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::output::{ensure_parent, is_nifti, sidecar, write_json};

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Pseudo-label volume in universal ids.
    #[arg(long)]
    pub pseudo: PathBuf,
    /// Partial ground truth in the dataset's local ids.
    #[arg(long)]
    pub gt: PathBuf,
    /// Dataset label map (JSON).
    #[arg(long)]
    pub remap: PathBuf,
    /// Taxonomy JSON; the bundled one by default.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Fused NIfTI (`.nii` or `.nii.gz`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct ClassRow {
    id: u16,
    name: String,
    voxels: usize,
    volume_mm3: f64,
}

#[derive(Serialize)]
struct FuseReport {
    kind: &'static str,
    dataset_id: String,
    annotated: Vec<u16>,
    out_of_range: usize,
    histogram: std::collections::BTreeMap<String, usize>,
    classes: Vec<ClassRow>,
}

pub fn run(args: &FuseArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("fuse");
    if !is_nifti(&args.out) {
        return Err(CliError::config(format!(
            "--out {} must end in .nii or .nii.gz",
            args.out.display()
        )));
    }
    let taxonomy = match &args.taxonomy {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            AnatomyTaxonomy::from_json(&text)?
        }
        None => AnatomyTaxonomy::v1(),
    };
    let map = DatasetLabelMap::load(&args.remap)?;
    for id in map.annotated().ids() {
        if taxonomy.get(id).is_none() {
            return Err(CliError::input(format!(
                "annotated class {id} is not in the taxonomy"
            )));
        }
    }
    let pseudo = read_label_volume(&args.pseudo)?;
    let gt = read_label_volume(&args.gt)?;
    let gt = remap_to_universal(&gt, &map)?;
    let fused = fuse_pseudo_with_gt(&pseudo, &gt, map.annotated())?;
    let check = validate_fused(&fused);
    if !check.is_valid() {
        return Err(CliError::input(format!(
            "fused volume has {} voxels above class 33 (from the pseudo labels)",
            check.out_of_range
        )));
    }
    ensure_parent(&args.out)?;
    write_label_volume(&fused, &args.out)?;
    let report = FuseReport {
        kind: "fuse",
        dataset_id: map.dataset_id().to_string(),
        annotated: map.annotated().ids(),
        out_of_range: check.out_of_range,
        histogram: check
            .histogram
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
        classes: check
            .classes
            .iter()
            .map(|c| ClassRow {
                id: c.id,
                name: taxonomy
                    .get(c.id)
                    .map(|e| e.name.clone())
                    .unwrap_or_default(),
                voxels: c.voxels,
                volume_mm3: c.volume_mm3,
            })
            .collect(),
    };
    let report_path = sidecar(&args.out, ".report.json");
    write_json(&report_path, &report)?;
    println!(
        "fused {} classes into {} ({} voxels)",
        report.classes.len(),
        args.out.display(),
        fused.voxels.len()
    );
    manifest
        .input(&args.pseudo)
        .input(&args.gt)
        .input(&args.remap)
        .output(&args.out)
        .output(&report_path)
        .effective_config(&serde_json::json!({
            "taxonomy": args.taxonomy.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "bundled v1".into()),
            "dataset_id": map.dataset_id(),
            "annotated": map.annotated().ids(),
        }))?;
    if let Some(t) = &args.taxonomy {
        manifest.input(t);
    }
    manifest.write(&sidecar(&args.out, ".manifest.json"))?;
    Ok(())
}
