use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Array3;
use serde_json::Value;
use spinefuse_core::io::{read_label_volume, write_label_volume};
use spinefuse_core::labels::{fuse_pseudo_with_gt, ClassSet};
use spinefuse_core::LabelVolume;
use tempfile::TempDir;

fn spinefuse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinefuse"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}: {}",
        o.status.code(),
        stderr(o)
    );
}

fn read(path: &Path) -> Value {
    serde_json::from_str(
        &std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display())),
    )
    .unwrap()
}

fn assert_schema(name: &str, instance: &Value) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../schemas")
        .join(name);
    let schema = read(&path);
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("schema compiles");
    let msgs: Vec<String> = match compiled.validate(instance) {
        Ok(()) => return,
        Err(errors) => errors
            .map(|e| format!("{} at {}", e, e.instance_path))
            .collect(),
    };
    panic!("{name}: {msgs:?}");
}

/// The stderr error object, checked against its schema.
fn error_object(o: &Output) -> Value {
    let line = stderr(o);
    let v: Value = serde_json::from_str(line.trim())
        .unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {line}"));
    assert_schema("error.schema.json", &v);
    v["error"].clone()
}

fn labels(d: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> u16) -> LabelVolume {
    LabelVolume::new(
        Array3::from_shape_fn((d, h, w), |(z, y, x)| f(z, y, x)),
        [2.0, 1.0, 1.0],
        [0.0; 3],
    )
    .unwrap()
}

fn write_map(path: &Path, remap: &[(u16, u16)], annotated: &[u16]) {
    let remap: serde_json::Map<String, Value> = remap
        .iter()
        .map(|(k, v)| (k.to_string(), Value::from(*v)))
        .collect();
    let v = serde_json::json!({ "dataset_id": "fixture", "remap": remap, "annotated": annotated });
    std::fs::write(path, v.to_string()).unwrap();
}

#[test]
fn fuse_with_empty_annotation_returns_pseudo() {
    let dir = TempDir::new().unwrap();
    let pseudo = labels(4, 5, 6, |z, y, x| ((z * 7 + y * 3 + x) % 34) as u16);
    write_label_volume(&pseudo, dir.path().join("pseudo.nii.gz")).unwrap();
    write_label_volume(&pseudo.zeros_like(), dir.path().join("gt.nii.gz")).unwrap();
    write_map(&dir.path().join("map.json"), &[], &[]);
    let o = spinefuse(
        dir.path(),
        &[
            "fuse",
            "--pseudo",
            "pseudo.nii.gz",
            "--gt",
            "gt.nii.gz",
            "--remap",
            "map.json",
            "--out",
            "out/fused.nii.gz",
        ],
    );
    ok(&o);
    let fused = read_label_volume(dir.path().join("out/fused.nii.gz")).unwrap();
    assert_eq!(fused, pseudo);
    let report = read(&dir.path().join("out/fused.report.json"));
    assert_schema("fuse-report.schema.json", &report);
    let manifest = read(&dir.path().join("out/fused.manifest.json"));
    assert_schema("manifest.schema.json", &manifest);
    assert_eq!(manifest["command"], "fuse");
}

#[test]
fn fuse_truth_table_matches_library() {
    let dir = TempDir::new().unwrap();
    // Every (pseudo, local gt) pair over pseudo {0, 9, 10, 11, 20} and
    // local gt {0, 1, 2}, with local 1 → 10 and 2 → 11 annotated.
    let pseudo_vals = [0u16, 9, 10, 11, 20];
    let gt_vals = [0u16, 1, 2];
    let pseudo = labels(1, pseudo_vals.len(), gt_vals.len(), |_, y, _| {
        pseudo_vals[y]
    });
    let gt_local = labels(1, pseudo_vals.len(), gt_vals.len(), |_, _, x| gt_vals[x]);
    write_label_volume(&pseudo, dir.path().join("pseudo.nii")).unwrap();
    write_label_volume(&gt_local, dir.path().join("gt.nii")).unwrap();
    write_map(
        &dir.path().join("map.json"),
        &[(0, 0), (1, 10), (2, 11)],
        &[10, 11],
    );
    ok(&spinefuse(
        dir.path(),
        &[
            "fuse",
            "--pseudo",
            "pseudo.nii",
            "--gt",
            "gt.nii",
            "--remap",
            "map.json",
            "--out",
            "fused.nii",
        ],
    ));
    let fused = read_label_volume(dir.path().join("fused.nii")).unwrap();
    let gt_uni = labels(1, pseudo_vals.len(), gt_vals.len(), |_, _, x| {
        [0u16, 10, 11][x]
    });
    let expected =
        fuse_pseudo_with_gt(&pseudo, &gt_uni, ClassSet::from_ids([10, 11]).unwrap()).unwrap();
    assert_eq!(fused, expected);
    // Rows: annotated gt wins; otherwise an annotated pseudo class is dropped.
    let want = [
        [0, 10, 11],
        [9, 10, 11],
        [0, 10, 11],
        [0, 10, 11],
        [20, 10, 11],
    ];
    for (y, row) in want.iter().enumerate() {
        for (x, &v) in row.iter().enumerate() {
            assert_eq!(
                fused.voxels[[0, y, x]],
                v,
                "pseudo {} gt {}",
                pseudo_vals[y],
                gt_vals[x]
            );
        }
    }
}

#[test]
fn fuse_mismatched_geometry_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    write_label_volume(&labels(4, 5, 6, |_, _, _| 1), dir.path().join("pseudo.nii")).unwrap();
    write_label_volume(&labels(4, 5, 7, |_, _, _| 0), dir.path().join("gt.nii")).unwrap();
    write_map(&dir.path().join("map.json"), &[], &[]);
    let o = spinefuse(
        dir.path(),
        &[
            "fuse",
            "--pseudo",
            "pseudo.nii",
            "--gt",
            "gt.nii",
            "--remap",
            "map.json",
            "--out",
            "fused.nii",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    let e = error_object(&o);
    let msg = e["message"].as_str().unwrap();
    assert!(
        msg.contains("[4, 5, 6]") && msg.contains("[4, 5, 7]"),
        "{msg}"
    );
    assert!(!dir.path().join("fused.nii").exists());
}

#[test]
fn fuse_rejects_non_nifti_output_as_config_error() {
    let dir = TempDir::new().unwrap();
    let o = spinefuse(
        dir.path(),
        &[
            "fuse", "--pseudo", "a.nii", "--gt", "b.nii", "--remap", "m.json", "--out", "x.txt",
        ],
    );
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_object(&o)["kind"], "config");
}

fn column(d: usize) -> LabelVolume {
    // Three stacked box classes.
    labels(d, 6, 6, |z, y, x| {
        if (1..5).contains(&y) && (1..5).contains(&x) && z >= 1 && z < d - 1 {
            9 + ((z - 1) / ((d - 2) / 3)).min(2) as u16
        } else {
            0
        }
    })
}

#[test]
fn evaluate_identical_volumes_is_perfect() {
    let dir = TempDir::new().unwrap();
    let gt = column(14);
    write_label_volume(&gt, dir.path().join("gt.nii.gz")).unwrap();
    write_label_volume(&gt, dir.path().join("pred.nii.gz")).unwrap();
    ok(&spinefuse(
        dir.path(),
        &[
            "evaluate",
            "--gt",
            "gt.nii.gz",
            "--pred",
            "pred.nii.gz",
            "--out",
            "eval.json",
        ],
    ));
    let v = read(&dir.path().join("eval.json"));
    assert_schema("evaluation.schema.json", &v);
    for c in v["volumes"][0]["per_class"].as_array().unwrap() {
        if c["present_gt"] == true {
            assert_eq!(c["dc"], 1.0, "{c}");
            assert_eq!(c["hd"], 0.0, "{c}");
        }
    }
    assert_eq!(v["summary"]["id_rate"], 100.0);
    assert!(dir.path().join("eval.csv").exists());
    assert_schema(
        "manifest.schema.json",
        &read(&dir.path().join("eval.manifest.json")),
    );
}

#[test]
fn postprocess_matters_only_with_satellites() {
    let dir = TempDir::new().unwrap();
    let gt = column(14);
    let mut satellite = gt.clone();
    satellite.voxels[[12, 0, 0]] = 9;
    write_label_volume(&gt, dir.path().join("gt.nii")).unwrap();
    write_label_volume(&gt, dir.path().join("clean.nii")).unwrap();
    write_label_volume(&satellite, dir.path().join("blob.nii")).unwrap();
    let class9 = |out: &str| -> (f64, f64) {
        let v = read(&dir.path().join(out));
        let c = v["volumes"][0]["per_class"]
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["id"] == 9)
            .unwrap()
            .clone();
        (c["dc"].as_f64().unwrap(), c["hd"].as_f64().unwrap())
    };
    for (pred, differs) in [("blob.nii", true), ("clean.nii", false)] {
        for (flag, out) in [("on", "on.json"), ("off", "off.json")] {
            ok(&spinefuse(
                dir.path(),
                &[
                    "evaluate",
                    "--gt",
                    "gt.nii",
                    "--pred",
                    pred,
                    "--postprocess",
                    flag,
                    "--out",
                    out,
                ],
            ));
        }
        let (on, off) = (class9("on.json"), class9("off.json"));
        assert_eq!(on, (1.0, 0.0), "{pred}");
        assert_eq!(on != off, differs, "{pred}: on {on:?} off {off:?}");
    }
}

#[test]
fn evaluate_directory_mode_and_report() {
    let dir = TempDir::new().unwrap();
    for sub in ["gt", "pred"] {
        std::fs::create_dir(dir.path().join(sub)).unwrap();
    }
    for (i, d) in [11usize, 14].iter().enumerate() {
        write_label_volume(&column(*d), dir.path().join(format!("gt/case{i}.nii.gz"))).unwrap();
        write_label_volume(&column(*d), dir.path().join(format!("pred/case{i}.nii.gz"))).unwrap();
    }
    ok(&spinefuse(
        dir.path(),
        &[
            "evaluate", "--gt", "gt", "--pred", "pred", "--mode", "patient", "--out", "a.json",
        ],
    ));
    let a = read(&dir.path().join("a.json"));
    assert_eq!(a["summary"]["volumes"], 2);
    assert_eq!(a["summary"]["mode"], "patient-level");
    ok(&spinefuse(
        dir.path(),
        &["report", "a.json", "a.json", "--out", "r.json"],
    ));
    let r = read(&dir.path().join("r.json"));
    assert_schema("evaluation-summary.schema.json", &r);
    assert_eq!(r["summary"]["volumes"], 4);
    assert_schema(
        "manifest.schema.json",
        &read(&dir.path().join("r.manifest.json")),
    );
}

#[test]
fn evaluate_mismatched_geometry_exits_2() {
    let dir = TempDir::new().unwrap();
    write_label_volume(&column(14), dir.path().join("gt.nii")).unwrap();
    write_label_volume(&column(11), dir.path().join("pred.nii")).unwrap();
    let o = spinefuse(
        dir.path(),
        &[
            "evaluate", "--gt", "gt.nii", "--pred", "pred.nii", "--out", "e.json",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    let msg = error_object(&o)["message"].as_str().unwrap().to_string();
    assert!(
        msg.contains("[14, 6, 6]") && msg.contains("[11, 6, 6]"),
        "{msg}"
    );
}

#[test]
fn bad_configs_exit_3() {
    let dir = TempDir::new().unwrap();
    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"mode": "patient", "colour": 1}"#,
    )
    .unwrap();
    write_label_volume(&column(14), dir.path().join("gt.nii")).unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec![
            "evaluate", "--gt", "gt.nii", "--pred", "gt.nii", "--config", "bad.json", "--out",
            "e.json",
        ],
        vec![
            "evaluate", "--gt", "gt.nii", "--pred", "gt.nii", "--mode", "sideways", "--out",
            "e.json",
        ],
        vec!["train-demo", "--config", "bad.json", "--out", "demo"],
        vec![
            "train-demo",
            "--n-phantoms",
            "4",
            "--n-val",
            "4",
            "--out",
            "demo",
        ],
        vec!["phantom", "--model", "other", "--out", "demo"],
        vec!["no-such-command"],
    ];
    for args in cases {
        let o = spinefuse(dir.path(), &args);
        assert_eq!(o.status.code(), Some(3), "{args:?}: {}", stderr(&o));
        assert_eq!(error_object(&o)["kind"], "config", "{args:?}");
    }
    let o = Command::new(env!("CARGO_BIN_EXE_spinefuse"))
        .current_dir(dir.path())
        .env("SPINEFUSE_THREADS", "zero")
        .args(["report", "x.json"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn help_exits_0() {
    let dir = TempDir::new().unwrap();
    let o = spinefuse(dir.path(), &["--help"]);
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("train-demo"));
}

const TINY: &[&str] = &[
    "--steps",
    "4",
    "--batch-size",
    "2",
    "--n-phantoms",
    "4",
    "--n-val",
    "1",
];

#[test]
fn train_demo_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let mut losses = Vec::new();
    for out in ["a", "b"] {
        let mut args = vec!["train-demo", "--seed", "3", "--out", out];
        args.extend_from_slice(TINY);
        ok(&spinefuse(dir.path(), &args));
        let report = read(&dir.path().join(out).join("report.json"));
        assert_schema("experiment-report.schema.json", &report);
        losses.push(report["runs"][0]["final_loss"].as_f64().unwrap());
        let manifest = read(&dir.path().join(out).join("manifest.json"));
        assert_schema("manifest.schema.json", &manifest);
        assert_eq!(manifest["seeds"], serde_json::json!([3]));
        let log = std::fs::read_to_string(dir.path().join(out).join("train_log_cptm_seed3.jsonl"))
            .unwrap();
        assert_eq!(log.lines().count(), 4);
        for line in log.lines() {
            assert_schema(
                "train-log-line.schema.json",
                &serde_json::from_str(line).unwrap(),
            );
        }
        for f in [
            "model.ckpt",
            "val_image.nii.gz",
            "val_labels.nii.gz",
            "val_prediction.nii.gz",
        ] {
            assert!(dir.path().join(out).join(f).exists(), "{f}");
        }
    }
    assert!(losses[0].is_finite());
    assert_eq!(losses[0].to_bits(), losses[1].to_bits());
}

#[test]
fn phantom_runs_both_models_and_reports() {
    let dir = TempDir::new().unwrap();
    let mut args = vec!["phantom", "--seeds", "0,1", "--out", "ph"];
    args.extend_from_slice(TINY);
    ok(&spinefuse(dir.path(), &args));
    let report = read(&dir.path().join("ph/report.json"));
    assert_schema("experiment-report.schema.json", &report);
    assert_eq!(report["runs"].as_array().unwrap().len(), 4);
    assert!(report["interior_gap_pp"].is_number());
    assert_schema(
        "manifest.schema.json",
        &read(&dir.path().join("ph/manifest.json")),
    );
    let o = spinefuse(
        dir.path(),
        &["report", "ph/report.json", "--out", "cmp.json"],
    );
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("interior gap"));
    assert_schema(
        "experiment-report.schema.json",
        &read(&dir.path().join("cmp.json")),
    );
}
