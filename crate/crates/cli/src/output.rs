use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
        }
        _ => Ok(()),
    }
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json_value(path: &Path) -> CliResult<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// `out` without a `.json`, `.csv`, `.nii` or `.nii.gz` extension.
pub fn stem(out: &Path) -> PathBuf {
    let s = out.to_string_lossy();
    for ext in [".nii.gz", ".nii", ".json", ".csv"] {
        if let Some(base) = s.strip_suffix(ext) {
            if !base.is_empty() {
                return PathBuf::from(base);
            }
        }
    }
    out.to_path_buf()
}

/// Side file next to `out`, e.g. `fused.nii.gz` → `fused.manifest.json`.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = stem(out).into_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn is_nifti(path: &Path) -> bool {
    let s = path.to_string_lossy();
    s.ends_with(".nii") || s.ends_with(".nii.gz")
}
