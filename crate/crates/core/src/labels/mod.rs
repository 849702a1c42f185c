//! Universal anatomy taxonomy, per-dataset label remapping and pseudo-label
//! fusion.
//!
//! Every dataset annotates only part of the 33 anatomies. Its local ids are
//! first remapped into the universal space, then merged with pseudo labels:
//! ground truth is authoritative for every class the dataset annotates,
//! pseudo labels fill only the classes it never annotated.

mod taxonomy;

pub use taxonomy::{AnatomyEntry, AnatomyGroup, AnatomyTaxonomy, TAXONOMY_V1_JSON};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::LabelVolume;

/// Highest universal class id.
pub const MAX_CLASS: u16 = 33;
pub const NUM_CLASSES: usize = MAX_CLASS as usize + 1;
pub const VERTEBRA_FIRST: u16 = 9;
pub const VERTEBRA_LAST: u16 = 33;

pub fn is_vertebra(class: u16) -> bool {
    (VERTEBRA_FIRST..=VERTEBRA_LAST).contains(&class)
}

/// Set of universal classes a dataset annotates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassSet(u64);

impl ClassSet {
    pub fn empty() -> Self {
        Self(0)
    }

    /// Fails on 0 or ids above [`MAX_CLASS`].
    pub fn from_ids(ids: impl IntoIterator<Item = u16>) -> Result<Self> {
        let mut s = Self::empty();
        for id in ids {
            if id == 0 || id > MAX_CLASS {
                return Err(Error::Data(format!(
                    "annotated set may only hold classes 1..={MAX_CLASS}, got {id}"
                )));
            }
            s.0 |= 1 << id;
        }
        Ok(s)
    }

    pub fn contains(&self, id: u16) -> bool {
        id <= MAX_CLASS && self.0 & (1 << id) != 0
    }

    pub fn ids(&self) -> Vec<u16> {
        (1..=MAX_CLASS).filter(|&c| self.contains(c)).collect()
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelMapFile {
    dataset_id: String,
    remap: BTreeMap<String, u16>,
    annotated: Vec<u16>,
}

/// Remap table from dataset-local ids to universal ids, plus the annotated set.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetLabelMap {
    dataset_id: String,
    remap: BTreeMap<u16, u16>,
    annotated: ClassSet,
}

impl DatasetLabelMap {
    /// Checks that the remap is injective on nonzero labels and that its image
    /// lies in the annotated set plus background. Local 0 always maps to 0.
    pub fn new(
        dataset_id: impl Into<String>,
        remap: BTreeMap<u16, u16>,
        annotated: ClassSet,
    ) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for (&local, &uni) in &remap {
            if local == 0 && uni != 0 {
                return Err(Error::Data(format!(
                    "local background must map to 0, not {uni}"
                )));
            }
            if uni != 0 && !annotated.contains(uni) {
                return Err(Error::Data(format!(
                    "local label {local} maps to {uni}, which is not in the annotated set"
                )));
            }
            if uni != 0 {
                if let Some(prev) = seen.insert(uni, local) {
                    return Err(Error::Data(format!(
                        "local labels {prev} and {local} both map to universal class {uni}"
                    )));
                }
            }
        }
        Ok(Self {
            dataset_id: dataset_id.into(),
            remap,
            annotated,
        })
    }

    /// Maps already-universal labels onto themselves.
    pub fn identity(dataset_id: impl Into<String>, annotated: ClassSet) -> Self {
        let remap = annotated.ids().into_iter().map(|c| (c, c)).collect();
        Self {
            dataset_id: dataset_id.into(),
            remap,
            annotated,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: LabelMapFile = serde_json::from_str(text)?;
        let mut remap = BTreeMap::new();
        for (k, v) in file.remap {
            let local: u16 = k
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("remap key {k:?} is not a label id")))?;
            remap.insert(local, v);
        }
        Self::new(file.dataset_id, remap, ClassSet::from_ids(file.annotated)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = LabelMapFile {
            dataset_id: self.dataset_id.clone(),
            remap: self
                .remap
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            annotated: self.annotated.ids(),
        };
        serde_json::to_string_pretty(&file).expect("label map serialises")
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn annotated(&self) -> ClassSet {
        self.annotated
    }

    pub fn get(&self, local: u16) -> Option<u16> {
        if local == 0 {
            Some(0)
        } else {
            self.remap.get(&local).copied()
        }
    }
}

/// Voxelwise substitution of local ids by universal ids.
pub fn remap_to_universal(raw: &LabelVolume, map: &DatasetLabelMap) -> Result<LabelVolume> {
    let mut lut = vec![None; u16::MAX as usize + 1];
    lut[0] = Some(0);
    for (&k, &v) in &map.remap {
        lut[k as usize] = Some(v);
    }
    let mut missing: BTreeMap<u16, usize> = BTreeMap::new();
    let voxels = raw.voxels.mapv(|v| match lut[v as usize] {
        Some(u) => u,
        None => {
            *missing.entry(v).or_default() += 1;
            0
        }
    });
    if let Some((label, count)) = missing.iter().next() {
        let others = missing.len() - 1;
        let tail = if others > 0 {
            format!(" ({others} other unmapped labels)")
        } else {
            String::new()
        };
        return Err(Error::Data(format!(
            "dataset {}: label {label} has no remap entry ({count} voxels){tail}",
            map.dataset_id
        )));
    }
    Ok(LabelVolume {
        voxels,
        spacing: raw.spacing,
        origin: raw.origin,
    })
}

/// The fusion rule for a single voxel.
#[inline]
pub fn fuse_voxel(pseudo: u16, gt: u16, annotated: ClassSet) -> u16 {
    if gt != 0 && annotated.contains(gt) {
        gt
    } else if !annotated.contains(pseudo) {
        pseudo
    } else {
        0
    }
}

/// Merges pseudo labels with partial ground truth.
pub fn fuse_pseudo_with_gt(
    pseudo: &LabelVolume,
    gt: &LabelVolume,
    annotated: ClassSet,
) -> Result<LabelVolume> {
    pseudo.check_same_geometry(gt)?;
    let mut stray: BTreeMap<u16, usize> = BTreeMap::new();
    for &g in gt.voxels.iter() {
        if g != 0 && !annotated.contains(g) {
            *stray.entry(g).or_default() += 1;
        }
    }
    if let Some((label, count)) = stray.iter().next() {
        return Err(Error::Data(format!(
            "ground truth carries class {label} ({count} voxels) outside the annotated set {:?}",
            annotated.ids()
        )));
    }
    let mut out = pseudo.zeros_like();
    Zip::from(&mut out.voxels)
        .and(&pseudo.voxels)
        .and(&gt.voxels)
        .for_each(|o, &p, &g| *o = fuse_voxel(p, g, annotated));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStat {
    pub id: u16,
    pub voxels: usize,
    pub volume_mm3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedReport {
    /// Voxels carrying ids above [`MAX_CLASS`]. Zero for a valid volume.
    pub out_of_range: usize,
    /// Every id present, including out-of-range ones.
    pub histogram: BTreeMap<u16, usize>,
    /// In-range classes only.
    pub classes: Vec<ClassStat>,
}

impl FusedReport {
    pub fn is_valid(&self) -> bool {
        self.out_of_range == 0
    }
}

pub fn validate_fused(volume: &LabelVolume) -> FusedReport {
    let mut histogram = BTreeMap::new();
    for &v in volume.voxels.iter() {
        *histogram.entry(v).or_insert(0usize) += 1;
    }
    let vox = volume.voxel_volume_mm3();
    let out_of_range = histogram.range(MAX_CLASS + 1..).map(|(_, n)| *n).sum();
    let classes = histogram
        .range(..=MAX_CLASS)
        .map(|(&id, &n)| ClassStat {
            id,
            voxels: n,
            volume_mm3: n as f64 * vox,
        })
        .collect();
    FusedReport {
        out_of_range,
        histogram,
        classes,
    }
}

/// Classes present in `volume`, background excluded.
pub fn present_classes(volume: &LabelVolume) -> BTreeSet<u16> {
    volume.voxels.iter().copied().filter(|&v| v != 0).collect()
}

#[cfg(test)]
mod tests;
