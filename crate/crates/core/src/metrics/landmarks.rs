use serde::{Deserialize, Serialize};

use crate::labels::NUM_CLASSES;
use crate::volume::LabelVolume;

/// Default identification radius in mm.
pub const DEFAULT_THRESHOLD_MM: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub class_id: u16,
    /// `(z, y, x)` in mm.
    pub position: [f64; 3],
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Centre of mass of each listed class that is present, in class order.
pub fn centroids(volume: &LabelVolume, classes: &[u16]) -> Vec<Landmark> {
    let mut sums = vec![[0.0f64; 3]; NUM_CLASSES];
    let mut counts = vec![0usize; NUM_CLASSES];
    for ((z, y, x), &c) in volume.voxels.indexed_iter() {
        if (c as usize) < NUM_CLASSES {
            let p = volume.position([z, y, x]);
            let s = &mut sums[c as usize];
            s[0] += p[0];
            s[1] += p[1];
            s[2] += p[2];
            counts[c as usize] += 1;
        }
    }
    let mut classes = classes.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
        .into_iter()
        .filter(|&c| (c as usize) < NUM_CLASSES && counts[c as usize] > 0)
        .map(|c| {
            let n = counts[c as usize] as f64;
            let s = sums[c as usize];
            Landmark {
                class_id: c,
                position: [s[0] / n, s[1] / n, s[2] / n],
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub identified: usize,
    pub total: usize,
    /// Sum of distances over identified landmarks, kept for pooling.
    pub distance_sum: f64,
}

impl Identification {
    /// Percentage; `None` without ground-truth landmarks.
    pub fn id_rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.identified as f64 / self.total as f64 * 100.0)
    }

    /// Mean distance over identified landmarks; `None` when none were.
    pub fn d_mean(&self) -> Option<f64> {
        (self.identified > 0).then(|| self.distance_sum / self.identified as f64)
    }

    pub fn merge(&self, other: &Identification) -> Identification {
        Identification {
            identified: self.identified + other.identified,
            total: self.total + other.total,
            distance_sum: self.distance_sum + other.distance_sum,
        }
    }
}

/// A ground-truth landmark is identified when the predicted landmark of its
/// class lies within `threshold_mm` and no predicted landmark of another
/// class is strictly closer.
pub fn identification(gt: &[Landmark], pred: &[Landmark], threshold_mm: f64) -> Identification {
    let mut result = Identification {
        identified: 0,
        total: gt.len(),
        distance_sum: 0.0,
    };
    for g in gt {
        let Some(same) = pred
            .iter()
            .filter(|p| p.class_id == g.class_id)
            .map(|p| distance(&g.position, &p.position))
            .min_by(f64::total_cmp)
        else {
            continue;
        };
        if same > threshold_mm {
            continue;
        }
        let beaten = pred
            .iter()
            .any(|p| p.class_id != g.class_id && distance(&g.position, &p.position) < same);
        if !beaten {
            result.identified += 1;
            result.distance_sum += same;
        }
    }
    result
}
