use serde::{Deserialize, Serialize};

use super::{Scale, ANCHORS_PER_SCALE};
use crate::error::{Error, Result};

const NUM_ANCHORS: usize = 3 * ANCHORS_PER_SCALE;

/// Nine normalized `(w, h)` anchor shapes, ascending by area.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchors(pub Vec<[f64; 2]>);

impl Anchors {
    pub fn get(&self, scale: Scale, anchor: usize) -> [f64; 2] {
        self.0[scale.index() * ANCHORS_PER_SCALE + anchor]
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.len() != NUM_ANCHORS {
            return Err(Error::Config(format!(
                "expected {NUM_ANCHORS} anchors, got {}",
                self.0.len()
            )));
        }
        if self.0.iter().any(|&[w, h]| !(w > 0.0 && w <= 1.0 && h > 0.0 && h <= 1.0)) {
            return Err(Error::Config("anchor sizes must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// IoU of two boxes sharing a centre.
pub fn shape_iou(a: [f64; 2], b: [f64; 2]) -> f64 {
    let inter = a[0].min(b[0]) * a[1].min(b[1]);
    inter / (a[0] * a[1] + b[0] * b[1] - inter)
}

/// k-means over box shapes with `1 - IoU` distance.
///
/// Centroids start at evenly spaced area quantiles, so the result is a pure
/// function of the input multiset order.
pub fn derive_anchors(shapes: &[[f64; 2]]) -> Result<Anchors> {
    if shapes.len() < NUM_ANCHORS {
        return Err(Error::Data(format!(
            "need at least {NUM_ANCHORS} boxes to derive anchors, got {}",
            shapes.len()
        )));
    }
    let mut sorted = shapes.to_vec();
    sorted.sort_by(|a, b| (a[0] * a[1]).total_cmp(&(b[0] * b[1])));
    let n = sorted.len();
    let mut centroids: Vec<[f64; 2]> = (0..NUM_ANCHORS)
        .map(|i| sorted[(2 * i + 1) * n / (2 * NUM_ANCHORS)])
        .collect();

    let mut assignment = vec![usize::MAX; n];
    for _ in 0..300 {
        let mut changed = false;
        for (slot, s) in assignment.iter_mut().zip(&sorted) {
            let best = (0..NUM_ANCHORS)
                .max_by(|&i, &j| shape_iou(*s, centroids[i]).total_cmp(&shape_iou(*s, centroids[j])).then(j.cmp(&i)))
                .unwrap();
            if *slot != best {
                *slot = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (k, c) in centroids.iter_mut().enumerate() {
            let members: Vec<&[f64; 2]> = sorted
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == k)
                .map(|(s, _)| s)
                .collect();
            if !members.is_empty() {
                let m = members.len() as f64;
                *c = [
                    members.iter().map(|s| s[0]).sum::<f64>() / m,
                    members.iter().map(|s| s[1]).sum::<f64>() / m,
                ];
            }
        }
    }
    centroids.sort_by(|a, b| (a[0] * a[1]).total_cmp(&(b[0] * b[1])));
    Ok(Anchors(centroids))
}
