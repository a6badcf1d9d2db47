//! Detection metrics: IoU, greedy matching at an IoU threshold, per-class
//! average precision with all-point interpolation, and mAP.

mod table;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use table::{render_text_table, Table};

use crate::detector::{Detection, GroundTruthBox};

/// IoU of two corner boxes `[x1, y1, x2, y2]`; 0 if either is degenerate.
pub fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let area = |r: [f64; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let (aa, ab) = (area(a), area(b));
    if aa <= 0.0 || ab <= 0.0 {
        return 0.0;
    }
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    inter / (aa + ab - inter)
}

/// Ground-truth box in pixel corners.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthBox {
    pub class_id: usize,
    pub corners: [f64; 4],
}

impl TruthBox {
    pub fn from_normalized(gt: &GroundTruthBox, image_size: f64) -> Self {
        Self {
            class_id: gt.class_id,
            corners: gt.to_corners(image_size),
        }
    }
}

/// Detections of `class_id` across all images as `(image, index)`, in
/// descending confidence; ties keep image-then-input order.
fn ranked(dets: &[Vec<Detection>], class_id: usize) -> Vec<(usize, usize)> {
    let mut order: Vec<(usize, usize)> = dets
        .iter()
        .enumerate()
        .flat_map(|(i, ds)| ds.iter().enumerate().filter(|(_, d)| d.class_id == class_id).map(move |(j, _)| (i, j)))
        .collect();
    order.sort_by(|&(i1, j1), &(i2, j2)| dets[i2][j2].confidence.total_cmp(&dets[i1][j1].confidence));
    order
}

/// TP/FP flag for every detection, aligned with `dets`.
///
/// Per class, detections are visited in descending confidence. Each takes
/// the highest-IoU same-class ground truth in its image that is still
/// unmatched; it is a true positive iff that IoU reaches `iou_threshold`.
pub fn match_detections(dets: &[Vec<Detection>], gts: &[Vec<TruthBox>], iou_threshold: f64) -> Vec<Vec<bool>> {
    assert_eq!(dets.len(), gts.len(), "detections and ground truth cover different image counts");
    let mut flags: Vec<Vec<bool>> = dets.iter().map(|d| vec![false; d.len()]).collect();
    let mut classes: Vec<usize> = dets.iter().flatten().map(|d| d.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    for class_id in classes {
        let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        for (i, j) in ranked(dets, class_id) {
            let det = &dets[i][j];
            let best = gts[i]
                .iter()
                .enumerate()
                .filter(|(k, g)| g.class_id == class_id && !used[i][*k])
                .map(|(k, g)| (k, iou(det.corners(), g.corners)))
                .fold(None::<(usize, f64)>, |best, x| match best {
                    Some(b) if b.1 >= x.1 => Some(b),
                    _ => Some(x),
                });
            if let Some((k, overlap)) = best {
                if overlap >= iou_threshold {
                    used[i][k] = true;
                    flags[i][j] = true;
                }
            }
        }
    }
    flags
}

/// All-point interpolated AP from TP flags, or `None` when `num_gt` is 0.
///
/// Flags are ranked by descending confidence (stable for ties). Precision
/// is replaced by its running maximum from the right, and AP is the area
/// under that envelope over recall.
pub fn average_precision(flags: &[bool], confidences: &[f64], num_gt: usize) -> Option<f64> {
    assert_eq!(flags.len(), confidences.len());
    if num_gt == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..flags.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]));
    let mut precision = Vec::with_capacity(order.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &i in &order {
        if flags[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    // recall moves by exactly 1/num_gt at every true positive
    let area: f64 = order
        .iter()
        .zip(&precision)
        .filter(|(&i, _)| flags[i])
        .map(|(_, &p)| p)
        .sum();
    // + 0.0 folds a -0.0 area into +0.0
    Some((area / num_gt as f64).clamp(0.0, 1.0) + 0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// AP of every evaluated class.
    pub per_class_ap: BTreeMap<usize, f64>,
    /// Mean of `per_class_ap`; 0 when no class qualifies.
    pub map_score: f64,
    /// Ground-truth totals for every class.
    pub counts: BTreeMap<usize, usize>,
    /// Classes left out of the mean for having fewer than the minimum
    /// number of ground-truth boxes.
    pub excluded: Vec<usize>,
}

/// mAP over `num_classes` classes; classes with fewer than `min_gt`
/// ground-truth boxes (and always those with none) are excluded.
pub fn evaluate(
    dets: &[Vec<Detection>],
    gts: &[Vec<TruthBox>],
    num_classes: usize,
    iou_threshold: f64,
    min_gt: usize,
) -> EvalResult {
    let flags = match_detections(dets, gts, iou_threshold);
    let mut per_class_ap = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut excluded = Vec::new();
    for class_id in 0..num_classes {
        let num_gt = gts.iter().flatten().filter(|g| g.class_id == class_id).count();
        counts.insert(class_id, num_gt);
        let order = ranked(dets, class_id);
        let f: Vec<bool> = order.iter().map(|&(i, j)| flags[i][j]).collect();
        let c: Vec<f64> = order.iter().map(|&(i, j)| dets[i][j].confidence).collect();
        match average_precision(&f, &c, num_gt) {
            Some(ap) if num_gt >= min_gt.max(1) => {
                per_class_ap.insert(class_id, ap);
            }
            _ => excluded.push(class_id),
        }
    }
    let map_score = if per_class_ap.is_empty() {
        0.0
    } else {
        per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64
    };
    EvalResult {
        per_class_ap,
        map_score,
        counts,
        excluded,
    }
}

impl EvalResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// Aligned text table with one AP column per class and a final mAP
    /// column, values in percent.
    pub fn to_text_table(&self, class_names: &[String]) -> String {
        let mut table = Table::new(
            class_names
                .iter()
                .cloned()
                .chain(std::iter::once("mAP".to_string()))
                .collect(),
        );
        let mut row: Vec<String> = (0..class_names.len())
            .map(|c| match self.per_class_ap.get(&c) {
                Some(ap) => format!("{:.2}", 100.0 * ap),
                None => "excl".into(),
            })
            .collect();
        row.push(format!("{:.2}", 100.0 * self.map_score));
        table.push(row);
        table.render()
    }
}
