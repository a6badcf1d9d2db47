use super::loss::head_index;
use super::{Anchors, Detection, DetectorConfig, HeadOutputs, Scale, ANCHORS_PER_SCALE};
use crate::evaluation::iou;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Every candidate of image `image` whose confidence
/// `sig(obj) * max_k sig(cls_k)` reaches `confidence_threshold`.
pub fn decode_image(
    cfg: &DetectorConfig,
    anchors: &Anchors,
    out: &HeadOutputs,
    image: usize,
    confidence_threshold: f64,
) -> Vec<Detection> {
    let fields = 5 + cfg.num_classes;
    let size = cfg.image_size as f64;
    let mut dets = Vec::new();
    for scale in Scale::ALL {
        let t = out.get(scale);
        let grid = t.dims4().2;
        let gf = grid as f64;
        let d = t.data();
        for a in 0..ANCHORS_PER_SCALE {
            let [aw, ah] = anchors.get(scale, a);
            for gy in 0..grid {
                for gx in 0..grid {
                    let at = |f: usize| d[head_index(fields, grid, image, a, f, gy, gx)];
                    let obj = sigmoid(at(4));
                    let (class_id, cls) = (0..cfg.num_classes)
                        .map(|c| (c, sigmoid(at(5 + c))))
                        .fold((0, f64::NEG_INFINITY), |best, x| if x.1 > best.1 { x } else { best });
                    let confidence = obj * cls;
                    if confidence < confidence_threshold {
                        continue;
                    }
                    let cx = (gx as f64 + 2.0 * sigmoid(at(0)) - 0.5) / gf;
                    let cy = (gy as f64 + 2.0 * sigmoid(at(1)) - 0.5) / gf;
                    let w = aw * (2.0 * sigmoid(at(2))).powi(2);
                    let h = ah * (2.0 * sigmoid(at(3))).powi(2);
                    let px = |v: f64| (v * size).clamp(0.0, size);
                    let det = Detection {
                        class_id,
                        confidence,
                        x1: px(cx - w / 2.0),
                        y1: px(cy - h / 2.0),
                        x2: px(cx + w / 2.0),
                        y2: px(cy + h / 2.0),
                    };
                    if det.x2 > det.x1 && det.y2 > det.y1 {
                        dets.push(det);
                    }
                }
            }
        }
    }
    dets
}

/// Greedy per-class non-maximum suppression.
///
/// Candidates are visited in descending confidence (stable for ties); a
/// candidate is kept unless a kept box of the same class overlaps it with
/// IoU above `iou_threshold`.
pub fn nms(mut dets: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut kept: Vec<Detection> = Vec::with_capacity(dets.len());
    for d in dets {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(k.corners(), d.corners()) > iou_threshold);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

pub fn decode_and_nms(
    cfg: &DetectorConfig,
    anchors: &Anchors,
    out: &HeadOutputs,
    image: usize,
    confidence_threshold: f64,
    iou_threshold: f64,
) -> Vec<Detection> {
    nms(decode_image(cfg, anchors, out, image, confidence_threshold), iou_threshold)
}
