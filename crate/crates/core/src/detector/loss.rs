//! Composite detection loss.
//!
//! With `P` positive anchor slots, `K` classes and per-scale balance `b_s`:
//!
//! ```text
//! L_det = w_obj * sum_s b_s * mean_{slots of s} BCE(obj, 1[slot is positive])
//!       + w_box * (1/P) * sum_{pos} (1 - IoU(pred, gt))
//!       + w_cls * (1/(P K)) * sum_{pos} sum_k BCE(cls_k, 1[k == class])
//! ```
//!
//! IoU here is `inter / (union + 1e-12)`. The box and class terms are
//! absent when `P = 0`. Predicted boxes decode
//! as `cx = (gx + 2 sig(tx) - 0.5) / G` and `w = a_w (2 sig(tw))^2`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{shape_iou, Anchors, DetectorConfig, GroundTruthBox, HeadOutputs, Scale, ANCHORS_PER_SCALE};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub box_weight: f64,
    pub obj_weight: f64,
    pub cls_weight: f64,
    pub obj_balance: [f64; 3],
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            box_weight: 1.0,
            obj_weight: 4.0,
            cls_weight: 0.5,
            obj_balance: [1.0, 1.0, 1.0],
        }
    }
}

/// An anchor slot responsible for one ground-truth box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Positive {
    pub image: usize,
    pub scale: Scale,
    pub anchor: usize,
    pub gy: usize,
    pub gx: usize,
    pub target: GroundTruthBox,
}

/// Each box goes to its best-shaped anchor over all scales, in the cell
/// holding its centre. When two boxes claim the same slot the first wins.
pub fn assign_targets(cfg: &DetectorConfig, anchors: &Anchors, targets: &[Vec<GroundTruthBox>]) -> Vec<Positive> {
    let mut taken = HashSet::new();
    let mut out = Vec::new();
    for (image, boxes) in targets.iter().enumerate() {
        for gt in boxes {
            let (best, _) = Scale::ALL
                .iter()
                .flat_map(|&s| (0..ANCHORS_PER_SCALE).map(move |a| (s, a)))
                .map(|(s, a)| ((s, a), shape_iou([gt.w, gt.h], anchors.get(s, a))))
                .fold(((Scale::F1, 0), f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            let (scale, anchor) = best;
            let grid = cfg.grid(scale);
            let cell = |v: f64| ((v * grid as f64).floor() as usize).min(grid - 1);
            let (gx, gy) = (cell(gt.cx), cell(gt.cy));
            if taken.insert((image, scale, anchor, gy, gx)) {
                out.push(Positive {
                    image,
                    scale,
                    anchor,
                    gy,
                    gx,
                    target: *gt,
                });
            }
        }
    }
    out
}

/// Flat index into a `[N, A * F, G, G]` head tensor.
pub(crate) fn head_index(fields: usize, grid: usize, image: usize, anchor: usize, field: usize, gy: usize, gx: usize) -> usize {
    let channels = ANCHORS_PER_SCALE * fields;
    ((image * channels + anchor * fields + field) * grid + gy) * grid + gx
}

#[derive(Clone, Debug)]
pub struct DetectionLoss {
    pub total: Var,
    pub box_loss: f64,
    pub obj_loss: f64,
    pub cls_loss: f64,
    pub num_positives: usize,
}

fn constant(g: &mut Graph, values: Vec<f64>) -> Var {
    let n = values.len();
    g.constant(Tensor::from_vec(&[n], values).unwrap())
}

pub(super) fn detection_loss(
    cfg: &DetectorConfig,
    anchors: &Anchors,
    g: &mut Graph,
    head: &HeadOutputs<Var>,
    targets: &[Vec<GroundTruthBox>],
) -> Result<DetectionLoss> {
    let n = g.value(head.f1).shape()[0];
    if targets.len() != n {
        return Err(Error::Validation(format!(
            "{} target lists for a batch of {n}",
            targets.len()
        )));
    }
    for gt in targets.iter().flatten() {
        gt.validate(Some(cfg.num_classes))?;
    }
    let k = cfg.num_classes;
    let fields = 5 + k;
    let w = &cfg.loss;
    let positives = assign_targets(cfg, anchors, targets);
    let p = positives.len();

    let mut obj_terms = Vec::new();
    for scale in Scale::ALL {
        let grid = cfg.grid(scale);
        let slots = n * ANCHORS_PER_SCALE * grid * grid;
        let mut idx = Vec::with_capacity(slots);
        for b in 0..n {
            for a in 0..ANCHORS_PER_SCALE {
                for gy in 0..grid {
                    for gx in 0..grid {
                        idx.push(head_index(fields, grid, b, a, 4, gy, gx));
                    }
                }
            }
        }
        let mut t = vec![0.0; slots];
        for pos in positives.iter().filter(|q| q.scale == scale) {
            t[((pos.image * ANCHORS_PER_SCALE + pos.anchor) * grid + pos.gy) * grid + pos.gx] = 1.0;
        }
        let logits = g.gather(*head.get(scale), idx);
        let bce = g.bce_with_logits(logits, Tensor::from_vec(&[slots], t).unwrap());
        let mean = g.mean(bce);
        obj_terms.push(g.scale(mean, w.obj_weight * w.obj_balance[scale.index()]));
    }
    let mut total = obj_terms[0];
    for &t in &obj_terms[1..] {
        total = g.add(total, t);
    }
    let obj_loss = g.value(total).item();

    let (mut box_loss, mut cls_loss) = (0.0, 0.0);
    if p > 0 {
        let mut iou_sum: Option<Var> = None;
        let mut cls_sum: Option<Var> = None;
        for scale in Scale::ALL {
            let pos: Vec<&Positive> = positives.iter().filter(|q| q.scale == scale).collect();
            if pos.is_empty() {
                continue;
            }
            let grid = cfg.grid(scale);
            let gf = grid as f64;
            let src = *head.get(scale);
            let field = |g: &mut Graph, f: usize| {
                let idx = pos.iter().map(|q| head_index(fields, grid, q.image, q.anchor, f, q.gy, q.gx)).collect();
                let raw = g.gather(src, idx);
                g.sigmoid(raw)
            };
            let (sx, sy, sw, sh) = (field(g, 0), field(g, 1), field(g, 2), field(g, 3));

            let cx_off = constant(g, pos.iter().map(|q| (q.gx as f64 - 0.5) / gf).collect());
            let cy_off = constant(g, pos.iter().map(|q| (q.gy as f64 - 0.5) / gf).collect());
            let aw4 = constant(g, pos.iter().map(|q| 4.0 * anchors.get(scale, q.anchor)[0]).collect());
            let ah4 = constant(g, pos.iter().map(|q| 4.0 * anchors.get(scale, q.anchor)[1]).collect());

            let sx2 = g.scale(sx, 2.0 / gf);
            let px = g.add(sx2, cx_off);
            let sy2 = g.scale(sy, 2.0 / gf);
            let py = g.add(sy2, cy_off);
            let sw_sq = g.mul(sw, sw);
            let pw = g.mul(sw_sq, aw4);
            let sh_sq = g.mul(sh, sh);
            let ph = g.mul(sh_sq, ah4);

            let half_w = g.scale(pw, 0.5);
            let half_h = g.scale(ph, 0.5);
            let px1 = g.sub(px, half_w);
            let px2 = g.add(px, half_w);
            let py1 = g.sub(py, half_h);
            let py2 = g.add(py, half_h);

            let tx1 = constant(g, pos.iter().map(|q| q.target.cx - q.target.w / 2.0).collect());
            let tx2 = constant(g, pos.iter().map(|q| q.target.cx + q.target.w / 2.0).collect());
            let ty1 = constant(g, pos.iter().map(|q| q.target.cy - q.target.h / 2.0).collect());
            let ty2 = constant(g, pos.iter().map(|q| q.target.cy + q.target.h / 2.0).collect());
            let t_area = constant(g, pos.iter().map(|q| q.target.w * q.target.h).collect());

            let ix2 = g.minimum(px2, tx2);
            let ix1 = g.maximum(px1, tx1);
            let iw_raw = g.sub(ix2, ix1);
            let iw = g.relu(iw_raw);
            let iy2 = g.minimum(py2, ty2);
            let iy1 = g.maximum(py1, ty1);
            let ih_raw = g.sub(iy2, iy1);
            let ih = g.relu(ih_raw);
            let inter = g.mul(iw, ih);
            let p_area = g.mul(pw, ph);
            let areas = g.add(p_area, t_area);
            let union_raw = g.sub(areas, inter);
            let union = g.add_scalar(union_raw, 1e-12);
            let iou = g.div(inter, union);
            let s = g.sum(iou);
            iou_sum = Some(match iou_sum {
                Some(acc) => g.add(acc, s),
                None => s,
            });

            let mut idx = Vec::with_capacity(pos.len() * k);
            let mut onehot = Vec::with_capacity(pos.len() * k);
            for q in &pos {
                for c in 0..k {
                    idx.push(head_index(fields, grid, q.image, q.anchor, 5 + c, q.gy, q.gx));
                    onehot.push(if c == q.target.class_id { 1.0 } else { 0.0 });
                }
            }
            let logits = g.gather(src, idx);
            let bce = g.bce_with_logits(logits, Tensor::from_vec(&[onehot.len()], onehot).unwrap());
            let s = g.sum(bce);
            cls_sum = Some(match cls_sum {
                Some(acc) => g.add(acc, s),
                None => s,
            });
        }
        // w_box * (1 - mean IoU)
        let neg = g.scale(iou_sum.unwrap(), -w.box_weight / p as f64);
        let box_term = g.add_scalar(neg, w.box_weight);
        let cls_term = g.scale(cls_sum.unwrap(), w.cls_weight / (p * k) as f64);
        box_loss = g.value(box_term).item();
        cls_loss = g.value(cls_term).item();
        total = g.add(total, box_term);
        total = g.add(total, cls_term);
    }

    Ok(DetectionLoss {
        total,
        box_loss,
        obj_loss,
        cls_loss,
        num_positives: p,
    })
}
