use super::EvalConfig;
use crate::data::Split;
use crate::detector::{Detection, Detector};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalResult, TruthBox};
use crate::params::ParamStore;

/// Post-NMS detections for every image of `split`, in order.
pub fn detect_split(detector: &Detector, params: &ParamStore, split: &Split, cfg: &EvalConfig) -> Result<Vec<Vec<Detection>>> {
    cfg.validate()?;
    if split.is_empty() {
        return Err(Error::Data(format!("split `{}` is empty", split.name)));
    }
    let indices: Vec<usize> = (0..split.len()).collect();
    let mut dets = Vec::with_capacity(split.len());
    for chunk in indices.chunks(cfg.chunk) {
        let images = split.batch(chunk);
        dets.extend(detector.detect(&images, params, cfg.confidence_threshold, cfg.nms_iou)?);
    }
    Ok(dets)
}

pub fn evaluate_split(detector: &Detector, params: &ParamStore, split: &Split, cfg: &EvalConfig) -> Result<EvalResult> {
    let dets = detect_split(detector, params, split, cfg)?;
    let size = detector.config().image_size as f64;
    let gts: Vec<Vec<TruthBox>> = split
        .boxes
        .iter()
        .map(|bs| bs.iter().map(|b| TruthBox::from_normalized(b, size)).collect())
        .collect();
    Ok(evaluate(
        &dets,
        &gts,
        detector.config().num_classes,
        cfg.iou_threshold,
        cfg.min_gt,
    ))
}
