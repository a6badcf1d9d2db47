//! Small models and random inputs for gradient checks, tests and examples.

use rand::Rng;

use crate::adaptation::{Dan, DanKind, DanVariant, GrlConfig, JointModel};
use crate::detector::{Anchors, Detector, DetectorConfig, GroundTruthBox, Scale};
use crate::error::Result;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Anchors spread over small to large boxes, ascending by area.
pub fn default_anchors() -> Anchors {
    Anchors(vec![
        [0.08, 0.10],
        [0.12, 0.09],
        [0.14, 0.15],
        [0.20, 0.16],
        [0.18, 0.26],
        [0.28, 0.24],
        [0.34, 0.36],
        [0.48, 0.40],
        [0.60, 0.62],
    ])
}

/// 32x32 input, base width 4, two classes: a few thousand parameters.
pub fn tiny_detector_config() -> DetectorConfig {
    DetectorConfig {
        image_size: 32,
        channel_multiplier: 4.0 / 256.0,
        num_classes: 2,
        anchors: Some(default_anchors()),
        ..DetectorConfig::default()
    }
}

/// Tiny detector plus a DAN of `kind` over all scales, with fresh weights.
pub fn tiny_joint<R: Rng>(kind: DanKind, lambda: f64, rng: &mut R) -> Result<(JointModel, ParamStore)> {
    let cfg = tiny_detector_config();
    let detector = Detector::new(cfg.clone())?;
    let dan = Dan::new(DanVariant::new(kind, Scale::ALL)?, cfg.base_channels(), cfg.leaky_slope)?;
    let mut params = detector.init_params(rng);
    params.extend(dan.init_params(rng));
    Ok((JointModel::new(detector, Some(dan), GrlConfig::new(lambda)?)?, params))
}

/// Uniform pixels in `[0, 1)`, shape `[n, 3, size, size]`.
pub fn random_images<R: Rng>(rng: &mut R, n: usize, size: usize) -> Tensor {
    let data = (0..n * 3 * size * size).map(|_| rng.random::<f64>()).collect();
    Tensor::from_vec(&[n, 3, size, size], data).unwrap()
}

/// One to three boxes per image, well inside the frame.
pub fn random_targets<R: Rng>(rng: &mut R, n: usize, num_classes: usize) -> Vec<Vec<GroundTruthBox>> {
    (0..n)
        .map(|_| {
            (0..rng.random_range(1..=3))
                .map(|_| GroundTruthBox {
                    class_id: rng.random_range(0..num_classes),
                    cx: rng.random_range(0.25..0.75),
                    cy: rng.random_range(0.25..0.75),
                    w: rng.random_range(0.1..0.5),
                    h: rng.random_range(0.1..0.5),
                })
                .collect()
        })
        .collect()
}
