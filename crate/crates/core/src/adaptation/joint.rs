//! Joint detector + DAN forward and the training objective.
//!
//! The graph root is `L_det + L_dc`. Reversal layers between the taps and
//! the DAN make the backbone receive `dL_det - lambda dL_dc` while the DAN
//! receives `+dL_dc`. The value reported for logging is
//! `L_t = L_det + lambda L_dc`.

use serde::{Deserialize, Serialize};

use super::{Dan, DomainLabelVector, GrlConfig, MapScale};
use crate::autodiff::{Graph, Var};
use crate::detector::{DetectionLoss, Detector, FeaturePyramid, GroundTruthBox};
use crate::error::{Error, Result};
use crate::params::Bound;

/// `L_det + lambda L_dc`.
pub fn total_backbone_objective(l_det: f64, l_dc: f64, cfg: &GrlConfig) -> f64 {
    l_det + cfg.lambda * l_dc
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Detection loss on the labeled source half, domain loss on all images.
    Adapt,
    /// Detection loss on source images only; no DAN.
    SourceOnly,
    /// Detection loss on labeled target images; no DAN.
    Oracle,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Adapt => "adapt",
            TrainMode::SourceOnly => "source-only",
            TrainMode::Oracle => "oracle",
        })
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adapt" => Ok(TrainMode::Adapt),
            "source-only" => Ok(TrainMode::SourceOnly),
            "oracle" => Ok(TrainMode::Oracle),
            other => Err(Error::Config(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Debug)]
pub struct DomainTerms {
    /// Probability maps `[B, 1, h, w]`.
    pub maps: Vec<(MapScale, Var)>,
    pub per_map: Vec<(MapScale, Var)>,
    /// Mean of `per_map`.
    pub loss: Var,
}

#[derive(Debug)]
pub struct JointOutput {
    pub pyramid: FeaturePyramid<Var>,
    pub detection: DetectionLoss,
    pub domain: Option<DomainTerms>,
    /// Node to differentiate for training.
    pub root: Var,
}

impl JointOutput {
    pub fn reported_total(&self, g: &Graph, cfg: &GrlConfig) -> f64 {
        let l_det = g.value(self.detection.total).item();
        match &self.domain {
            Some(d) => total_backbone_objective(l_det, g.value(d.loss).item(), cfg),
            None => l_det,
        }
    }
}

#[derive(Clone, Debug)]
pub struct JointModel {
    pub detector: Detector,
    pub dan: Option<Dan>,
    pub grl: GrlConfig,
}

impl JointModel {
    pub fn new(detector: Detector, dan: Option<Dan>, grl: GrlConfig) -> Result<Self> {
        grl.validate()?;
        Ok(Self { detector, dan, grl })
    }

    /// Forward over a batch whose first `targets.len()` images are labeled.
    /// The DAN, when present, sees every image; the neck and head see only
    /// the labeled ones.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &Bound,
        images: Var,
        targets: &[Vec<GroundTruthBox>],
        labels: Option<&DomainLabelVector>,
    ) -> Result<JointOutput> {
        self.forward_with_coefficient(g, params, images, targets, labels, self.grl.lambda)
    }

    /// [`forward`](Self::forward) with an explicit reversal coefficient,
    /// which may be negative.
    pub fn forward_with_coefficient(
        &self,
        g: &mut Graph,
        params: &Bound,
        images: Var,
        targets: &[Vec<GroundTruthBox>],
        labels: Option<&DomainLabelVector>,
        coefficient: f64,
    ) -> Result<JointOutput> {
        let batch = g.value(images).shape().first().copied().unwrap_or(0);
        let labeled = targets.len();
        if labeled == 0 || labeled > batch {
            return Err(Error::Shape(format!("{labeled} target lists for a batch of {batch}")));
        }
        let pyramid = self.detector.features(g, params, images)?;
        let det_input = if labeled == batch {
            pyramid.clone()
        } else {
            FeaturePyramid {
                f1: g.slice_outer(pyramid.f1, 0, labeled),
                f2: g.slice_outer(pyramid.f2, 0, labeled),
                f3: g.slice_outer(pyramid.f3, 0, labeled),
            }
        };
        let head = self.detector.neck_head(g, params, &det_input);
        let detection = self.detector.detection_loss(g, &head, targets)?;

        let domain = match (&self.dan, labels) {
            (Some(dan), Some(labels)) => {
                if labels.len() != batch {
                    return Err(Error::Shape(format!(
                        "{} domain labels for a batch of {batch}",
                        labels.len()
                    )));
                }
                let logits = dan.forward_logits(g, params, &pyramid, coefficient);
                let mut maps = Vec::with_capacity(logits.len());
                let mut per_map = Vec::with_capacity(logits.len());
                for &(scale, l) in &logits {
                    per_map.push((scale, g.domain_bce_logits(l, labels)?));
                    maps.push((scale, g.sigmoid(l)));
                }
                let parts: Vec<Var> = per_map.iter().map(|p| p.1).collect();
                let sum = parts[1..].iter().fold(parts[0], |acc, &v| g.add(acc, v));
                let loss = g.scale(sum, 1.0 / parts.len() as f64);
                Some(DomainTerms { maps, per_map, loss })
            }
            (Some(_), None) => return Err(Error::Config("a DAN forward needs domain labels".into())),
            (None, _) => None,
        };
        let root = match &domain {
            Some(d) => g.add(detection.total, d.loss),
            None => detection.total,
        };
        Ok(JointOutput {
            pyramid,
            detection,
            domain,
            root,
        })
    }
}
