use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptation::{DanKind, DanVariant, GrlConfig, TrainMode};
use crate::data::check_batch_size;
use crate::detector::{DetectorConfig, Scale};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Linear ramp from 0 over this many iterations.
    pub warmup_iterations: usize,
    /// Fractions of the run after which the rate drops tenfold.
    pub decay_at: Vec<f64>,
    /// Gradients are rescaled when their global norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            warmup_iterations: 100,
            decay_at: vec![0.8],
            clip_norm: Some(10.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub confidence_threshold: f64,
    pub nms_iou: f64,
    /// Classes with fewer ground-truth boxes are excluded from the mean.
    pub min_gt: usize,
    /// Images per forward pass.
    pub chunk: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            confidence_threshold: 0.01,
            nms_iou: 0.5,
            min_gt: 20,
            chunk: 50,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(unit(self.iou_threshold) && unit(self.confidence_threshold) && unit(self.nms_iou)) {
            return Err(Error::Config("evaluation thresholds must lie in (0, 1)".into()));
        }
        if self.chunk == 0 {
            return Err(Error::Config("evaluation chunk must be positive".into()));
        }
        Ok(())
    }
}

/// Every knob of a training run. Serialized into checkpoints and logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: TrainMode,
    pub lambda: f64,
    /// Images per iteration; half source, half target when adapting.
    pub batch_size: usize,
    pub iterations: usize,
    pub dan_variant: DanKind,
    /// Scales carrying a DAN. Empty disables adaptation.
    pub active_scales: Vec<Scale>,
    pub detector: DetectorConfig,
    pub optimizer: OptimizerConfig,
    pub eval: EvalConfig,
    /// Weight initialization seed.
    pub seed: u64,
    /// Stream shuffling seed.
    pub data_seed: u64,
    pub shuffle: bool,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Target-validation mAP every this many iterations; 0 disables.
    pub eval_every: usize,
    /// Checkpoint every this many iterations; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Adapt,
            lambda: GrlConfig::default().lambda,
            batch_size: 16,
            iterations: 4000,
            dan_variant: DanKind::Integrated,
            active_scales: Scale::ALL.to_vec(),
            detector: DetectorConfig::default(),
            optimizer: OptimizerConfig::default(),
            eval: EvalConfig::default(),
            seed: 0,
            data_seed: 0,
            shuffle: true,
            data_dir: None,
            out_dir: None,
            eval_every: 0,
            checkpoint_every: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        GrlConfig::new(self.lambda)?;
        check_batch_size(self.batch_size)?;
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && (0.0..1.0).contains(&o.momentum) && o.weight_decay >= 0.0) {
            return Err(Error::Config("optimizer needs lr > 0, momentum in [0, 1), decay >= 0".into()));
        }
        if o.decay_at.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config("decay_at fractions must lie in [0, 1]".into()));
        }
        self.eval.validate()?;
        self.detector.validate()?;
        if let Some(v) = self.dan_variant()? {
            crate::adaptation::DanArchitecture::new(v.kind(), self.detector.base_channels())?;
        }
        Ok(())
    }

    /// The DAN this run trains, if any.
    pub fn dan_variant(&self) -> Result<Option<DanVariant>> {
        if self.mode != TrainMode::Adapt || self.active_scales.is_empty() {
            return Ok(None);
        }
        DanVariant::new(self.dan_variant, self.active_scales.iter().copied()).map(Some)
    }

    pub fn grl(&self) -> GrlConfig {
        GrlConfig { lambda: self.lambda }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad run config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("serializable")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config snapshot: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_protocol() {
        let c = RunConfig::default();
        assert_eq!(c.lambda, 0.1);
        assert_eq!(c.batch_size % 2, 0);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.active_scales = vec![Scale::F3];
        c.dan_variant = DanKind::Baseline;
        c.data_dir = Some("data".into());
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = RunConfig::from_toml("lambda = 0.2\nbatch_size = 8\n").unwrap();
        assert_eq!((c.lambda, c.batch_size, c.iterations), (0.2, 8, 4000));
    }

    #[test]
    fn invalid_settings_are_config_errors() {
        let bad = [
            RunConfig {
                batch_size: 7,
                ..RunConfig::default()
            },
            RunConfig {
                lambda: -1.0,
                ..RunConfig::default()
            },
            RunConfig {
                dan_variant: DanKind::Uc,
                active_scales: vec![Scale::F1],
                ..RunConfig::default()
            },
        ];
        for c in bad {
            assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        }
        assert!(RunConfig::from_toml("lambda = \"x\"").is_err());
    }

    #[test]
    fn no_dan_without_active_scales_or_outside_adapt_mode() {
        let c = RunConfig {
            active_scales: vec![],
            ..RunConfig::default()
        };
        assert!(c.dan_variant().unwrap().is_none());
        let c = RunConfig {
            mode: TrainMode::Oracle,
            ..RunConfig::default()
        };
        assert!(c.dan_variant().unwrap().is_none());
    }
}
