use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate_split, EvalRecord, LogRecord, RunConfig, Sgd, TrainingLog};
use crate::adaptation::{Dan, JointModel, TrainMode};
use crate::autodiff::Graph;
use crate::data::{compose_batch, Dataset, DomainStream};
use crate::detector::checkpoint::Checkpoint;
use crate::detector::{derive_anchors, Detector, GroundTruthBox, Scale};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_FILE: &str = "checkpoint.msda";
pub const LOG_FILE: &str = "log.csv";
pub const SUMMARY_FILE: &str = "run.json";

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The run configuration with anchors filled in.
    pub config: RunConfig,
    pub params: ParamStore,
    pub log: TrainingLog,
    /// Largest absolute gradient seen on each inactive DAN branch.
    pub inactive_branch_grad: BTreeMap<Scale, f64>,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.config.to_json(), self.params.clone())
    }

    pub fn detector(&self) -> Result<Detector> {
        Detector::new(self.config.detector.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub iterations_completed: usize,
    pub evals: Vec<EvalRecord>,
    pub inactive_branch_grad: BTreeMap<Scale, f64>,
    pub aborted: Option<String>,
}

/// Validates `config` against `dataset` and fills in anchors from the source
/// training boxes when the config has none.
pub fn prepare_config(config: &RunConfig, dataset: &Dataset) -> Result<RunConfig> {
    config.validate()?;
    let scene = &dataset.config.scene;
    let det = &config.detector;
    if scene.image_size != det.image_size {
        return Err(Error::Data(format!(
            "dataset images are {0}x{0}, detector expects {1}x{1}",
            scene.image_size, det.image_size
        )));
    }
    if scene.num_classes != det.num_classes {
        return Err(Error::Data(format!(
            "dataset has {} classes, detector expects {}",
            scene.num_classes, det.num_classes
        )));
    }
    let mut needed = vec!["source_train"];
    if matches!(config.mode, TrainMode::Adapt | TrainMode::Oracle) {
        needed.push("target_train");
    }
    if config.eval_every > 0 {
        needed.push("target_val");
    }
    for name in needed {
        if dataset.split(name)?.is_empty() {
            return Err(Error::Data(format!("split `{name}` is empty")));
        }
    }
    let mut out = config.clone();
    if out.detector.anchors.is_none() {
        let shapes: Vec<[f64; 2]> = dataset.split("source_train")?.all_boxes().map(|b| [b.w, b.h]).collect();
        out.detector.anchors = Some(derive_anchors(&shapes)?);
    }
    Ok(out)
}

/// Model and initial parameters. Detector weights come from `seed`, DAN
/// weights from a separate stream of the same seed, so adding or removing
/// the DAN leaves the detector initialization untouched.
pub fn build_model(config: &RunConfig) -> Result<(JointModel, ParamStore)> {
    let detector = Detector::new(config.detector.clone())?;
    let mut params = detector.init_params(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let dan = match config.dan_variant()? {
        Some(v) => {
            let dan = Dan::new(v, config.detector.base_channels(), config.detector.leaky_slope)?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(1);
            params.extend(dan.init_params(&mut rng));
            Some(dan)
        }
        None => None,
    };
    Ok((JointModel::new(detector, dan, config.grl())?, params))
}

/// Rebuilds the detector recorded in a checkpoint.
pub fn detector_from_checkpoint(ckpt: &Checkpoint) -> Result<(RunConfig, Detector)> {
    let config = RunConfig::from_json(&ckpt.config)?;
    let detector = Detector::new(config.detector.clone())?;
    ckpt.require_groups(&crate::detector::checkpoint::DETECTOR_GROUPS)?;
    Ok((config, detector))
}

fn shuffle_seed(config: &RunConfig, stream: u64) -> Option<u64> {
    config.shuffle.then(|| config.data_seed.wrapping_mul(2).wrapping_add(stream))
}

fn labeled(stream: &mut DomainStream, n: usize) -> (Tensor, Vec<Vec<GroundTruthBox>>) {
    let idx = stream.take(n);
    let boxes = idx.iter().map(|&i| stream.split.boxes[i].clone()).collect();
    (stream.split.batch(&idx), boxes)
}

fn max_abs(t: &Tensor) -> f64 {
    t.data().iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn write_outputs(dir: &Path, outcome: &TrainOutcome, aborted: Option<String>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    outcome.log.write_csv(dir.join(LOG_FILE))?;
    let summary = RunSummary {
        config: outcome.config.clone(),
        iterations_completed: outcome.log.len(),
        evals: outcome.log.evals.clone(),
        inactive_branch_grad: outcome.inactive_branch_grad.clone(),
        aborted,
    };
    let p = dir.join(SUMMARY_FILE);
    std::fs::write(&p, serde_json::to_string_pretty(&summary).expect("serializable") + "\n").map_err(|e| Error::io(&p, e))
}

/// Runs the configured number of iterations. Outputs go to `out_dir` when
/// set; on a non-finite loss the partial log is written before the error
/// is returned.
pub fn train(config: &RunConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    let config = prepare_config(config, dataset)?;
    let (model, params) = build_model(&config)?;
    let source = dataset.split("source_train")?;
    let mut source_stream = DomainStream::new(source, shuffle_seed(&config, 0))?;
    let mut target_stream = match config.mode {
        TrainMode::SourceOnly => None,
        // The oracle reads target_train through the source seed.
        TrainMode::Oracle => Some(DomainStream::new(dataset.split("target_train")?, shuffle_seed(&config, 0))?),
        TrainMode::Adapt => Some(DomainStream::new(dataset.split("target_train")?, shuffle_seed(&config, 1))?),
    };
    let target_val = if config.eval_every > 0 { Some(dataset.split("target_val")?) } else { None };

    let inactive: Vec<(Scale, Vec<String>)> = match &model.dan {
        Some(dan) => Scale::ALL
            .into_iter()
            .filter(|s| !dan.variant().is_active(*s))
            .map(|s| (s, dan.architecture().branch_param_names(s)))
            .collect(),
        None => Vec::new(),
    };
    let classifiers = model.dan.as_ref().map(Dan::map_scales).unwrap_or_default();
    let mut outcome = TrainOutcome {
        config: config.clone(),
        params,
        log: TrainingLog::new(classifiers),
        inactive_branch_grad: inactive.iter().map(|(s, _)| (*s, 0.0)).collect(),
    };
    let mut opt = Sgd::new(config.optimizer.clone(), &outcome.params);
    let half = config.batch_size / 2;
    let total = config.iterations;
    let report_every = (total / 10).max(1);
    let start = Instant::now();

    for it in 0..total {
        let (images, boxes, labels) = match (&model.dan, config.mode) {
            (Some(_), TrainMode::Adapt) => {
                let b = compose_batch(&mut source_stream, target_stream.as_mut().unwrap(), config.batch_size)?;
                (b.images, b.boxes, Some(b.labels))
            }
            (_, TrainMode::Oracle) => {
                let (x, b) = labeled(target_stream.as_mut().unwrap(), half);
                (x, b, None)
            }
            _ => {
                let (x, b) = labeled(&mut source_stream, half);
                (x, b, None)
            }
        };
        let mut g = Graph::new();
        let bound = outcome.params.bind(&mut g, true);
        let x = g.constant(images);
        let out = model.forward(&mut g, &bound, x, &boxes, labels.as_ref())?;
        let l_det = g.value(out.detection.total).item();
        let l_dc: Vec<f64> = out
            .domain
            .as_ref()
            .map(|d| d.per_map.iter().map(|&(_, v)| g.value(v).item()).collect())
            .unwrap_or_default();
        let l_dc_mean = out.domain.as_ref().map(|d| g.value(d.loss).item());
        let l_t = out.reported_total(&g, &config.grl());

        let mut problem = None;
        if !(l_det.is_finite() && l_t.is_finite() && l_dc.iter().all(|v| v.is_finite())) {
            problem = Some(format!("L_det={l_det:e}, L_dc={l_dc:?}"));
        }
        let grads = if problem.is_none() {
            let raw = g.backward(out.root);
            let grads = bound.gradients(&g, &raw);
            if !grads.all_finite() {
                problem = Some("gradient has non-finite entries".into());
            }
            Some(grads)
        } else {
            None
        };
        if let Some(detail) = problem {
            let err = Error::NonFinite { iteration: it, detail };
            if let Some(dir) = &config.out_dir {
                write_outputs(dir, &outcome, Some(err.to_string()))?;
            }
            return Err(err);
        }
        let grads = grads.unwrap();
        for (scale, names) in &inactive {
            let m = names.iter().map(|n| max_abs(grads.get(n).unwrap())).fold(0.0, f64::max);
            let slot = outcome.inactive_branch_grad.get_mut(scale).unwrap();
            *slot = slot.max(m);
        }
        let lr = opt.step(&mut outcome.params, &grads, it, total);
        outcome.log.records.push(LogRecord {
            iteration: it,
            l_det,
            l_dc,
            l_dc_mean,
            l_t,
            lr,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });

        let done = it + 1;
        if let Some(val) = target_val {
            if done % config.eval_every == 0 {
                let r = evaluate_split(&model.detector, &outcome.params, val, &config.eval)?;
                log::info!("iteration {done}: target mAP {:.2}", 100.0 * r.map_score);
                outcome.log.evals.push(EvalRecord {
                    iteration: done,
                    target_map: r.map_score,
                });
            }
        }
        if let Some(dir) = &config.out_dir {
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < total {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                outcome.checkpoint().save(dir.join(format!("checkpoint_{done:06}.msda")))?;
            }
        }
        if done % report_every == 0 {
            log::info!("iteration {done}/{total}: L_det {l_det:.4} L_t {l_t:.4} lr {lr:.2e}");
        }
    }

    if let Some(dir) = &config.out_dir {
        write_outputs(dir, &outcome, None)?;
        outcome.checkpoint().save(dir.join(CHECKPOINT_FILE))?;
    }
    Ok(outcome)
}
