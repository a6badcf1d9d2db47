//! Domain-confusion probe: a logistic regression trained to tell source
//! from target on frozen, mean-pooled backbone features. Held-out accuracy
//! near 0.5 means the features hide the domain.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::detector::{Detector, Scale};
use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Shuffles and subsamples.
    pub seed: u64,
    /// Share of each domain used to fit the probe; the rest is held out.
    pub train_fraction: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Images per backbone forward pass.
    pub chunk: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_fraction: 0.5,
            iterations: 500,
            learning_rate: 0.5,
            l2: 1e-3,
            chunk: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeCounts {
    pub source_available: usize,
    pub target_available: usize,
    /// Per domain after rebalancing.
    pub used_per_domain: usize,
    pub train_per_domain: usize,
    pub test_per_domain: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Held-out accuracy per feature scale.
    pub per_scale: BTreeMap<Scale, f64>,
    /// Mean over the three scales.
    pub mean: f64,
    pub counts: ProbeCounts,
}

/// Fitted probe on standardized features.
#[derive(Clone, Debug)]
pub struct LogisticProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl LogisticProbe {
    /// Full-batch gradient descent from zero weights; label 1 is `positive`.
    pub fn fit(positive: &[Vec<f64>], negative: &[Vec<f64>], cfg: &ProbeConfig) -> Result<Self> {
        let dim = positive
            .first()
            .or(negative.first())
            .map(Vec::len)
            .ok_or_else(|| Error::Data("probe needs training samples".into()))?;
        let rows: Vec<(&Vec<f64>, f64)> = positive
            .iter()
            .map(|x| (x, 1.0))
            .chain(negative.iter().map(|x| (x, 0.0)))
            .collect();
        if rows.iter().any(|(x, _)| x.len() != dim) {
            return Err(Error::Shape("probe samples differ in length".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for (x, _) in &rows {
            for (m, v) in mean.iter_mut().zip(x.iter()) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; dim];
        for (x, _) in &rows {
            for ((s, v), m) in scale.iter_mut().zip(x.iter()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        let z: Vec<Vec<f64>> = rows
            .iter()
            .map(|(x, _)| x.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect())
            .collect();
        let mut probe = Self {
            mean,
            scale,
            weights: vec![0.0; dim],
            bias: 0.0,
        };
        for _ in 0..cfg.iterations {
            let mut gw = vec![0.0; dim];
            let mut gb = 0.0;
            for (zi, (_, t)) in z.iter().zip(&rows) {
                let p = sigmoid(probe.bias + zi.iter().zip(&probe.weights).map(|(a, b)| a * b).sum::<f64>());
                let r = (p - t) / n;
                gb += r;
                for (g, v) in gw.iter_mut().zip(zi) {
                    *g += r * v;
                }
            }
            for (w, g) in probe.weights.iter_mut().zip(&gw) {
                *w -= cfg.learning_rate * (g + cfg.l2 * *w);
            }
            probe.bias -= cfg.learning_rate * gb;
        }
        Ok(probe)
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        let z: f64 = x
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .zip(&self.weights)
            .map(|(((v, m), s), w)| (v - m) / s * w)
            .sum();
        sigmoid(self.bias + z)
    }

    pub fn accuracy(&self, positive: &[Vec<f64>], negative: &[Vec<f64>]) -> f64 {
        let hits = positive.iter().filter(|x| self.probability(x) > 0.5).count()
            + negative.iter().filter(|x| self.probability(x) <= 0.5).count();
        hits as f64 / (positive.len() + negative.len()) as f64
    }
}

/// Mean-pooled features per scale for every image of `split`.
pub fn pooled_features(detector: &Detector, params: &ParamStore, split: &Split, chunk: usize) -> Result<BTreeMap<Scale, Vec<Vec<f64>>>> {
    let mut out: BTreeMap<Scale, Vec<Vec<f64>>> = Scale::ALL.iter().map(|&s| (s, Vec::new())).collect();
    let indices: Vec<usize> = (0..split.len()).collect();
    for part in indices.chunks(chunk.max(1)) {
        let pyr = detector.extract_features(&split.batch(part), params)?;
        for s in Scale::ALL {
            let t = pyr.get(s);
            let (n, c, h, w) = t.dims4();
            let plane = h * w;
            let rows = out.get_mut(&s).unwrap();
            for i in 0..n {
                rows.push(
                    (0..c)
                        .map(|ch| {
                            let start = (i * c + ch) * plane;
                            t.data()[start..start + plane].iter().sum::<f64>() / plane as f64
                        })
                        .collect(),
                );
            }
        }
    }
    Ok(out)
}

/// Average-pooled pixels on a `cells x cells` grid, per channel.
pub fn pooled_pixels(split: &Split, cells: usize) -> Vec<Vec<f64>> {
    split
        .images
        .iter()
        .map(|img| {
            let (w, h) = img.dimensions();
            let (w, h) = (w as usize, h as usize);
            let mut f = vec![0.0; 3 * cells * cells];
            let mut counts = vec![0usize; cells * cells];
            for (x, y, p) in img.enumerate_pixels() {
                let cell = (y as usize * cells / h) * cells + x as usize * cells / w;
                counts[cell] += 1;
                for ch in 0..3 {
                    f[ch * cells * cells + cell] += p.0[ch] as f64 / 255.0;
                }
            }
            for ch in 0..3 {
                for (cell, &k) in counts.iter().enumerate() {
                    f[ch * cells * cells + cell] /= k.max(1) as f64;
                }
            }
            f
        })
        .collect()
}

/// Balanced held-out split of sample indices. Rebalancing and the split are
/// the same for every feature set probed with one `cfg`.
#[derive(Clone, Debug)]
pub struct ProbePlan {
    pub source_train: Vec<usize>,
    pub source_test: Vec<usize>,
    pub target_train: Vec<usize>,
    pub target_test: Vec<usize>,
    pub counts: ProbeCounts,
}

impl ProbePlan {
    pub fn new(n_source: usize, n_target: usize, cfg: &ProbeConfig) -> Result<Self> {
        if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
            return Err(Error::Config("probe train_fraction must lie in (0, 1)".into()));
        }
        let used = n_source.min(n_target);
        let train = ((used as f64) * cfg.train_fraction).round() as usize;
        if train == 0 || train == used {
            return Err(Error::Data(format!(
                "probe needs both train and test samples; have {n_source} source and {n_target} target"
            )));
        }
        if n_source != n_target {
            log::warn!("probe rebalanced to {used} per domain (source {n_source}, target {n_target})");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut pick = |n: usize| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx.truncate(used);
            let test = idx.split_off(train);
            (idx, test)
        };
        let (source_train, source_test) = pick(n_source);
        let (target_train, target_test) = pick(n_target);
        Ok(Self {
            source_train,
            source_test,
            target_train,
            target_test,
            counts: ProbeCounts {
                source_available: n_source,
                target_available: n_target,
                used_per_domain: used,
                train_per_domain: train,
                test_per_domain: used - train,
            },
        })
    }

    /// Held-out accuracy of a probe fitted on one feature set.
    pub fn accuracy(&self, source: &[Vec<f64>], target: &[Vec<f64>], cfg: &ProbeConfig) -> Result<f64> {
        let take = |rows: &[Vec<f64>], idx: &[usize]| -> Vec<Vec<f64>> { idx.iter().map(|&i| rows[i].clone()).collect() };
        let probe = LogisticProbe::fit(
            &take(source, &self.source_train),
            &take(target, &self.target_train),
            cfg,
        )?;
        Ok(probe.accuracy(&take(source, &self.source_test), &take(target, &self.target_test)))
    }
}

/// Probe accuracy per scale on frozen detector features.
pub fn domain_confusion_probe(
    detector: &Detector,
    params: &ParamStore,
    source: &Split,
    target: &Split,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    let plan = ProbePlan::new(source.len(), target.len(), cfg)?;
    let fs = pooled_features(detector, params, source, cfg.chunk)?;
    let ft = pooled_features(detector, params, target, cfg.chunk)?;
    let mut per_scale = BTreeMap::new();
    for s in Scale::ALL {
        per_scale.insert(s, plan.accuracy(&fs[&s], &ft[&s], cfg)?);
    }
    let mean = per_scale.values().sum::<f64>() / per_scale.len() as f64;
    Ok(ProbeReport {
        per_scale,
        mean,
        counts: plan.counts,
    })
}

/// Probe accuracy on 4x4-pooled raw pixels.
pub fn pixel_probe(source: &Split, target: &Split, cfg: &ProbeConfig) -> Result<f64> {
    let plan = ProbePlan::new(source.len(), target.len(), cfg)?;
    plan.accuracy(&pooled_pixels(source, 4), &pooled_pixels(target, 4), cfg)
}
