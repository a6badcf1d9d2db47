//! Domain classification loss.
//!
//! For one probability map over a batch of `B` images,
//!
//! ```text
//! L = -(1/N) sum_{i,x,y} [ t_i ln p_i(x,y) + (1 - t_i) ln(1 - p_i(x,y)) ],   N = B h w
//! ```
//!
//! with `p` clamped to `[EPS, 1 - EPS]`. Several maps are combined by an
//! unweighted mean of their per-map losses.
//!
//! Training evaluates the same expression from the pre-sigmoid logits
//! ([`Graph::domain_bce_logits`]): identical inside the clamp, and still
//! carrying a gradient once a classifier saturates.

use crate::autodiff::{Function, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{DomainLabelVector, DomainProbMap};

pub const PROB_EPS: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn bce(p: f64, t: f64) -> f64 {
    let p = clamp_prob(p);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

/// Per-location image labels broadcast from a `[B, ...]` map.
fn per_image(shape: &[usize], labels: &DomainLabelVector) -> Result<usize> {
    if shape.is_empty() || shape[0] != labels.len() {
        return Err(Error::Shape(format!(
            "probability map {shape:?} does not match {} domain labels",
            labels.len()
        )));
    }
    Ok(shape[1..].iter().product())
}

/// Loss of a single map.
pub fn map_loss(probs: &Tensor, labels: &DomainLabelVector) -> Result<f64> {
    let per = per_image(probs.shape(), labels)?;
    if probs.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = probs
        .data()
        .chunks(per)
        .zip(labels.as_f64())
        .map(|(chunk, t)| chunk.iter().map(|&p| bce(p, t)).sum::<f64>())
        .sum();
    Ok(total / probs.len() as f64)
}

/// Mean of the per-map losses.
pub fn domain_classification_loss(maps: &[DomainProbMap], labels: &DomainLabelVector) -> Result<f64> {
    if maps.is_empty() {
        return Err(Error::Validation("no probability maps to score".into()));
    }
    let mut sum = 0.0;
    for m in maps {
        sum += map_loss(&m.probs, labels)?;
    }
    Ok(sum / maps.len() as f64)
}

#[derive(Debug)]
struct DomainBce {
    targets: Vec<f64>,
    per_image: usize,
}

impl Function for DomainBce {
    fn name(&self) -> &'static str {
        "domain_bce"
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let scale = g.item() / x[0].len() as f64;
        let mut gx = Tensor::zeros(x[0].shape());
        for (i, (o, &p)) in gx.data_mut().iter_mut().zip(x[0].data()).enumerate() {
            // the clamp is flat outside [EPS, 1 - EPS]
            if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                continue;
            }
            let t = self.targets[i / self.per_image];
            *o = scale * (-(t / p) + (1.0 - t) / (1.0 - p));
        }
        vec![Some(gx)]
    }
}

impl Graph {
    /// Scalar loss of one `[B, ...]` probability map.
    pub fn domain_bce(&mut self, probs: Var, labels: &DomainLabelVector) -> Result<Var> {
        let value = map_loss(self.value(probs), labels)?;
        let per_image = per_image(self.value(probs).shape(), labels)?;
        Ok(self.record(
            DomainBce {
                targets: labels.as_f64().collect(),
                per_image,
            },
            &[probs],
            Tensor::scalar(value),
        ))
    }

    /// [`domain_bce`](Self::domain_bce) of `sigmoid(logits)`, without the clamp.
    pub fn domain_bce_logits(&mut self, logits: Var, labels: &DomainLabelVector) -> Result<Var> {
        let shape = self.value(logits).shape().to_vec();
        let per = per_image(&shape, labels)?;
        let targets: Vec<f64> = labels.as_f64().flat_map(|t| std::iter::repeat_n(t, per)).collect();
        let bce = self.bce_with_logits(logits, Tensor::from_vec(&shape, targets)?);
        Ok(self.mean(bce))
    }

    /// Mean of [`domain_bce`](Self::domain_bce) over several maps.
    pub fn domain_loss(&mut self, maps: &[Var], labels: &DomainLabelVector) -> Result<Var> {
        if maps.is_empty() {
            return Err(Error::Validation("no probability maps to score".into()));
        }
        let mut total: Option<Var> = None;
        for &m in maps {
            let l = self.domain_bce(m, labels)?;
            total = Some(match total {
                Some(acc) => self.add(acc, l),
                None => l,
            });
        }
        Ok(self.scale(total.unwrap(), 1.0 / maps.len() as f64))
    }
}
