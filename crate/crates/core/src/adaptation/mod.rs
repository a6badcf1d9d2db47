//! Adversarial multiscale adaptation: the gradient reversal layer, domain
//! adaptation networks (DANs) over the backbone taps, the domain
//! classification loss, and the joint training objective.

mod dan;
mod grl;
mod joint;
mod loss;

use serde::{Deserialize, Serialize};

pub use dan::{dan_forward, Branch, Dan, DanArchitecture, DanKind, DanVariant, DomainProbMap, MapScale};
pub use grl::{grl_backward, grl_forward, GradientReversal, GrlConfig};
pub use joint::{total_backbone_objective, DomainTerms, JointModel, JointOutput, TrainMode};
pub use loss::{domain_classification_loss, map_loss, PROB_EPS};

use crate::error::{Error, Result};

/// Per-image domain labels: 1 for source, 0 for target.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainLabelVector(Vec<u8>);

impl DomainLabelVector {
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&t| t > 1) {
            return Err(Error::Validation(format!("domain label {bad} is not 0 or 1")));
        }
        Ok(Self(labels))
    }

    /// `source` ones followed by `target` zeros.
    pub fn split(source: usize, target: usize) -> Self {
        Self(std::iter::repeat_n(1, source).chain(std::iter::repeat_n(0, target)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn as_f64(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().map(|&t| t as f64)
    }
}
