use serde::{Deserialize, Serialize};

use crate::autodiff::{Function, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Strength of the adversarial coupling. Stored positive; the reversal
/// layer applies the negation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrlConfig {
    pub lambda: f64,
}

impl Default for GrlConfig {
    fn default() -> Self {
        Self { lambda: 0.1 }
    }
}

impl GrlConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        let cfg = Self { lambda };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda >= 0.0 && self.lambda.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("lambda must be a finite value >= 0, got {}", self.lambda)))
        }
    }
}

/// Forward pass of the reversal layer: the identity.
pub fn grl_forward(x: &Tensor, _cfg: &GrlConfig) -> Tensor {
    x.clone()
}

/// Backward pass of the reversal layer: `-lambda * upstream`.
pub fn grl_backward(upstream: &Tensor, cfg: &GrlConfig) -> Tensor {
    reverse(upstream, cfg.lambda)
}

fn reverse(upstream: &Tensor, coefficient: f64) -> Tensor {
    let factor = -coefficient;
    upstream.map(|g| factor * g)
}

/// Tape node for the reversal layer. `coefficient` is not range-checked so
/// that tests can flip its sign.
#[derive(Clone, Copy, Debug)]
pub struct GradientReversal {
    pub coefficient: f64,
}

impl Function for GradientReversal {
    fn name(&self) -> &'static str {
        "gradient_reversal"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(reverse(g, self.coefficient))]
    }
}

impl Graph {
    pub fn gradient_reversal(&mut self, x: Var, coefficient: f64) -> Var {
        let out = self.value(x).clone();
        self.record(GradientReversal { coefficient }, &[x], out)
    }
}
