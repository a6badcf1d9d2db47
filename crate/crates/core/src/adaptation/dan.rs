//! Domain adaptation network architectures.
//!
//! Every variant reads the backbone taps through one reversal layer per
//! scale. With base width `C` (the channels of `F1`):
//!
//! | variant    | branches                                              | fusion                         |
//! |------------|-------------------------------------------------------|--------------------------------|
//! | Baseline   | `c -> c/2 -> 1` per active scale                      | none, one map per scale        |
//! | PFR        | F1 `C -> C/2 -> C/4 -> C/16 -> 1`                     | none, one map per scale        |
//! |            | F2 `2C -> C -> C/4 -> C/16 -> 1`                      |                                |
//! |            | F3 `4C -> 2C -> C -> C/2 -> C/8 -> 1`                 |                                |
//! | UC         | F1 `C -> C/2 -> C/2` (two stride-2 stages)            | concat `3C/2 -> C/2 -> 1`      |
//! |            | F2 `2C -> C/2` (stride 2), F3 `4C -> C/2`             |                                |
//! | Integrated | F1 `C -> C/2 -> C/4 -> 3C/16 -> C/8` (first two s2)   | concat `3C/8 -> C/8 -> 1`      |
//! |            | F2 `2C -> C -> C/2 -> C/4 -> C/8` (first s2)          |                                |
//! |            | F3 `4C -> 2C -> C -> C/2 -> C/4 -> C/8`               |                                |
//!
//! Stages are 3x3 convolutions except the final single-channel projection,
//! which is 1x1. Leaky ReLU follows every stage but the last; a sigmoid
//! turns the last stage into per-location source probabilities.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::detector::{FeaturePyramid, Scale};
use crate::error::{Error, Result};
use crate::params::{Bound, ConvLayer, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DanKind {
    Baseline,
    Pfr,
    Uc,
    Integrated,
}

impl DanKind {
    pub const ALL: [DanKind; 4] = [DanKind::Baseline, DanKind::Pfr, DanKind::Uc, DanKind::Integrated];

    /// Whether all scales feed a single fused classifier.
    pub fn is_unified(self) -> bool {
        matches!(self, DanKind::Uc | DanKind::Integrated)
    }
}

impl fmt::Display for DanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DanKind::Baseline => "baseline",
            DanKind::Pfr => "pfr",
            DanKind::Uc => "uc",
            DanKind::Integrated => "integrated",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for DanKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(DanKind::Baseline),
            "pfr" => Ok(DanKind::Pfr),
            "uc" => Ok(DanKind::Uc),
            "integrated" => Ok(DanKind::Integrated),
            other => Err(Error::Config(format!("unknown DAN variant `{other}`"))),
        }
    }
}

/// A DAN architecture together with the scales it adapts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DanVariant {
    kind: DanKind,
    active_scales: BTreeSet<Scale>,
}

impl DanVariant {
    pub fn new(kind: DanKind, active_scales: impl IntoIterator<Item = Scale>) -> Result<Self> {
        let active_scales: BTreeSet<Scale> = active_scales.into_iter().collect();
        if active_scales.is_empty() {
            return Err(Error::Config("a DAN needs at least one active scale".into()));
        }
        if kind.is_unified() && active_scales.len() != 3 {
            return Err(Error::Config(format!("{kind} fuses all three scales; all must be active")));
        }
        Ok(Self { kind, active_scales })
    }

    pub fn all_scales(kind: DanKind) -> Self {
        Self::new(kind, Scale::ALL).expect("all scales is always valid")
    }

    pub fn kind(&self) -> DanKind {
        self.kind
    }

    pub fn active_scales(&self) -> &BTreeSet<Scale> {
        &self.active_scales
    }

    pub fn is_active(&self, scale: Scale) -> bool {
        self.active_scales.contains(&scale)
    }
}

/// Which classifier produced a probability map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MapScale {
    Scale(Scale),
    Unified,
}

impl fmt::Display for MapScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapScale::Scale(s) => write!(f, "{s}"),
            MapScale::Unified => f.write_str("UNIFIED"),
        }
    }
}

impl std::str::FromStr for MapScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("unified") {
            Ok(MapScale::Unified)
        } else {
            s.parse().map(MapScale::Scale)
        }
    }
}

/// Per-location source-domain probabilities, shape `[batch, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainProbMap {
    pub scale: MapScale,
    pub probs: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub scale: Scale,
    pub stages: Vec<ConvLayer>,
}

impl Branch {
    /// Channel widths along the branch, input first.
    pub fn channel_schedule(&self) -> Vec<usize> {
        std::iter::once(self.stages[0].cin).chain(self.stages.iter().map(|s| s.cout)).collect()
    }
}

/// Concrete layer layout of a DAN for a given base width.
#[derive(Clone, Debug, PartialEq)]
pub struct DanArchitecture {
    pub kind: DanKind,
    pub branches: Vec<Branch>,
    /// Layers after channel concatenation; empty for per-scale variants.
    pub trunk: Vec<ConvLayer>,
}

fn stage(scale: Scale, i: usize, cin: usize, cout: usize, stride: usize) -> ConvLayer {
    let kernel = if cout == 1 { 1 } else { 3 };
    ConvLayer::new(format!("dan.{}.s{}", scale.to_string().to_lowercase(), i), cin, cout, kernel, stride)
}

fn branch(scale: Scale, widths: &[usize], strides: &[usize]) -> Branch {
    let stages = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| stage(scale, i, w[0], w[1], strides.get(i).copied().unwrap_or(1)))
        .collect();
    Branch { scale, stages }
}

impl DanArchitecture {
    /// Layout of `kind` for base width `c`. Every branch is built, including
    /// those a variant may leave inactive.
    pub fn new(kind: DanKind, c: usize) -> Result<Self> {
        let need = match kind {
            DanKind::Baseline => 2,
            DanKind::Uc => 2,
            DanKind::Pfr | DanKind::Integrated => 32,
        };
        let multiple = match kind {
            DanKind::Pfr | DanKind::Integrated => 16,
            _ => 2,
        };
        if c < need || !c.is_multiple_of(multiple) {
            return Err(Error::Config(format!(
                "{kind} DAN needs a base width that is a multiple of {multiple} and at least {need}, got {c}"
            )));
        }
        let arch = match kind {
            DanKind::Baseline => Self {
                kind,
                branches: Scale::ALL
                    .iter()
                    .map(|&s| {
                        let w = c * s.width_factor();
                        branch(s, &[w, w / 2, 1], &[])
                    })
                    .collect(),
                trunk: Vec::new(),
            },
            DanKind::Pfr => Self {
                kind,
                branches: vec![
                    branch(Scale::F1, &[c, c / 2, c / 4, c / 16, 1], &[]),
                    branch(Scale::F2, &[2 * c, c, c / 4, c / 16, 1], &[]),
                    branch(Scale::F3, &[4 * c, 2 * c, c, c / 2, c / 8, 1], &[]),
                ],
                trunk: Vec::new(),
            },
            DanKind::Uc => Self {
                kind,
                branches: vec![
                    branch(Scale::F1, &[c, c / 2, c / 2], &[2, 2]),
                    branch(Scale::F2, &[2 * c, c / 2], &[2]),
                    branch(Scale::F3, &[4 * c, c / 2], &[1]),
                ],
                trunk: vec![
                    ConvLayer::new("dan.fused.s0", 3 * (c / 2), c / 2, 3, 1),
                    ConvLayer::new("dan.fused.s1", c / 2, 1, 1, 1),
                ],
            },
            DanKind::Integrated => Self {
                kind,
                branches: vec![
                    branch(Scale::F1, &[c, c / 2, c / 4, 3 * c / 16, c / 8], &[2, 2]),
                    branch(Scale::F2, &[2 * c, c, c / 2, c / 4, c / 8], &[2]),
                    branch(Scale::F3, &[4 * c, 2 * c, c, c / 2, c / 4, c / 8], &[]),
                ],
                trunk: vec![
                    ConvLayer::new("dan.fused.s0", 3 * (c / 8), c / 8, 3, 1),
                    ConvLayer::new("dan.fused.s1", c / 8, 1, 1, 1),
                ],
            },
        };
        Ok(arch)
    }

    pub fn branch(&self, scale: Scale) -> &Branch {
        &self.branches[scale.index()]
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.branches.iter().flat_map(|b| &b.stages).chain(&self.trunk)
    }

    pub fn init_params<R: Rng>(&self, rng: &mut R) -> ParamStore {
        let mut store = ParamStore::new();
        for layer in self.layers() {
            layer.init(&mut store, rng);
        }
        store
    }

    /// Parameter names belonging to one branch.
    pub fn branch_param_names(&self, scale: Scale) -> Vec<String> {
        self.branch(scale)
            .stages
            .iter()
            .flat_map(|s| [s.weight_name(), s.bias_name()])
            .collect()
    }
}

/// A DAN bound to a variant and a base width.
#[derive(Clone, Debug)]
pub struct Dan {
    variant: DanVariant,
    arch: DanArchitecture,
    leaky_slope: f64,
}

impl Dan {
    pub fn new(variant: DanVariant, base_channels: usize, leaky_slope: f64) -> Result<Self> {
        let arch = DanArchitecture::new(variant.kind(), base_channels)?;
        Ok(Self {
            variant,
            arch,
            leaky_slope,
        })
    }

    pub fn variant(&self) -> &DanVariant {
        &self.variant
    }

    pub fn architecture(&self) -> &DanArchitecture {
        &self.arch
    }

    pub fn init_params<R: Rng>(&self, rng: &mut R) -> ParamStore {
        self.arch.init_params(rng)
    }

    /// Classifier identities in output order.
    pub fn map_scales(&self) -> Vec<MapScale> {
        if self.variant.kind().is_unified() {
            vec![MapScale::Unified]
        } else {
            self.variant.active_scales().iter().map(|&s| MapScale::Scale(s)).collect()
        }
    }

    fn run(&self, g: &mut Graph, params: &Bound, layers: &[ConvLayer], mut x: Var, activate_last: bool) -> Var {
        for (i, layer) in layers.iter().enumerate() {
            x = layer.forward(g, params, x);
            if activate_last || i + 1 < layers.len() {
                x = g.leaky_relu(x, self.leaky_slope);
            }
        }
        x
    }

    /// Probability maps `[B, 1, h, w]` on the graph. Each active tap passes
    /// through a reversal layer with `coefficient` before its first stage.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &Bound,
        pyramid: &FeaturePyramid<Var>,
        coefficient: f64,
    ) -> Vec<(MapScale, Var)> {
        self.forward_logits(g, params, pyramid, coefficient)
            .into_iter()
            .map(|(s, logits)| (s, g.sigmoid(logits)))
            .collect()
    }

    /// [`forward`](Self::forward) without the final sigmoid.
    pub fn forward_logits(
        &self,
        g: &mut Graph,
        params: &Bound,
        pyramid: &FeaturePyramid<Var>,
        coefficient: f64,
    ) -> Vec<(MapScale, Var)> {
        let mut heads = Vec::new();
        for b in &self.arch.branches {
            if !self.variant.is_active(b.scale) {
                continue;
            }
            let reversed = g.gradient_reversal(*pyramid.get(b.scale), coefficient);
            let unified = self.variant.kind().is_unified();
            heads.push((b.scale, self.run(g, params, &b.stages, reversed, unified)));
        }
        if self.variant.kind().is_unified() {
            let parts: Vec<Var> = heads.iter().map(|h| h.1).collect();
            let fused = g.concat_channels(&parts);
            vec![(MapScale::Unified, self.run(g, params, &self.arch.trunk, fused, false))]
        } else {
            heads.into_iter().map(|(s, logits)| (MapScale::Scale(s), logits)).collect()
        }
    }

    /// Plain evaluation of the DAN on concrete features.
    pub fn forward_values(&self, pyramid: &FeaturePyramid, params: &ParamStore, grl: &super::GrlConfig) -> Vec<DomainProbMap> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let pyr = pyramid.map(|t| g.constant(t.clone()));
        self.forward(&mut g, &bound, &pyr, grl.lambda)
            .into_iter()
            .map(|(scale, v)| {
                let (n, _, h, w) = g.value(v).dims4();
                DomainProbMap {
                    scale,
                    probs: g.value(v).clone().reshape(&[n, h, w]).unwrap(),
                }
            })
            .collect()
    }
}

/// Runs `variant` on concrete features after checking the pyramid law.
pub fn dan_forward(
    pyramid: &FeaturePyramid,
    variant: &DanVariant,
    params: &ParamStore,
    grl: &super::GrlConfig,
    leaky_slope: f64,
) -> Result<Vec<DomainProbMap>> {
    pyramid.validate()?;
    let dan = Dan::new(variant.clone(), pyramid.base_channels(), leaky_slope)?;
    Ok(dan.forward_values(pyramid, params, grl))
}
