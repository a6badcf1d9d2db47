//! Compact single-stage detector.
//!
//! The backbone is a stack of plain convolutions: five stride-2 3x3 stages,
//! the last three each followed by a 1x1 mixing layer that is tapped as the
//! feature pyramid `F1`/`F2`/`F3` (strides 8, 16, 32) with channel widths
//! `C`, `2C`, `4C` where `C = round(256 * channel_multiplier)`. A top-down neck merges the
//! taps and a 1x1 head per scale predicts `A * (5 + K)` values per cell:
//! box offsets `tx ty tw th`, objectness, and `K` class logits.

mod anchors;
pub mod checkpoint;
mod decode;
mod loss;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use anchors::{derive_anchors, shape_iou, Anchors};
pub use decode::{decode_and_nms, decode_image, nms};
pub use loss::{assign_targets, DetectionLoss, LossWeights, Positive};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ConvLayer, ParamStore};
use crate::tensor::Tensor;

/// Anchors per scale.
pub const ANCHORS_PER_SCALE: usize = 3;
/// Overall stride of the deepest tap.
pub const TOTAL_STRIDE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scale {
    F1,
    F2,
    F3,
}

impl Scale {
    pub const ALL: [Scale; 3] = [Scale::F1, Scale::F2, Scale::F3];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Downsampling factor relative to the input image.
    pub fn stride(self) -> usize {
        8 << self.index()
    }

    /// Channel count as a multiple of the base width `C`.
    pub fn width_factor(self) -> usize {
        1 << self.index()
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F{}", self.index() + 1)
    }
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "F1" => Ok(Scale::F1),
            "F2" => Ok(Scale::F2),
            "F3" => Ok(Scale::F3),
            other => Err(Error::Config(format!("unknown scale `{other}`"))),
        }
    }
}

/// The three backbone taps.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid<T = Tensor> {
    pub f1: T,
    pub f2: T,
    pub f3: T,
}

impl<T> FeaturePyramid<T> {
    pub fn get(&self, scale: Scale) -> &T {
        match scale {
            Scale::F1 => &self.f1,
            Scale::F2 => &self.f2,
            Scale::F3 => &self.f3,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> FeaturePyramid<U> {
        FeaturePyramid {
            f1: f(&self.f1),
            f2: f(&self.f2),
            f3: f(&self.f3),
        }
    }
}

impl FeaturePyramid<Tensor> {
    /// Checks the halving/doubling law between consecutive taps.
    pub fn validate(&self) -> Result<()> {
        let (n1, c1, h1, w1) = self.f1.dims4();
        let (n2, c2, h2, w2) = self.f2.dims4();
        let (n3, c3, h3, w3) = self.f3.dims4();
        let ok = n1 == n2
            && n2 == n3
            && h1 == w1
            && h1 % 4 == 0
            && (h2, w2) == (h1 / 2, w1 / 2)
            && (h3, w3) == (h2 / 2, w2 / 2)
            && c2 == 2 * c1
            && c3 == 2 * c2;
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "pyramid violates the 1:2:4 law: {:?} {:?} {:?}",
                self.f1.shape(),
                self.f2.shape(),
                self.f3.shape()
            )))
        }
    }

    /// Side `d` of `F1`.
    pub fn base_width(&self) -> usize {
        self.f1.dims4().2
    }

    /// Channel count `C` of `F1`.
    pub fn base_channels(&self) -> usize {
        self.f1.dims4().1
    }
}

/// Annotated object, centre/size normalized to the image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl GroundTruthBox {
    pub fn validate(&self, num_classes: Option<usize>) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.cx) && unit(self.cy)) {
            return Err(Error::Validation(format!("box centre out of [0,1]: {self:?}")));
        }
        if !(self.w > 0.0 && self.w <= 1.0 && self.h > 0.0 && self.h <= 1.0) {
            return Err(Error::Validation(format!("box size out of (0,1]: {self:?}")));
        }
        if let Some(k) = num_classes {
            if self.class_id >= k {
                return Err(Error::Validation(format!(
                    "class id {} outside [0, {k})",
                    self.class_id
                )));
            }
        }
        Ok(())
    }

    /// Corners in pixels, clamped to an `image_size` square.
    pub fn to_corners(&self, image_size: f64) -> [f64; 4] {
        let clamp = |v: f64| v.clamp(0.0, 1.0) * image_size;
        [
            clamp(self.cx - self.w / 2.0),
            clamp(self.cy - self.h / 2.0),
            clamp(self.cx + self.w / 2.0),
            clamp(self.cy + self.h / 2.0),
        ]
    }
}

/// Decoded detection in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: usize,
    pub confidence: f64,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Detection {
    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub image_size: usize,
    pub channel_multiplier: f64,
    pub num_classes: usize,
    pub leaky_slope: f64,
    /// Nine `(w, h)` anchors normalized to the image, smallest first; three
    /// per scale from `F1` to `F3`. Derived from the training boxes when
    /// absent.
    pub anchors: Option<Anchors>,
    pub loss: LossWeights,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            channel_multiplier: 0.125,
            num_classes: 3,
            leaky_slope: 0.1,
            anchors: None,
            loss: LossWeights::default(),
        }
    }
}

impl DetectorConfig {
    /// `C = round(256 * multiplier)`.
    pub fn base_channels(&self) -> usize {
        (256.0 * self.channel_multiplier).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.base_channels();
        if c < 4 || !c.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "channel multiplier {} gives base width {c}; need a positive multiple of 4",
                self.channel_multiplier
            )));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(TOTAL_STRIDE) {
            return Err(Error::Config(format!(
                "image size {} is not a positive multiple of {TOTAL_STRIDE}",
                self.image_size
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if let Some(a) = &self.anchors {
            a.validate()?;
        }
        Ok(())
    }

    /// Side of `F1` for the configured input.
    pub fn base_width(&self) -> usize {
        self.image_size / Scale::F1.stride()
    }

    pub fn grid(&self, scale: Scale) -> usize {
        self.image_size / scale.stride()
    }

    /// Channels per head cell: `A * (5 + K)`.
    pub fn head_channels(&self) -> usize {
        ANCHORS_PER_SCALE * (5 + self.num_classes)
    }
}

/// Raw head outputs per scale, `[N, A * (5 + K), G, G]`.
pub type HeadOutputs<T = Tensor> = FeaturePyramid<T>;

#[derive(Clone, Debug)]
pub struct Detector {
    config: DetectorConfig,
    anchors: Anchors,
}

const OBJ_PRIOR: f64 = 0.01;

impl Detector {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let anchors = config
            .anchors
            .clone()
            .ok_or_else(|| Error::Config("detector anchors are not set".into()))?;
        Ok(Self { config, anchors })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn anchors(&self) -> &Anchors {
        &self.anchors
    }

    pub fn backbone_layers(&self) -> Vec<ConvLayer> {
        let c = self.config.base_channels();
        vec![
            ConvLayer::new("backbone.stem1", 3, c / 4, 3, 2),
            ConvLayer::new("backbone.stem2", c / 4, c / 2, 3, 2),
            ConvLayer::new("backbone.down3", c / 2, c, 3, 2),
            ConvLayer::new("backbone.f1", c, c, 1, 1),
            ConvLayer::new("backbone.down4", c, 2 * c, 3, 2),
            ConvLayer::new("backbone.f2", 2 * c, 2 * c, 1, 1),
            ConvLayer::new("backbone.down5", 2 * c, 4 * c, 3, 2),
            ConvLayer::new("backbone.f3", 4 * c, 4 * c, 1, 1),
        ]
    }

    fn neck_layers(&self) -> [ConvLayer; 6] {
        let c = self.config.base_channels();
        [
            ConvLayer::new("neck.lat3", 4 * c, c, 1, 1),
            ConvLayer::new("neck.out3", c, c, 3, 1),
            ConvLayer::new("neck.lat2", 3 * c, c, 1, 1),
            ConvLayer::new("neck.out2", c, c, 3, 1),
            ConvLayer::new("neck.lat1", 2 * c, c, 1, 1),
            ConvLayer::new("neck.out1", c, c, 3, 1),
        ]
    }

    fn head_layers(&self) -> [ConvLayer; 3] {
        let c = self.config.base_channels();
        let out = self.config.head_channels();
        Scale::ALL.map(|s| ConvLayer::new(format!("head.p{}", s.index() + 1), c, out, 1, 1))
    }

    /// Fresh `backbone`, `neck`, and `head` parameters.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> ParamStore {
        let mut store = ParamStore::new();
        for layer in self.backbone_layers().iter().chain(&self.neck_layers()).chain(&self.head_layers()) {
            layer.init(&mut store, rng);
        }
        // objectness starts near a low prior
        let prior = (OBJ_PRIOR / (1.0 - OBJ_PRIOR)).ln();
        let fields = 5 + self.config.num_classes;
        for layer in self.head_layers() {
            let bias = store.get_mut(&layer.bias_name()).unwrap();
            for a in 0..ANCHORS_PER_SCALE {
                bias.data_mut()[a * fields + 4] = prior;
            }
        }
        store
    }

    fn act(&self, g: &mut Graph, x: Var) -> Var {
        g.leaky_relu(x, self.config.leaky_slope)
    }

    pub fn check_input(&self, images: &Tensor) -> Result<()> {
        let shape = images.shape();
        if shape.len() != 4 || shape[0] == 0 || shape[1] != 3 {
            return Err(Error::Shape(format!(
                "expected a nonempty [N, 3, H, W] batch, got {shape:?}"
            )));
        }
        let (h, w) = (shape[2], shape[3]);
        if h != w || h % TOTAL_STRIDE != 0 {
            return Err(Error::Shape(format!(
                "image side {h}x{w} must be square and divisible by the total stride {TOTAL_STRIDE}"
            )));
        }
        Ok(())
    }

    /// Backbone forward on the graph, returning the three taps.
    pub fn features(&self, g: &mut Graph, params: &Bound, images: Var) -> Result<FeaturePyramid<Var>> {
        self.check_input(g.value(images))?;
        let layers = self.backbone_layers();
        let mut x = images;
        let mut taps = Vec::with_capacity(3);
        for layer in &layers {
            let y = layer.forward(g, params, x);
            x = self.act(g, y);
            if matches!(layer.name.as_str(), "backbone.f1" | "backbone.f2" | "backbone.f3") {
                taps.push(x);
            }
        }
        Ok(FeaturePyramid {
            f1: taps[0],
            f2: taps[1],
            f3: taps[2],
        })
    }

    /// Neck and head on top of the taps.
    pub fn neck_head(&self, g: &mut Graph, params: &Bound, pyr: &FeaturePyramid<Var>) -> HeadOutputs<Var> {
        let [lat3, out3, lat2, out2, lat1, out1] = self.neck_layers();
        let head = self.head_layers();
        let conv_act = |g: &mut Graph, layer: &ConvLayer, x: Var| {
            let y = layer.forward(g, params, x);
            g.leaky_relu(y, self.config.leaky_slope)
        };

        let n3 = conv_act(g, &lat3, pyr.f3);
        let up3 = g.upsample2x(n3);
        let cat2 = g.concat_channels(&[up3, pyr.f2]);
        let n2 = conv_act(g, &lat2, cat2);
        let up2 = g.upsample2x(n2);
        let cat1 = g.concat_channels(&[up2, pyr.f1]);
        let n1 = conv_act(g, &lat1, cat1);

        let o3 = conv_act(g, &out3, n3);
        let o2 = conv_act(g, &out2, n2);
        let o1 = conv_act(g, &out1, n1);
        FeaturePyramid {
            f1: head[0].forward(g, params, o1),
            f2: head[1].forward(g, params, o2),
            f3: head[2].forward(g, params, o3),
        }
    }

    /// Constant-input backbone forward outside training.
    pub fn extract_features(&self, images: &Tensor, params: &ParamStore) -> Result<FeaturePyramid> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let x = g.constant(images.clone());
        let pyr = self.features(&mut g, &bound, x)?;
        Ok(pyr.map(|&v| g.value(v).clone()))
    }

    /// Full inference forward: raw head outputs for a batch.
    pub fn predict(&self, images: &Tensor, params: &ParamStore) -> Result<HeadOutputs> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let x = g.constant(images.clone());
        let pyr = self.features(&mut g, &bound, x)?;
        let out = self.neck_head(&mut g, &bound, &pyr);
        Ok(out.map(|&v| g.value(v).clone()))
    }

    /// Decoded, NMS-filtered detections per image.
    pub fn detect(
        &self,
        images: &Tensor,
        params: &ParamStore,
        confidence_threshold: f64,
        iou_threshold: f64,
    ) -> Result<Vec<Vec<Detection>>> {
        let out = self.predict(images, params)?;
        let n = images.shape()[0];
        Ok((0..n)
            .map(|i| decode_and_nms(&self.config, &self.anchors, &out, i, confidence_threshold, iou_threshold))
            .collect())
    }

    /// Detection loss over `targets` (one list per image in the batch).
    pub fn detection_loss(
        &self,
        g: &mut Graph,
        head: &HeadOutputs<Var>,
        targets: &[Vec<GroundTruthBox>],
    ) -> Result<DetectionLoss> {
        loss::detection_loss(&self.config, &self.anchors, g, head, targets)
    }
}
