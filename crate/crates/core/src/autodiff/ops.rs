//! Elementwise, reduction, and layout operations.

use super::{Function, Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

#[derive(Debug)]
struct BinaryOp(Binary);

impl Function for BinaryOp {
    fn name(&self) -> &'static str {
        "binary"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let (ga, gb) = match self.0 {
            Binary::Add => (g.clone(), g.clone()),
            Binary::Sub => (g.clone(), g.map(|x| -x)),
            Binary::Mul => (g.zip_map(b, |g, b| g * b), g.zip_map(a, |g, a| g * a)),
            Binary::Div => {
                let ga = g.zip_map(b, |g, b| g / b);
                let mut gb = ga.zip_map(a, |gab, a| gab * a);
                for (x, &bv) in gb.data_mut().iter_mut().zip(b.data()) {
                    *x = -*x / bv;
                }
                (ga, gb)
            }
            // Ties route the gradient to the first operand.
            Binary::Min | Binary::Max => {
                let first = |x: f64, y: f64| match self.0 {
                    Binary::Min => x <= y,
                    _ => x >= y,
                };
                let mut ga = g.clone();
                let mut gb = g.clone();
                for i in 0..g.len() {
                    if first(a.data()[i], b.data()[i]) {
                        gb.data_mut()[i] = 0.0;
                    } else {
                        ga.data_mut()[i] = 0.0;
                    }
                }
                (ga, gb)
            }
        };
        vec![needs[0].then_some(ga), needs[1].then_some(gb)]
    }
}

#[derive(Debug)]
struct Scale(f64);

impl Function for Scale {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(g.map(|x| x * self.0))]
    }
}

#[derive(Debug)]
struct AddScalar;

impl Function for AddScalar {
    fn name(&self) -> &'static str {
        "add_scalar"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(g.clone())]
    }
}

#[derive(Debug)]
struct Sigmoid;

impl Function for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn backward(&self, _: &[&Tensor], y: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(g.zip_map(y, |g, y| g * y * (1.0 - y)))]
    }
}

#[derive(Debug)]
struct LeakyRelu(f64);

impl Function for LeakyRelu {
    fn name(&self) -> &'static str {
        "leaky_relu"
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let slope = self.0;
        vec![Some(g.zip_map(x[0], |g, x| if x > 0.0 { g } else { g * slope }))]
    }
}

#[derive(Debug)]
struct Sum {
    scale: f64,
}

impl Function for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::full(x[0].shape(), g.item() * self.scale))]
    }
}

#[derive(Debug)]
struct Gather {
    indices: Vec<usize>,
}

impl Function for Gather {
    fn name(&self) -> &'static str {
        "gather"
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut gx = Tensor::zeros(x[0].shape());
        let d = gx.data_mut();
        for (&i, &gv) in self.indices.iter().zip(g.data()) {
            d[i] += gv;
        }
        vec![Some(gx)]
    }
}

/// Numerically stable elementwise binary cross-entropy on logits.
#[derive(Debug)]
struct BceWithLogits {
    targets: Tensor,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `max(x, 0) - x t + ln(1 + e^{-|x|})`
pub fn bce_logit(x: f64, t: f64) -> f64 {
    x.max(0.0) - x * t + (-x.abs()).exp().ln_1p()
}

impl Function for BceWithLogits {
    fn name(&self) -> &'static str {
        "bce_with_logits"
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut gx = x[0].zip_map(&self.targets, |x, t| sigmoid(x) - t);
        for (a, &gv) in gx.data_mut().iter_mut().zip(g.data()) {
            *a *= gv;
        }
        vec![Some(gx)]
    }
}

#[derive(Debug)]
struct Upsample2x;

impl Function for Upsample2x {
    fn name(&self) -> &'static str {
        "upsample2x"
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let (n, c, h, w) = x[0].dims4();
        let mut gx = Tensor::zeros(x[0].shape());
        let gd = g.data();
        let out = gx.data_mut();
        let (oh, ow) = (2 * h, 2 * w);
        for plane in 0..n * c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[plane * h * w + (y / 2) * w + xx / 2] += gd[plane * oh * ow + y * ow + xx];
                }
            }
        }
        vec![Some(gx)]
    }
}

#[derive(Debug)]
struct ConcatChannels {
    channels: Vec<usize>,
}

impl Function for ConcatChannels {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (n, total, h, w) = g.dims4();
        let hw = h * w;
        let mut offset = 0;
        let mut out = Vec::with_capacity(x.len());
        for (&c, &need) in self.channels.iter().zip(needs) {
            if need {
                let mut part = Vec::with_capacity(n * c * hw);
                for b in 0..n {
                    let start = (b * total + offset) * hw;
                    part.extend_from_slice(&g.data()[start..start + c * hw]);
                }
                out.push(Some(Tensor::from_vec(&[n, c, h, w], part).unwrap()));
            } else {
                out.push(None);
            }
            offset += c;
        }
        out
    }
}

#[derive(Debug)]
struct SliceOuter {
    start: usize,
}

impl Function for SliceOuter {
    fn name(&self) -> &'static str {
        "slice_outer"
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut gx = Tensor::zeros(x[0].shape());
        let stride: usize = x[0].shape()[1..].iter().product();
        let off = self.start * stride;
        gx.data_mut()[off..off + g.len()].copy_from_slice(g.data());
        vec![Some(gx)]
    }
}

#[derive(Debug)]
struct Reshape;

impl Function for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(g.clone().reshape(x[0].shape()).unwrap())]
    }
}

impl Graph {
    fn binary(&mut self, a: Var, b: Var, op: Binary) -> Var {
        let f = |x: f64, y: f64| match op {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
            Binary::Min => {
                if x <= y {
                    x
                } else {
                    y
                }
            }
            Binary::Max => {
                if x >= y {
                    x
                } else {
                    y
                }
            }
        };
        let out = self.value(a).zip_map(self.value(b), f);
        self.record(BinaryOp(op), &[a, b], out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Div)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Min)
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Max)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.record(Scale(c), &[a], out)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.record(AddScalar, &[a], out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.record(Sigmoid, &[a], out)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { x * slope });
        self.record(LeakyRelu(slope), &[a], out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.record(Sum { scale: 1.0 }, &[a], out)
    }

    /// Mean over all elements; an empty input yields 0.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let scale = if n == 0 { 0.0 } else { 1.0 / n as f64 };
        let out = Tensor::scalar(self.value(a).sum() * scale);
        self.record(Sum { scale }, &[a], out)
    }

    /// Flat-index gather into a 1-D tensor.
    pub fn gather(&mut self, a: Var, indices: Vec<usize>) -> Var {
        let src = self.value(a).data();
        let data: Vec<f64> = indices.iter().map(|&i| src[i]).collect();
        let out = Tensor::from_vec(&[indices.len()], data).unwrap();
        self.record(Gather { indices }, &[a], out)
    }

    /// Elementwise BCE of logits `a` against constant `targets`.
    pub fn bce_with_logits(&mut self, a: Var, targets: Tensor) -> Var {
        let out = self.value(a).zip_map(&targets, bce_logit);
        self.record(BceWithLogits { targets }, &[a], out)
    }

    /// Nearest-neighbour 2x spatial upsampling of an NCHW map.
    pub fn upsample2x(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = (2 * h, 2 * w);
        let src = x.data();
        let mut data = vec![0.0; n * c * oh * ow];
        for plane in 0..n * c {
            for y in 0..oh {
                for xx in 0..ow {
                    data[plane * oh * ow + y * ow + xx] = src[plane * h * w + (y / 2) * w + xx / 2];
                }
            }
        }
        let out = Tensor::from_vec(&[n, c, oh, ow], data).unwrap();
        self.record(Upsample2x, &[a], out)
    }

    /// Concatenates NCHW maps along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        let (n, _, h, w) = self.value(parts[0]).dims4();
        let channels: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (pn, pc, ph, pw) = self.value(p).dims4();
                assert_eq!((pn, ph, pw), (n, h, w), "concat_channels geometry mismatch");
                pc
            })
            .collect();
        let total: usize = channels.iter().sum();
        let hw = h * w;
        let mut data = Vec::with_capacity(n * total * hw);
        for b in 0..n {
            for (&p, &c) in parts.iter().zip(&channels) {
                let start = b * c * hw;
                data.extend_from_slice(&self.value(p).data()[start..start + c * hw]);
            }
        }
        let out = Tensor::from_vec(&[n, total, h, w], data).unwrap();
        self.record(ConcatChannels { channels }, parts, out)
    }

    /// Rows `start..end` of the leading (batch) axis.
    pub fn slice_outer(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice_outer(start, end);
        self.record(SliceOuter { start }, &[a], out)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).clone().reshape(shape).expect("reshape");
        self.record(Reshape, &[a], out)
    }
}
