//! 2-D convolution via im2col and `dgemm`.
//!
//! Each image in the batch is computed with its own matrix product, so the
//! result for one image never depends on what else is in the batch. Weight
//! gradients are reduced over images in batch order.

use super::{Function, Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub stride: usize,
    pub pad: usize,
}

struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(x: &Tensor, weight: &Tensor, conv: Conv2d) -> Self {
        let (_, cin, h, w) = x.dims4();
        let (_, wcin, k, k2) = weight.dims4();
        assert_eq!(cin, wcin, "conv input channels {cin} vs weight {wcin}");
        assert_eq!(k, k2, "square kernels only");
        assert!(h + 2 * conv.pad >= k && w + 2 * conv.pad >= k, "kernel larger than input");
        let ho = (h + 2 * conv.pad - k) / conv.stride + 1;
        let wo = (w + 2 * conv.pad - k) / conv.stride + 1;
        Self {
            cin,
            h,
            w,
            k,
            ho,
            wo,
            stride: conv.stride,
            pad: conv.pad,
        }
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    fn im2col(&self, img: &[f64], col: &mut [f64]) {
        let (k, n) = (self.k, self.cols());
        for ci in 0..self.cin {
            let plane = &img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((ci * k + ky) * k + kx) * n..][..n];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let dst = &mut row[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], img: &mut [f64]) {
        let (k, n) = (self.k, self.cols());
        for ci in 0..self.cin {
            let plane = &mut img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((ci * k + ky) * k + kx) * n..][..n];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += row[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c[m x n] = beta * c + a * b`, with explicit strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slices cover every index reachable through the given
    // dimensions and strides, which all callers derive from tensor shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Plain forward convolution outside any graph.
pub fn conv2d_forward(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, conv: Conv2d) -> Tensor {
    let geo = Geometry::new(x, weight, conv);
    let (n, ..) = x.dims4();
    let cout = weight.shape()[0];
    let (rows, cols) = (geo.rows(), geo.cols());
    let in_stride = geo.cin * geo.h * geo.w;
    let mut out = vec![0.0; n * cout * cols];
    let mut col = if geo.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; rows * cols]
    };
    for b in 0..n {
        let img = &x.data()[b * in_stride..(b + 1) * in_stride];
        let dst = &mut out[b * cout * cols..(b + 1) * cout * cols];
        if let Some(bias) = bias {
            for (o, chunk) in dst.chunks_mut(cols).enumerate() {
                chunk.fill(bias.data()[o]);
            }
        }
        let src: &[f64] = if geo.is_pointwise() {
            img
        } else {
            geo.im2col(img, &mut col);
            &col
        };
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        gemm(cout, rows, cols, weight.data(), (rows, 1), src, (cols, 1), beta, dst);
    }
    Tensor::from_vec(&[n, cout, geo.ho, geo.wo], out).unwrap()
}

impl Function for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, weight) = (inputs[0], inputs[1]);
        let geo = Geometry::new(x, weight, *self);
        let (n, ..) = x.dims4();
        let cout = weight.shape()[0];
        let (rows, cols) = (geo.rows(), geo.cols());
        let in_stride = geo.cin * geo.h * geo.w;

        let mut gx = needs[0].then(|| Tensor::zeros(x.shape()));
        let mut gw = needs[1].then(|| Tensor::zeros(weight.shape()));
        let mut col = vec![0.0; rows * cols];
        let mut dcol = vec![0.0; rows * cols];
        for b in 0..n {
            let gy = &g.data()[b * cout * cols..(b + 1) * cout * cols];
            let img = &x.data()[b * in_stride..(b + 1) * in_stride];
            if let Some(gw) = gw.as_mut() {
                let src: &[f64] = if geo.is_pointwise() {
                    img
                } else {
                    geo.im2col(img, &mut col);
                    &col
                };
                // dW += dY * col^T
                gemm(cout, cols, rows, gy, (cols, 1), src, (1, cols), 1.0, gw.data_mut());
            }
            if let Some(gx) = gx.as_mut() {
                let dst = &mut gx.data_mut()[b * in_stride..(b + 1) * in_stride];
                if geo.is_pointwise() {
                    gemm(rows, cout, cols, weight.data(), (1, rows), gy, (cols, 1), 0.0, dst);
                } else {
                    // dcol = W^T * dY
                    gemm(rows, cout, cols, weight.data(), (1, rows), gy, (cols, 1), 0.0, &mut dcol);
                    geo.col2im(&dcol, dst);
                }
            }
        }
        let gb = (inputs.len() > 2 && needs[2]).then(|| {
            let mut gb = vec![0.0; cout];
            for b in 0..n {
                for (o, acc) in gb.iter_mut().enumerate() {
                    let start = (b * cout + o) * cols;
                    *acc += g.data()[start..start + cols].iter().sum::<f64>();
                }
            }
            Tensor::from_vec(&[cout], gb).unwrap()
        });
        let mut out = vec![gx, gw];
        if inputs.len() > 2 {
            out.push(gb);
        }
        out
    }
}

impl Graph {
    /// Square-kernel convolution of `x` [N, Cin, H, W] with `weight`
    /// [Cout, Cin, k, k] and optional `bias` [Cout].
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Var {
        let conv = Conv2d { stride, pad };
        let out = conv2d_forward(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            conv,
        );
        match bias {
            Some(b) => self.record(conv, &[x, weight, b], out),
            None => self.record(conv, &[x, weight], out),
        }
    }
}
