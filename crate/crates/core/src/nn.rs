//! Layer primitives with hand-written backward passes.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::params::{join, ParamMut, ParamRef, Parameters};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;

#[inline]
pub fn leaky_relu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline]
pub fn leaky_relu_grad(pre: f64) -> f64 {
    if pre >= 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

pub fn leaky_relu_tensor(t: &Tensor) -> Tensor {
    t.map(leaky_relu)
}

/// Multiply `grad` in place by the activation slope evaluated at `pre`.
pub fn leaky_relu_backward(pre: &Tensor, grad: &mut Tensor) {
    for (g, p) in grad.data_mut().iter_mut().zip(pre.data()) {
        *g *= leaky_relu_grad(*p);
    }
}

fn he_std(fan_in: usize) -> f64 {
    crate::math::sqrt(2.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in as f64))
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, len: usize, std: f64) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; len];
    }
    let dist = Normal::new(0.0, std).expect("finite positive std");
    (0..len).map(|_| dist.sample(rng)).collect()
}

/// `C = alpha * A B + beta * C` for row-major, possibly transposed operands
/// described by explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices whose extents cover every index reachable
    // through the given dimensions and strides; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 3x3 convolution with zero padding of one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    stride: usize,
    /// `[out][in][ky][kx]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub const KERNEL: usize = 3;

    pub fn zeros(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        assert!(stride >= 1);
        Self {
            in_channels,
            out_channels,
            stride,
            weight: vec![0.0; out_channels * in_channels * 9],
            bias: vec![0.0; out_channels],
        }
    }

    /// He-normal weights scaled by `gain`, zero bias.
    pub fn init<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, stride: usize, gain: f64, rng: &mut R) -> Self {
        let mut conv = Self::zeros(in_channels, out_channels, stride);
        conv.weight = normal_vec(rng, conv.weight.len(), gain * he_std(in_channels * 9));
        conv
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 - 3) / self.stride + 1, (w + 2 - 3) / self.stride + 1)
    }

    fn im2col(&self, x: &Tensor) -> (Vec<f64>, usize, usize) {
        let (c, h, w) = x.shape();
        let (ho, wo) = self.output_size(h, w);
        let p = ho * wo;
        let s = self.stride;
        let mut cols = vec![0.0; c * 9 * p];
        for ci in 0..c {
            let plane = x.plane(ci);
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &mut cols[((ci * 9) + ky * 3 + kx) * p..][..p];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..][..w];
                        let dst = &mut row[oy * wo..][..wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        (cols, ho, wo)
    }

    fn col2im(&self, cols: &[f64], shape: (usize, usize, usize), ho: usize, wo: usize) -> Tensor {
        let (c, h, w) = shape;
        let p = ho * wo;
        let s = self.stride;
        let mut dx = Tensor::zeros(c, h, w);
        for ci in 0..c {
            let plane = dx.plane_mut(ci);
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &cols[((ci * 9) + ky * 3 + kx) * p..][..p];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..][..w];
                        let src = &row[oy * wo..][..wo];
                        for (ox, v) in src.iter().enumerate() {
                            let ix = (ox * s + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += *v;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.channels(), self.in_channels, "conv input channels");
        let (cols, ho, wo) = self.im2col(x);
        let p = ho * wo;
        let k = self.in_channels * 9;
        let mut out = Tensor::zeros(self.out_channels, ho, wo);
        for (o, b) in self.bias.iter().enumerate() {
            out.plane_mut(o).iter_mut().for_each(|v| *v = *b);
        }
        gemm(
            self.out_channels,
            k,
            p,
            &self.weight,
            (k as isize, 1),
            &cols,
            (p as isize, 1),
            1.0,
            out.data_mut(),
        );
        out
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient when `want_input_grad` is set.
    pub fn backward(&self, x: &Tensor, dout: &Tensor, grad: &mut Conv2d, want_input_grad: bool) -> Option<Tensor> {
        let (cols, ho, wo) = self.im2col(x);
        let p = ho * wo;
        let k = self.in_channels * 9;
        debug_assert_eq!(dout.shape(), (self.out_channels, ho, wo));
        for (o, gb) in grad.bias.iter_mut().enumerate() {
            *gb += dout.plane(o).iter().sum::<f64>();
        }
        // dW (out x k) += dout (out x p) * cols^T (p x k)
        gemm(
            self.out_channels,
            p,
            k,
            dout.data(),
            (p as isize, 1),
            &cols,
            (1, p as isize),
            1.0,
            &mut grad.weight,
        );
        if !want_input_grad {
            return None;
        }
        // dcols (k x p) = W^T (k x out) * dout (out x p)
        let mut dcols = vec![0.0; k * p];
        gemm(
            k,
            self.out_channels,
            p,
            &self.weight,
            (1, k as isize),
            dout.data(),
            (p as isize, 1),
            0.0,
            &mut dcols,
        );
        Some(self.col2im(&dcols, x.shape(), ho, wo))
    }
}

impl Parameters for Conv2d {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: join(prefix, "weight"),
            shape: vec![self.out_channels, self.in_channels, 3, 3],
            values: &self.weight,
        });
        out.push(ParamRef {
            name: join(prefix, "bias"),
            shape: vec![self.out_channels],
            values: &self.bias,
        });
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        let shape = vec![self.out_channels, self.in_channels, 3, 3];
        out.push(ParamMut {
            name: join(prefix, "weight"),
            shape,
            values: &mut self.weight,
        });
        out.push(ParamMut {
            name: join(prefix, "bias"),
            shape: vec![self.out_channels],
            values: &mut self.bias,
        });
    }
}

/// Dense affine map `y = W x + b` with `W` stored `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    in_features: usize,
    out_features: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
        }
    }

    pub fn init<R: Rng + ?Sized>(in_features: usize, out_features: usize, gain: f64, rng: &mut R) -> Self {
        let mut lin = Self::zeros(in_features, out_features);
        lin.weight = normal_vec(rng, lin.weight.len(), gain * he_std(in_features));
        lin
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_features);
        let mut y = self.bias.clone();
        for (o, out) in y.iter_mut().enumerate() {
            let row = &self.weight[o * self.in_features..][..self.in_features];
            *out += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        y
    }

    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_features];
        for (o, &g) in dy.iter().enumerate() {
            grad.bias[o] += g;
            let row = &self.weight[o * self.in_features..][..self.in_features];
            let grow = &mut grad.weight[o * self.in_features..][..self.in_features];
            for i in 0..self.in_features {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }
}

impl Parameters for Linear {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: join(prefix, "weight"),
            shape: vec![self.out_features, self.in_features],
            values: &self.weight,
        });
        out.push(ParamRef {
            name: join(prefix, "bias"),
            shape: vec![self.out_features],
            values: &self.bias,
        });
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        let shape = vec![self.out_features, self.in_features];
        out.push(ParamMut {
            name: join(prefix, "weight"),
            shape,
            values: &mut self.weight,
        });
        out.push(ParamMut {
            name: join(prefix, "bias"),
            shape: vec![self.out_features],
            values: &mut self.bias,
        });
    }
}

/// Mirror index for reflect padding (`-1 -> 1`, `n -> n - 2`). Falls back to
/// edge replication for single-pixel axes.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i.clamp(0, n - 1) as usize
}

/// Depthwise 3x3 convolution with a per-channel kernel `[c][ky][kx]` and
/// reflect padding. Output shape equals input shape.
pub fn depthwise_conv(x: &Tensor, kernel: &[f64]) -> Tensor {
    let (c, h, w) = x.shape();
    debug_assert_eq!(kernel.len(), c * 9);
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let k = &kernel[ch * 9..][..9];
        let src = x.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..h {
            let rows = [
                reflect(y as isize - 1, h) * w,
                y * w,
                reflect(y as isize + 1, h) * w,
            ];
            for xx in 0..w {
                let cols = [reflect(xx as isize - 1, w), xx, reflect(xx as isize + 1, w)];
                let mut acc = 0.0;
                for (ky, r) in rows.iter().enumerate() {
                    for (kx, cc) in cols.iter().enumerate() {
                        acc += k[ky * 3 + kx] * src[r + cc];
                    }
                }
                dst[y * w + xx] = acc;
            }
        }
    }
    out
}

/// Gradients of [`depthwise_conv`] with respect to the input and the kernel.
pub fn depthwise_conv_backward(x: &Tensor, kernel: &[f64], dout: &Tensor) -> (Tensor, Vec<f64>) {
    let (c, h, w) = x.shape();
    let mut dx = Tensor::zeros(c, h, w);
    let mut dk = vec![0.0; c * 9];
    for ch in 0..c {
        let k = &kernel[ch * 9..][..9];
        let src = x.plane(ch);
        let g = dout.plane(ch);
        let dkc = &mut dk[ch * 9..][..9];
        let dst = dx.plane_mut(ch);
        for y in 0..h {
            let rows = [
                reflect(y as isize - 1, h) * w,
                y * w,
                reflect(y as isize + 1, h) * w,
            ];
            for xx in 0..w {
                let cols = [reflect(xx as isize - 1, w), xx, reflect(xx as isize + 1, w)];
                let gv = g[y * w + xx];
                if gv == 0.0 {
                    continue;
                }
                for (ky, r) in rows.iter().enumerate() {
                    for (kx, cc) in cols.iter().enumerate() {
                        dkc[ky * 3 + kx] += gv * src[r + cc];
                        dst[r + cc] += gv * k[ky * 3 + kx];
                    }
                }
            }
        }
    }
    (dx, dk)
}

/// Per-channel spatial mean.
pub fn global_avg_pool(x: &Tensor) -> Vec<f64> {
    let n = x.plane_len() as f64;
    (0..x.channels()).map(|c| x.plane(c).iter().sum::<f64>() / n).collect()
}

pub fn global_avg_pool_backward(dy: &[f64], shape: (usize, usize, usize)) -> Tensor {
    let (c, h, w) = shape;
    let inv = 1.0 / (h * w) as f64;
    Tensor::from_fn(c, h, w, |ch, _, _| dy[ch] * inv)
}
