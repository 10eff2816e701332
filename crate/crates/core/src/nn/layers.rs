use rand::Rng;

use super::linalg::{gemm_nn, gemm_nt, gemm_tn};
use super::{Module, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Square-kernel convolution, stride 1, zero "same" padding.
#[derive(Debug, Clone)]
pub struct Conv2d<S> {
    pub weight: Param<S>,
    pub bias: Param<S>,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
}

impl<S: Scalar> Conv2d<S> {
    /// He-style init scaled by `gain`.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        let fan_in = (in_ch * kernel * kernel) as f64;
        Self {
            weight: Param::randn(
                format!("{name}.weight"),
                &[out_ch, in_ch, kernel, kernel],
                gain * (2.0 / fan_in).sqrt(),
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), &[out_ch]),
            in_ch,
            out_ch,
            kernel,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    pub fn forward(&self, x: &Tensor<S>) -> Tensor<S> {
        let (c, h, w) = x.chw();
        assert_eq!(c, self.in_ch, "conv input channels");
        let hw = h * w;
        let ckk = c * self.kernel * self.kernel;
        let cols = im2col(x, self.kernel);
        let mut y = Tensor::zeros(&[self.out_ch, h, w]);
        let yd = y.data_mut();
        for (o, &b) in self.bias.value.data().iter().enumerate() {
            yd[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = b);
        }
        gemm_nn(self.out_ch, ckk, hw, self.weight.value.data(), &cols, yd);
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
        let dx = self.backward_input(x, dy, true);
        dx.expect("input gradient requested")
    }

    /// Parameter gradients only; skips the input gradient.
    pub fn backward_params(&mut self, x: &Tensor<S>, dy: &Tensor<S>) {
        self.backward_input(x, dy, false);
    }

    fn backward_input(&mut self, x: &Tensor<S>, dy: &Tensor<S>, want_dx: bool) -> Option<Tensor<S>> {
        let (c, h, w) = x.chw();
        let hw = h * w;
        let ckk = c * self.kernel * self.kernel;
        let dyd = dy.data();
        for (o, g) in self.bias.grad.data_mut().iter_mut().enumerate() {
            *g += dyd[o * hw..(o + 1) * hw].iter().copied().sum::<S>();
        }
        let cols = im2col(x, self.kernel);
        gemm_nt(self.out_ch, hw, ckk, dyd, &cols, self.weight.grad.data_mut());
        want_dx.then(|| {
            let mut dcols = vec![S::zero(); ckk * hw];
            gemm_tn(ckk, self.out_ch, hw, self.weight.value.data(), dyd, &mut dcols);
            col2im(&dcols, c, h, w, self.kernel)
        })
    }
}

/// Unfolds `x` into a `[c·k·k, h·w]` matrix of zero-padded patches.
fn im2col<S: Scalar>(x: &Tensor<S>, k: usize) -> Vec<S> {
    let (c, h, w) = x.chw();
    let pad = k / 2;
    let xd = x.data();
    let mut cols = vec![S::zero(); c * k * k * h * w];
    for i in 0..c {
        let src = &xd[i * h * w..(i + 1) * h * w];
        for ky in 0..k {
            let (y_lo, y_hi) = valid_range(h, ky, pad);
            for kx in 0..k {
                let (x_lo, x_hi) = valid_range(w, kx, pad);
                let row = &mut cols[((i * k + ky) * k + kx) * h * w..][..h * w];
                for yy in y_lo..y_hi {
                    let sy = yy + ky - pad;
                    row[yy * w + x_lo..yy * w + x_hi]
                        .copy_from_slice(&src[sy * w + x_lo + kx - pad..sy * w + x_hi + kx - pad]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds patch gradients back onto the image.
fn col2im<S: Scalar>(cols: &[S], c: usize, h: usize, w: usize, k: usize) -> Tensor<S> {
    let pad = k / 2;
    let mut dx = Tensor::zeros(&[c, h, w]);
    let dxd = dx.data_mut();
    for i in 0..c {
        let dst = &mut dxd[i * h * w..(i + 1) * h * w];
        for ky in 0..k {
            let (y_lo, y_hi) = valid_range(h, ky, pad);
            for kx in 0..k {
                let (x_lo, x_hi) = valid_range(w, kx, pad);
                let row = &cols[((i * k + ky) * k + kx) * h * w..][..h * w];
                for yy in y_lo..y_hi {
                    let sy = yy + ky - pad;
                    let out = &mut dst[sy * w + x_lo + kx - pad..sy * w + x_hi + kx - pad];
                    for (d, &v) in out.iter_mut().zip(&row[yy * w + x_lo..yy * w + x_hi]) {
                        *d += v;
                    }
                }
            }
        }
    }
    dx
}

/// Output coordinates whose source `out + offset - pad` lies in `[0, len)`.
#[inline]
fn valid_range(len: usize, offset: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(offset);
    let hi = (len + pad).saturating_sub(offset).min(len);
    (lo, hi.max(lo))
}

impl<S: Scalar> Module<S> for Conv2d<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Affine map over the leading (feature) axis.
///
/// A rank-1 input `[in]` is a single vector; a rank-3 input `[in, h, w]` is
/// treated as `h * w` column vectors (a 1×1 convolution).
#[derive(Debug, Clone)]
pub struct Dense<S> {
    pub weight: Param<S>,
    pub bias: Param<S>,
    in_dim: usize,
    out_dim: usize,
}

impl<S: Scalar> Dense<S> {
    pub fn new<R: Rng + ?Sized>(name: &str, in_dim: usize, out_dim: usize, gain: f64, rng: &mut R) -> Self {
        Self {
            weight: Param::randn(
                format!("{name}.weight"),
                &[out_dim, in_dim],
                gain * (1.0 / in_dim as f64).sqrt(),
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), &[out_dim]),
            in_dim,
            out_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn out_shape(&self, x: &Tensor<S>) -> Vec<usize> {
        let mut shape = x.shape().to_vec();
        assert_eq!(shape[0], self.in_dim, "dense input features");
        shape[0] = self.out_dim;
        shape
    }

    pub fn forward(&self, x: &Tensor<S>) -> Tensor<S> {
        let n = x.len() / self.in_dim;
        let mut y = Tensor::zeros(&self.out_shape(x));
        {
            let yd = y.data_mut();
            for (o, &b) in self.bias.value.data().iter().enumerate() {
                yd[o * n..(o + 1) * n].iter_mut().for_each(|v| *v = b);
            }
            gemm_nn(self.out_dim, self.in_dim, n, self.weight.value.data(), x.data(), yd);
        }
        y
    }

    pub fn backward(&mut self, x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
        let n = x.len() / self.in_dim;
        self.accumulate_param_grads(x, dy);
        let mut dx = Tensor::zeros(x.shape());
        gemm_tn(self.in_dim, self.out_dim, n, self.weight.value.data(), dy.data(), dx.data_mut());
        dx
    }

    pub fn backward_params(&mut self, x: &Tensor<S>, dy: &Tensor<S>) {
        self.accumulate_param_grads(x, dy);
    }

    fn accumulate_param_grads(&mut self, x: &Tensor<S>, dy: &Tensor<S>) {
        let n = x.len() / self.in_dim;
        let dyd = dy.data();
        for (o, g) in self.bias.grad.data_mut().iter_mut().enumerate() {
            *g += dyd[o * n..(o + 1) * n].iter().copied().sum::<S>();
        }
        gemm_nt(self.out_dim, n, self.in_dim, dyd, x.data(), self.weight.grad.data_mut());
    }
}

impl<S: Scalar> Module<S> for Dense<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[inline]
fn sigmoid<S: Scalar>(v: S) -> S {
    S::one() / (S::one() + (-v).exp())
}

pub fn silu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| v * sigmoid(v))
}

pub fn silu_backward<S: Scalar>(x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    x.zip_map(dy, |v, d| {
        let s = sigmoid(v);
        d * s * (S::one() + v * (S::one() - s))
    })
}

pub fn relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| v.max(S::zero()))
}

pub fn relu_backward<S: Scalar>(x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    x.zip_map(dy, |v, d| if v > S::zero() { d } else { S::zero() })
}

/// 2×2 average pooling; odd trailing rows/columns are dropped.
pub fn avg_pool2<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (c, h, w) = x.chw();
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::of(0.25);
    let xd = x.data();
    let mut y = Tensor::zeros(&[c, oh, ow]);
    let yd = y.data_mut();
    for ch in 0..c {
        for yy in 0..oh {
            for xx in 0..ow {
                let base = ch * h * w;
                let s = xd[base + 2 * yy * w + 2 * xx]
                    + xd[base + 2 * yy * w + 2 * xx + 1]
                    + xd[base + (2 * yy + 1) * w + 2 * xx]
                    + xd[base + (2 * yy + 1) * w + 2 * xx + 1];
                yd[(ch * oh + yy) * ow + xx] = s * quarter;
            }
        }
    }
    y
}

pub fn avg_pool2_backward<S: Scalar>(input_shape: &[usize], dy: &Tensor<S>) -> Tensor<S> {
    let (c, oh, ow) = dy.chw();
    let (h, w) = (input_shape[1], input_shape[2]);
    let quarter = S::of(0.25);
    let mut dx = Tensor::zeros(input_shape);
    let dxd = dx.data_mut();
    for ch in 0..c {
        for yy in 0..oh {
            for xx in 0..ow {
                let g = dy.data()[(ch * oh + yy) * ow + xx] * quarter;
                for (dy_, dx_) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    dxd[ch * h * w + (2 * yy + dy_) * w + 2 * xx + dx_] += g;
                }
            }
        }
    }
    dx
}

/// 2×2 max pooling. Returns the pooled map and the flat argmax index per output.
pub fn max_pool2<S: Scalar>(x: &Tensor<S>) -> (Tensor<S>, Vec<usize>) {
    let (c, h, w) = x.chw();
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut y = Tensor::zeros(&[c, oh, ow]);
    let mut arg = vec![0; c * oh * ow];
    for ch in 0..c {
        for yy in 0..oh {
            for xx in 0..ow {
                let mut best = ch * h * w + 2 * yy * w + 2 * xx;
                for (dy_, dx_) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ch * h * w + (2 * yy + dy_) * w + 2 * xx + dx_;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                let o = (ch * oh + yy) * ow + xx;
                y.data_mut()[o] = xd[best];
                arg[o] = best;
            }
        }
    }
    (y, arg)
}

pub fn max_pool2_backward<S: Scalar>(input_shape: &[usize], argmax: &[usize], dy: &Tensor<S>) -> Tensor<S> {
    let mut dx = Tensor::zeros(input_shape);
    for (&idx, &g) in argmax.iter().zip(dy.data()) {
        dx.data_mut()[idx] += g;
    }
    dx
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (c, h, w) = x.chw();
    let mut y = Tensor::zeros(&[c, 2 * h, 2 * w]);
    let xd = x.data();
    let yd = y.data_mut();
    for ch in 0..c {
        for yy in 0..2 * h {
            for xx in 0..2 * w {
                yd[(ch * 2 * h + yy) * 2 * w + xx] = xd[(ch * h + yy / 2) * w + xx / 2];
            }
        }
    }
    y
}

pub fn upsample2_backward<S: Scalar>(dy: &Tensor<S>) -> Tensor<S> {
    let (c, h2, w2) = dy.chw();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(&[c, h, w]);
    let dyd = dy.data();
    let dxd = dx.data_mut();
    for ch in 0..c {
        for yy in 0..h2 {
            for xx in 0..w2 {
                dxd[(ch * h + yy / 2) * w + xx / 2] += dyd[(ch * h2 + yy) * w2 + xx];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conv_naive(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (c, h, w) = x.chw();
        let k = conv.kernel as isize;
        let pad = k / 2;
        let mut y = Tensor::zeros(&[conv.out_ch, h, w]);
        for o in 0..conv.out_ch {
            for yy in 0..h as isize {
                for xx in 0..w as isize {
                    let mut acc = conv.bias.value.data()[o];
                    for i in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (sy, sx) = (yy + ky - pad, xx + kx - pad);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let wv = conv.weight.value.data()
                                    [((o * c + i) * k as usize + ky as usize) * k as usize + kx as usize];
                                acc += wv * x.data()[(i * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    y.data_mut()[(o * h + yy as usize) * w + xx as usize] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv2d::<f64>::new("c", 2, 3, 3, 1.0, &mut rng);
        conv.bias.value = Tensor::randn(&[3], &mut rng);
        let x = Tensor::randn(&[2, 5, 7], &mut rng);
        assert!(conv.forward(&x).max_abs_diff(&conv_naive(&conv, &x)) < 1e-12);
    }

    #[test]
    fn conv_input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut conv = Conv2d::<f64>::new("c", 2, 2, 3, 1.0, &mut rng);
        let x = Tensor::randn(&[2, 4, 5], &mut rng);
        let probe = Tensor::randn(&[2, 4, 5], &mut rng);
        let loss = |conv: &Conv2d<f64>, x: &Tensor<f64>| {
            conv.forward(x).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let dx = conv.backward(&x, &probe);
        for idx in [0, 7, 19, 33] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += 1e-6;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= 1e-6;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / 2e-6;
            assert!((fd - dx.data()[idx]).abs() < 1e-7);
        }
    }

    #[test]
    fn pooling_and_upsampling_shapes() {
        let x = Tensor::<f32>::from_vec(&[1, 2, 2], vec![1., 4., 2., 3.]);
        assert_eq!(avg_pool2(&x).data(), &[2.5]);
        let (m, arg) = max_pool2(&x);
        assert_eq!(m.data(), &[4.0]);
        assert_eq!(arg, vec![1]);
        assert_eq!(upsample2(&m).data(), &[4.0; 4]);
        assert_eq!(upsample2_backward(&Tensor::full(&[1, 2, 2], 1.0f32)).data(), &[4.0]);
    }
}
