//! Dense row-major tensors.
//!
//! Feature maps are stored channel-major as `[channels, height, width]`.
//! Vectors are rank-1 tensors. No broadcasting beyond what the layers need.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Builds a tensor from raw data. Panics if the length does not match the shape.
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length does not match shape {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Standard-normal samples drawn in storage order.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| S::of(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn chw(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected a [c, h, w] tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: S, other: &Self) {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&self, alpha: S) -> Self {
        self.map(|v| v * alpha)
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> S {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(S::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Stacks rank-3 tensors of equal height along the width axis.
    pub fn concat_width(parts: &[&Self]) -> Self {
        assert!(!parts.is_empty());
        let (c, h, _) = parts[0].chw();
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (pc, ph, pw) = p.chw();
                assert_eq!((pc, ph), (c, h), "width concatenation needs equal channels and height");
                pw
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Self::zeros(&[c, h, total]);
        for ch in 0..c {
            for y in 0..h {
                let mut x0 = 0;
                for (p, &pw) in parts.iter().zip(&widths) {
                    let src = &p.data[(ch * h + y) * pw..(ch * h + y + 1) * pw];
                    out.data[(ch * h + y) * total + x0..(ch * h + y) * total + x0 + pw]
                        .copy_from_slice(src);
                    x0 += pw;
                }
            }
        }
        out
    }

    /// Stacks rank-3 tensors of equal spatial size along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Self {
        assert!(!parts.is_empty());
        let (_, h, w) = parts[0].chw();
        let mut c = 0;
        let mut data = Vec::new();
        for p in parts {
            let (pc, ph, pw) = p.chw();
            assert_eq!((ph, pw), (h, w), "channel concatenation needs equal spatial size");
            c += pc;
            data.extend_from_slice(&p.data);
        }
        Self::from_vec(&[c, h, w], data)
    }

    /// Splits a rank-3 tensor along channels into pieces of the given sizes.
    pub fn split_channels(&self, sizes: &[usize]) -> Vec<Self> {
        let (c, h, w) = self.chw();
        assert_eq!(sizes.iter().sum::<usize>(), c);
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &n in sizes {
            out.push(Self::from_vec(
                &[n, h, w],
                self.data[start * h * w..(start + n) * h * w].to_vec(),
            ));
            start += n;
        }
        out
    }

    /// Columns `[x0, x0 + width)` of a rank-3 tensor.
    pub fn crop_width(&self, x0: usize, width: usize) -> Self {
        let (c, h, w) = self.chw();
        assert!(x0 + width <= w);
        let mut data = Vec::with_capacity(c * h * width);
        for row in 0..c * h {
            data.extend_from_slice(&self.data[row * w + x0..row * w + x0 + width]);
        }
        Self::from_vec(&[c, h, width], data)
    }

    /// Inverse of [`Tensor::crop_width`]: adds `self` into columns of `target`.
    pub fn add_into_width(&self, target: &mut Self, x0: usize) {
        let (c, h, width) = self.chw();
        let (tc, th, tw) = target.chw();
        assert_eq!((c, h), (tc, th));
        assert!(x0 + width <= tw);
        for row in 0..c * h {
            for x in 0..width {
                target.data[row * tw + x0 + x] += self.data[row * width + x];
            }
        }
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| T::of(v.to_f64_lossy())).collect(),
        }
    }
}
