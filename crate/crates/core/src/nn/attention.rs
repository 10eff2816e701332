use rand::Rng;

use super::linalg::{gemm_nn, gemm_nt, gemm_tn};
use super::{Dense, Module, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Single-head self-attention over the spatial positions of a feature map,
/// with a residual connection: `y = x + Wo · attn(Wq x, Wk x, Wv x)`.
#[derive(Debug, Clone)]
pub struct AttentionBlock<S> {
    query: Dense<S>,
    key: Dense<S>,
    value: Dense<S>,
    out: Dense<S>,
    dim: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<S> {
    x: Tensor<S>,
    q: Tensor<S>,
    k: Tensor<S>,
    v: Tensor<S>,
    attn: Vec<S>,
    mixed: Tensor<S>,
}

impl<S: Scalar> AttentionBlock<S> {
    pub fn new<R: Rng + ?Sized>(name: &str, channels: usize, rng: &mut R) -> Self {
        Self {
            query: Dense::new(&format!("{name}.q"), channels, channels, 1.0, rng),
            key: Dense::new(&format!("{name}.k"), channels, channels, 1.0, rng),
            value: Dense::new(&format!("{name}.v"), channels, channels, 1.0, rng),
            out: Dense::new(&format!("{name}.o"), channels, channels, 0.5, rng),
            dim: channels,
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Tensor<S> {
        self.forward_train(x).0
    }

    pub fn forward_train(&self, x: &Tensor<S>) -> (Tensor<S>, AttentionCache<S>) {
        let (c, h, w) = x.chw();
        assert_eq!(c, self.dim);
        let n = h * w;
        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);
        let scale = S::one() / S::of(c as f64).sqrt();

        // scores[i, j] = q[:, i] · k[:, j]
        let mut attn = vec![S::zero(); n * n];
        gemm_tn(n, c, n, q.data(), k.data(), &mut attn);
        for row in attn.chunks_mut(n) {
            let mut max = S::neg_infinity();
            for v in row.iter_mut() {
                *v *= scale;
                max = max.max(*v);
            }
            let mut total = S::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }

        // mixed[:, i] = sum_j v[:, j] attn[i, j]
        let mut mixed = Tensor::zeros(&[c, h, w]);
        gemm_nt(c, n, n, v.data(), &attn, mixed.data_mut());
        let mut y = self.out.forward(&mixed);
        y.add_assign(x);
        (
            y,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                attn,
                mixed,
            },
        )
    }

    pub fn backward(&mut self, cache: &AttentionCache<S>, dy: &Tensor<S>) -> Tensor<S> {
        let (c, h, w) = cache.x.chw();
        let n = h * w;
        let scale = S::one() / S::of(c as f64).sqrt();
        let dmixed = self.out.backward(&cache.mixed, dy);

        // dv = dmixed · attn
        let mut dv = Tensor::zeros(&[c, h, w]);
        gemm_nn(c, n, n, dmixed.data(), &cache.attn, dv.data_mut());
        // dattn[i, j] = dmixed[:, i] · v[:, j]
        let mut dscore = vec![S::zero(); n * n];
        gemm_tn(n, c, n, dmixed.data(), cache.v.data(), &mut dscore);
        for (drow, arow) in dscore.chunks_mut(n).zip(cache.attn.chunks(n)) {
            let dot: S = drow.iter().zip(arow).map(|(&d, &a)| d * a).sum();
            for (d, &a) in drow.iter_mut().zip(arow) {
                *d = a * (*d - dot) * scale;
            }
        }
        // dq[:, i] = sum_j dscore[i, j] k[:, j];  dk[:, j] = sum_i dscore[i, j] q[:, i]
        let mut dq = Tensor::zeros(&[c, h, w]);
        gemm_nt(c, n, n, cache.k.data(), &dscore, dq.data_mut());
        let mut dk = Tensor::zeros(&[c, h, w]);
        gemm_nn(c, n, n, cache.q.data(), &dscore, dk.data_mut());

        let mut dx = dy.clone();
        dx.add_assign(&self.query.backward(&cache.x, &dq));
        dx.add_assign(&self.key.backward(&cache.x, &dk));
        dx.add_assign(&self.value.backward(&cache.x, &dv));
        dx
    }
}

impl<S: Scalar> Module<S> for AttentionBlock<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        self.query.visit_params(f);
        self.key.visit_params(f);
        self.value.visit_params(f);
        self.out.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        self.query.visit_params_mut(f);
        self.key.visit_params_mut(f);
        self.value.visit_params_mut(f);
        self.out.visit_params_mut(f);
    }
}
