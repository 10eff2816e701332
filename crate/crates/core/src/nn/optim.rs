use super::{Module, Param};
use crate::scalar::Scalar;

/// How weight decay enters the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightDecay {
    /// Added to the gradient before the moment estimates (classic Adam).
    L2,
    /// Applied directly to the weights, outside the moments (AdamW).
    Decoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_mode: WeightDecay,
}

impl AdamConfig {
    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            decay_mode: WeightDecay::Decoupled,
        }
    }

    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        Self {
            decay_mode: WeightDecay::L2,
            ..Self::adamw(lr, weight_decay)
        }
    }
}

/// Adam-family optimizer. Moment buffers live in each [`Param`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update over every parameter the module exposes, then clears gradients.
    pub fn step<S: Scalar, M: Module<S> + ?Sized>(&mut self, module: &mut M) {
        self.steps += 1;
        let cfg = self.config;
        let t = self.steps as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        module.visit_params_mut(&mut |p: &mut Param<S>| {
            let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
            let (lr, eps, wd) = (S::of(cfg.lr), S::of(cfg.eps), S::of(cfg.weight_decay));
            let (bc1, bc2) = (S::of(bc1), S::of(bc2));
            let Param { value, grad, m, v, .. } = p;
            for (((w, g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data_mut().iter_mut())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                let mut gv = *g;
                match cfg.decay_mode {
                    WeightDecay::L2 => gv += wd * *w,
                    WeightDecay::Decoupled => *w -= lr * wd * *w,
                }
                *m = b1 * *m + (S::one() - b1) * gv;
                *v = b2 * *v + (S::one() - b2) * gv * gv;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
                *g = S::zero();
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    struct One(Param<f64>);
    impl Module<f64> for One {
        fn visit_params(&self, f: &mut dyn FnMut(&Param<f64>)) {
            f(&self.0)
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<f64>)) {
            f(&mut self.0)
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut m = One(Param::new("p", Tensor::from_vec(&[2], vec![1.0, -1.0])));
        m.0.grad = Tensor::from_vec(&[2], vec![0.3, -2.0]);
        let mut opt = Adam::new(AdamConfig::adam(0.1, 0.0));
        opt.step(&mut m);
        let v = m.0.value.data();
        assert!((v[0] - 0.9).abs() < 1e-6 && (v[1] + 0.9).abs() < 1e-6);
        assert_eq!(m.0.grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn decoupled_decay_shrinks_weights_without_gradient() {
        let mut m = One(Param::new("p", Tensor::from_vec(&[1], vec![2.0])));
        let mut opt = Adam::new(AdamConfig::adamw(0.1, 0.5));
        opt.step(&mut m);
        assert!((m.0.value.data()[0] - 1.9).abs() < 1e-12);
    }
}
