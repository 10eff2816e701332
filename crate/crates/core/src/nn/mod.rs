//! Minimal neural-network toolkit with hand-written backward passes.
//!
//! Layers operate on one sample at a time; batching is a loop that
//! accumulates gradients. Every forward pass that participates in training
//! returns a cache that the matching backward pass consumes.

mod attention;
mod layers;
pub mod linalg;
mod optim;

pub use attention::{AttentionBlock, AttentionCache};
pub use layers::{
    avg_pool2, avg_pool2_backward, max_pool2, max_pool2_backward, relu, relu_backward, silu,
    silu_backward, upsample2, upsample2_backward, Conv2d, Dense,
};
pub use optim::{Adam, AdamConfig, WeightDecay};

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Debug, Clone)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    pub(crate) m: Tensor<S>,
    pub(crate) v: Tensor<S>,
}

impl<S: Scalar> Param<S> {
    pub fn new(name: impl Into<String>, value: Tensor<S>) -> Self {
        let shape = value.shape().to_vec();
        Self {
            name: name.into(),
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            value,
        }
    }

    /// Gaussian init with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(name: impl Into<String>, shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| S::of(std * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Self::new(name, Tensor::from_vec(shape, data))
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, Tensor::zeros(shape))
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = S::zero());
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// Anything that owns parameters.
pub trait Module<S: Scalar> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.numel());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }
}

/// SHA-256 over parameter names and little-endian values, in visit order.
pub fn param_checksum<S: Scalar, M: Module<S> + ?Sized>(module: &M) -> String {
    let mut hasher = Sha256::new();
    module.visit_params(&mut |p| {
        hasher.update(p.name.as_bytes());
        for &v in p.value.data() {
            hasher.update(v.le_bytes());
        }
    });
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// A parameter as stored in checkpoint files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn export_params<S: Scalar, M: Module<S> + ?Sized>(module: &M) -> Vec<NamedParam> {
    let mut out = Vec::new();
    module.visit_params(&mut |p| {
        out.push(NamedParam {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            values: p.value.data().iter().map(|v| v.to_f64_lossy()).collect(),
        })
    });
    out
}

/// Overwrites every parameter of `module` from `saved`, matched by name.
/// Missing, extra or misshapen entries are checkpoint errors.
pub fn import_params<S: Scalar, M: Module<S> + ?Sized>(module: &mut M, saved: &[NamedParam]) -> Result<()> {
    let mut by_name: HashMap<&str, &NamedParam> = saved.iter().map(|p| (p.name.as_str(), p)).collect();
    let mut problem = None;
    module.visit_params_mut(&mut |p| match by_name.remove(p.name.as_str()) {
        Some(s) if s.shape == p.value.shape() && s.values.len() == p.numel() => {
            p.value = Tensor::from_vec(&s.shape, s.values.iter().map(|&v| S::of(v)).collect());
        }
        Some(_) => {
            problem.get_or_insert(format!("parameter {} has the wrong shape", p.name));
        }
        None => {
            problem.get_or_insert(format!("parameter {} is missing", p.name));
        }
    });
    if let Some(msg) = problem {
        return Err(Error::Checkpoint(msg));
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::Checkpoint(format!("unknown parameter {extra}")));
    }
    Ok(())
}
