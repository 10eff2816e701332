use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{f1_macro, EvalResult};
use crate::error::{Error, Result};
use crate::nn::{
    export_params, import_params, max_pool2, max_pool2_backward, relu, relu_backward, Adam, AdamConfig, Conv2d,
    Dense, Module, NamedParam, Param,
};
use crate::sample::{per_class_counts, Category, DatasetManifest, NUM_CATEGORIES};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// Three conv/relu/max-pool stages and a two-layer head, about 0.1M
    /// parameters at 32×32. Larger backbones would slot in here.
    #[default]
    SmallCnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub backbone: Backbone,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            lr: 1e-4,
            weight_decay: 1e-2,
            seed: 0,
            backbone: Backbone::SmallCnn,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Invalid(format!("weight decay {} must be >= 0", self.weight_decay)));
        }
        Ok(())
    }
}

const WIDTHS: [usize; 3] = [16, 32, 64];
const HIDDEN: usize = 64;

#[derive(Debug, Clone)]
pub struct SmallCnn<S> {
    convs: Vec<Conv2d<S>>,
    fc1: Dense<S>,
    fc2: Dense<S>,
    resolution: usize,
}

struct Trace<S> {
    /// Input to each conv, then its pre-activation and pooling argmax.
    inputs: Vec<Tensor<S>>,
    pre: Vec<Tensor<S>>,
    argmax: Vec<Vec<usize>>,
    flat: Tensor<S>,
    hidden_pre: Tensor<S>,
    hidden: Tensor<S>,
    logits: Tensor<S>,
}

impl<S: Scalar> SmallCnn<S> {
    /// `resolution` must be a positive multiple of 8.
    pub fn new(resolution: usize, seed: u64) -> Result<Self> {
        if resolution == 0 || !resolution.is_multiple_of(8) {
            return Err(Error::Invalid(format!(
                "classifier resolution {resolution} must be a positive multiple of 8"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::new();
        let mut c_in = 3;
        for (i, &c) in WIDTHS.iter().enumerate() {
            convs.push(Conv2d::new(&format!("cls.conv{i}"), c_in, c, 3, 1.0, &mut rng));
            c_in = c;
        }
        let side = resolution / 8;
        Ok(Self {
            convs,
            fc1: Dense::new("cls.fc1", c_in * side * side, HIDDEN, 2f64.sqrt(), &mut rng),
            fc2: Dense::new("cls.fc2", HIDDEN, NUM_CATEGORIES, 1.0, &mut rng),
            resolution,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    fn trace(&self, x: &Tensor<S>) -> Trace<S> {
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        let mut argmax = Vec::new();
        let mut h = x.clone();
        for conv in &self.convs {
            let z = conv.forward(&h);
            let (p, arg) = max_pool2(&relu(&z));
            inputs.push(h);
            pre.push(z);
            argmax.push(arg);
            h = p;
        }
        let n = h.len();
        let flat = h.reshape(&[n]);
        let hidden_pre = self.fc1.forward(&flat);
        let hidden = relu(&hidden_pre);
        let logits = self.fc2.forward(&hidden);
        Trace {
            inputs,
            pre,
            argmax,
            flat,
            hidden_pre,
            hidden,
            logits,
        }
    }

    /// Class logits for a `[3, r, r]` model-convention image.
    pub fn logits(&self, x: &Tensor<S>) -> Tensor<S> {
        self.trace(x).logits
    }

    pub fn predict(&self, x: &Tensor<S>) -> Category {
        let logits = self.logits(x);
        let best = logits
            .data()
            .iter()
            .enumerate()
            .fold(0, |b, (i, v)| if *v > logits.data()[b] { i } else { b });
        Category::ALL[best]
    }

    /// Cross-entropy of one example; gradients scaled by `weight` are added
    /// to the parameter buffers.
    pub fn accumulate_gradients(&mut self, x: &Tensor<S>, label: Category, weight: S) -> S {
        let tr = self.trace(x);
        let probs = softmax(tr.logits.data());
        let loss = -probs[label.id()].max(S::min_positive_value()).ln();
        let mut dlogits = Tensor::from_vec(&[NUM_CATEGORIES], probs);
        dlogits.data_mut()[label.id()] -= S::one();
        let dlogits = dlogits.scale(weight);

        let dhidden = self.fc2.backward(&tr.hidden, &dlogits);
        let dhidden_pre = relu_backward(&tr.hidden_pre, &dhidden);
        let dflat = self.fc1.backward(&tr.flat, &dhidden_pre);
        let mut d = dflat;
        for i in (0..self.convs.len()).rev() {
            let z = &tr.pre[i];
            let (c, h, w) = z.chw();
            let dpool = d.reshape(&[c, h / 2, w / 2]);
            let dz = relu_backward(z, &max_pool2_backward(z.shape(), &tr.argmax[i], &dpool));
            d = if i == 0 {
                self.convs[i].backward_params(&tr.inputs[i], &dz);
                Tensor::zeros(&[0])
            } else {
                self.convs[i].backward(&tr.inputs[i], &dz)
            };
        }
        loss
    }
}

fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let m = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let e: Vec<S> = logits.iter().map(|&v| (v - m).exp()).collect();
    let z: S = e.iter().copied().sum();
    e.into_iter().map(|v| v / z).collect()
}

impl<S: Scalar> Module<S> for SmallCnn<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<S>)) {
        for c in &self.convs {
            c.visit_params(f);
        }
        self.fc1.visit_params(f);
        self.fc2.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        for c in &mut self.convs {
            c.visit_params_mut(f);
        }
        self.fc1.visit_params_mut(f);
        self.fc2.visit_params_mut(f);
    }
}

/// Images as model-convention tensors with their labels, in manifest order.
/// Every image must be square with side `resolution` and 3 channels.
pub fn load_examples<S: Scalar>(
    manifest: &DatasetManifest,
    resolution: usize,
) -> Result<(Vec<Tensor<S>>, Vec<Category>)> {
    let mut xs = Vec::with_capacity(manifest.len());
    let mut ys = Vec::with_capacity(manifest.len());
    for r in manifest.records() {
        let img = manifest.load_image(r)?;
        if img.width() != resolution || img.height() != resolution || img.channels() != 3 {
            return Err(Error::SizeMismatch(format!(
                "sample {} is {}x{}x{}, classifier expects {resolution}x{resolution}x3",
                r.id(),
                img.width(),
                img.height(),
                img.channels()
            )));
        }
        xs.push(img.to_tensor());
        ys.push(r.category());
    }
    Ok((xs, ys))
}

/// Metrics of `model` on every sample of `manifest`.
pub fn evaluate<S: Scalar>(model: &SmallCnn<S>, manifest: &DatasetManifest) -> Result<EvalResult> {
    if manifest.is_empty() {
        return Err(Error::EmptyInput("evaluation manifest"));
    }
    let (xs, labels) = load_examples::<S>(manifest, model.resolution())?;
    let preds: Vec<Category> = xs.iter().map(|x| model.predict(x)).collect();
    f1_macro(&preds, &labels)
}

/// Trains a fresh classifier on `train` and returns it with its mean
/// training loss per epoch. Single-threaded, so the result depends only on
/// the inputs and `config.seed`.
pub fn fit<S: Scalar>(train: &DatasetManifest, config: &TrainConfig) -> Result<(SmallCnn<S>, Vec<f64>)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training manifest"));
    }
    let counts = per_class_counts(train);
    if let Some((c, _)) = counts.iter().find(|(_, n)| *n == 0) {
        return Err(Error::MissingClass(c.code()));
    }
    let resolution = train.load_image(&train.records()[0])?.width();
    let Backbone::SmallCnn = config.backbone;
    let mut model = SmallCnn::<S>::new(resolution, config.seed)?;
    let (xs, ys) = load_examples::<S>(train, resolution)?;
    let mut opt = Adam::new(AdamConfig::adamw(config.lr, config.weight_decay));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x636c_6173);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let weight = S::of(1.0 / chunk.len() as f64);
            for &i in chunk {
                total += model.accumulate_gradients(&xs[i], ys[i], weight).to_f64_lossy();
            }
            opt.step(&mut model);
        }
        history.push(total / xs.len() as f64);
    }
    Ok((model, history))
}

/// [`fit`] on `train`, then [`evaluate`] on `eval`.
pub fn train_classifier<S: Scalar>(
    train: &DatasetManifest,
    eval: &DatasetManifest,
    config: &TrainConfig,
) -> Result<(SmallCnn<S>, EvalResult)> {
    if eval.is_empty() {
        return Err(Error::EmptyInput("evaluation manifest"));
    }
    let (model, _) = fit(train, config)?;
    let result = evaluate(&model, eval)?;
    Ok((model, result))
}

pub const CLASSIFIER_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifierFile {
    format_version: u32,
    backbone: Backbone,
    resolution: usize,
    params: Vec<NamedParam>,
}

pub fn save_classifier<S: Scalar>(model: &SmallCnn<S>, path: &Path) -> Result<()> {
    let file = ClassifierFile {
        format_version: CLASSIFIER_FORMAT_VERSION,
        backbone: Backbone::SmallCnn,
        resolution: model.resolution,
        params: export_params(model),
    };
    let text = serde_json::to_string(&file).expect("classifier serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_classifier<S: Scalar>(path: &Path) -> Result<SmallCnn<S>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ClassifierFile = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if file.format_version != CLASSIFIER_FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: file.format_version,
            expected: CLASSIFIER_FORMAT_VERSION,
        });
    }
    let mut model = SmallCnn::new(file.resolution, 0)?;
    import_params(&mut model, &file.params)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn saved_classifier_predicts_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cls.json");
        let m = SmallCnn::<f32>::new(16, 4).unwrap();
        save_classifier(&m, &path).unwrap();
        let back = load_classifier::<f32>(&path).unwrap();
        let x = Tensor::<f32>::randn(&[3, 16, 16], &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(m.logits(&x).data(), back.logits(&x).data());
    }

    #[test]
    fn defaults_and_parameter_budget() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.lr, c.weight_decay), (20, 16, 1e-4, 1e-2));
        let m = SmallCnn::<f32>::new(32, 0).unwrap();
        let n = m.num_params();
        assert!((50_000..150_000).contains(&n), "{n}");
        assert!(SmallCnn::<f32>::new(20, 0).is_err());
    }

    #[test]
    fn softmax_is_shift_invariant_and_normalized() {
        let a = softmax(&[1.0f64, 2.0, 3.0]);
        let b = softmax(&[1001.0f64, 1002.0, 1003.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut m = SmallCnn::<f64>::new(8, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f64>::randn(&[3, 8, 8], &mut rng);
        let label = Category::ALL[4];
        m.zero_grad();
        m.accumulate_gradients(&x, label, 1.0);
        let mut analytic = Vec::new();
        m.visit_params(&mut |p| analytic.push(p.grad.data().to_vec()));
        let loss = |m: &mut SmallCnn<f64>| {
            let probs = softmax(m.logits(&x).data());
            -probs[label.id()].ln()
        };
        for _ in 0..40 {
            let pi = rng.gen_range(0..analytic.len());
            let k = rng.gen_range(0..analytic[pi].len());
            let h = 1e-5;
            let bump = |m: &mut SmallCnn<f64>, d: f64| {
                let mut idx = 0;
                m.visit_params_mut(&mut |p| {
                    if idx == pi {
                        p.value.data_mut()[k] += d;
                    }
                    idx += 1;
                });
            };
            bump(&mut m, h);
            let up = loss(&mut m);
            bump(&mut m, -2.0 * h);
            let down = loss(&mut m);
            bump(&mut m, h);
            let fd = (up - down) / (2.0 * h);
            let a = analytic[pi][k];
            assert!((fd - a).abs() <= 1e-6 + 1e-4 * fd.abs().max(a.abs()), "{fd} vs {a}");
        }
    }
}
