use super::conditions::{BranchKeep, ConditionBundle};
use super::network::Generator;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A noise-prediction network `eps_theta(x_t, conditions, t)`.
///
/// Implementations must be shareable across threads for concurrent sampling.
pub trait NoisePredictor<S: Scalar>: Sync {
    fn predict(&self, x_t: &Tensor<S>, bundle: &ConditionBundle<S>, keep: BranchKeep, t: usize) -> Tensor<S>;
}

/// A predictor that can be trained on the noise-matching loss.
pub trait TrainableDenoiser<S: Scalar>: NoisePredictor<S> {
    /// Predicts the noise and adds `weight * d|pred - eps|^2 / dtheta` to the
    /// gradient accumulators. Returns the prediction.
    fn forward_backward(
        &mut self,
        x_t: &Tensor<S>,
        bundle: &ConditionBundle<S>,
        keep: BranchKeep,
        t: usize,
        eps: &Tensor<S>,
        weight: S,
    ) -> Tensor<S>;

    /// Applies one optimizer step from the accumulated gradients and clears them.
    fn apply_update(&mut self);
}

impl<S: Scalar> NoisePredictor<S> for Generator<S> {
    fn predict(&self, x_t: &Tensor<S>, bundle: &ConditionBundle<S>, keep: BranchKeep, t: usize) -> Tensor<S> {
        Generator::predict(self, x_t, bundle, keep, t)
    }
}

/// Always predicts zero noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl<S: Scalar> NoisePredictor<S> for ZeroPredictor {
    fn predict(&self, x_t: &Tensor<S>, _: &ConditionBundle<S>, _: BranchKeep, _: usize) -> Tensor<S> {
        Tensor::zeros(x_t.shape())
    }
}

impl<S: Scalar> TrainableDenoiser<S> for ZeroPredictor {
    fn forward_backward(
        &mut self,
        x_t: &Tensor<S>,
        _: &ConditionBundle<S>,
        _: BranchKeep,
        _: usize,
        _: &Tensor<S>,
        _: S,
    ) -> Tensor<S> {
        Tensor::zeros(x_t.shape())
    }

    fn apply_update(&mut self) {}
}

/// A [`Generator`] paired with its Adam state.
#[derive(Debug, Clone)]
pub struct GeneratorTrainer<S> {
    pub generator: Generator<S>,
    pub optimizer: Adam,
}

impl<S: Scalar> GeneratorTrainer<S> {
    pub fn new(generator: Generator<S>, config: AdamConfig) -> Self {
        Self {
            generator,
            optimizer: Adam::new(config),
        }
    }
}

impl<S: Scalar> NoisePredictor<S> for GeneratorTrainer<S> {
    fn predict(&self, x_t: &Tensor<S>, bundle: &ConditionBundle<S>, keep: BranchKeep, t: usize) -> Tensor<S> {
        self.generator.predict(x_t, bundle, keep, t)
    }
}

impl<S: Scalar> TrainableDenoiser<S> for GeneratorTrainer<S> {
    fn forward_backward(
        &mut self,
        x_t: &Tensor<S>,
        bundle: &ConditionBundle<S>,
        keep: BranchKeep,
        t: usize,
        eps: &Tensor<S>,
        weight: S,
    ) -> Tensor<S> {
        self.generator.accumulate_gradients(x_t, bundle, keep, t, eps, weight)
    }

    fn apply_update(&mut self) {
        self.optimizer.step(&mut self.generator);
    }
}

/// Weighted dual-branch prediction:
/// `w * eps(x_t, f_st, i_sm, t) + (1 - w) * eps(x_t, p_st, t)`.
///
/// At `w = 1` and `w = 0` only the corresponding branch is evaluated and
/// returned unchanged.
pub fn cfg_predict<S: Scalar, D: NoisePredictor<S> + ?Sized>(
    model: &D,
    x_t: &Tensor<S>,
    bundle: &ConditionBundle<S>,
    t: usize,
    w: f64,
) -> Result<Tensor<S>> {
    check_weight(w)?;
    if w == 1.0 {
        return Ok(model.predict(x_t, bundle, BranchKeep::IMAGE_ONLY, t));
    }
    if w == 0.0 {
        return Ok(model.predict(x_t, bundle, BranchKeep::POSE_ONLY, t));
    }
    let image = model.predict(x_t, bundle, BranchKeep::IMAGE_ONLY, t);
    let pose = model.predict(x_t, bundle, BranchKeep::POSE_ONLY, t);
    let (wi, wp) = (S::of(w), S::of(1.0 - w));
    Ok(image.zip_map(&pose, |a, b| wi * a + wp * b))
}

pub(crate) fn check_weight(w: f64) -> Result<()> {
    if (0.0..=1.0).contains(&w) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("guidance weight w = {w} outside [0, 1]")))
    }
}

#[cfg(test)]
mod tests {
    use super::super::conditions::{assemble_conditions, random_mask};
    use super::super::network::GeneratorConfig;
    use super::*;
    use crate::pose::{render_skeleton, synth_pose};
    use crate::sample::{Category, Convention, ImageBuffer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (Generator<f64>, ConditionBundle<f64>, Tensor<f64>) {
        let g = Generator::new(GeneratorConfig {
            resolution: 8,
            base_channels: 4,
            ..GeneratorConfig::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = |rng: &mut ChaCha8Rng| {
            let v = (0..192).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
            ImageBuffer::new(8, 8, 3, Convention::Model, v).unwrap()
        };
        let (s, t) = (img(&mut rng), img(&mut rng));
        let a = render_skeleton(&synth_pose(Category::ALL[1], 4), 8, 8);
        let b = render_skeleton(&synth_pose(Category::ALL[5], 4), 8, 8);
        let mask = random_mask(8, 8, &mut rng);
        let bundle = assemble_conditions(&s, &t, &a, &b, &mask, g.encoders()).unwrap();
        let x = Tensor::randn(&[3, 8, 8], &mut rng);
        (g, bundle, x)
    }

    #[test]
    fn endpoints_are_single_branch_predictions() {
        let (g, bundle, x) = fixture();
        let img = g.predict(&x, &bundle, BranchKeep::IMAGE_ONLY, 17);
        let pose = g.predict(&x, &bundle, BranchKeep::POSE_ONLY, 17);
        assert_eq!(cfg_predict(&g, &x, &bundle, 17, 1.0).unwrap(), img);
        assert_eq!(cfg_predict(&g, &x, &bundle, 17, 0.0).unwrap(), pose);
        let mid = cfg_predict(&g, &x, &bundle, 17, 0.5).unwrap();
        let mean = img.zip_map(&pose, |a, b| (a + b) / 2.0);
        assert!(mid.max_abs_diff(&mean) < 1e-6);
        assert!(img.max_abs_diff(&pose) > 1e-6, "branches should differ");
    }

    #[test]
    fn weights_outside_the_unit_interval_are_rejected() {
        let (g, bundle, x) = fixture();
        for w in [-0.01, 1.5, f64::NAN] {
            assert!(matches!(cfg_predict(&g, &x, &bundle, 1, w), Err(Error::Invalid(_))));
        }
    }
}
