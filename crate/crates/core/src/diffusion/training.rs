use rand::Rng;

use super::conditions::{BranchKeep, ConditionBundle};
use super::guidance::{NoisePredictor, TrainableDenoiser};
use super::schedule::{forward_noise, NoiseSchedule};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default per-branch condition drop probability.
pub const DEFAULT_DROP_PROB: f64 = 0.1;

/// A clean target image with its conditions.
#[derive(Debug, Clone)]
pub struct TrainExample<S> {
    pub x0: Tensor<S>,
    pub bundle: ConditionBundle<S>,
}

/// The random quantities of one training term: timestep, noise, and which
/// branches survive dropping.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw<S> {
    pub t: usize,
    pub eps: Tensor<S>,
    pub keep: BranchKeep,
}

pub(crate) fn check_drop_prob(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("drop_prob = {p} outside [0, 1)")))
    }
}

/// Draws `t` uniformly from `1..T`, standard normal noise, and drops each
/// branch independently with probability `drop_prob`.
pub fn draw_noise<S: Scalar, R: Rng + ?Sized>(
    batch: &[TrainExample<S>],
    schedule: &NoiseSchedule<S>,
    drop_prob: f64,
    rng: &mut R,
) -> Result<Vec<NoiseDraw<S>>> {
    check_drop_prob(drop_prob)?;
    Ok(batch
        .iter()
        .map(|ex| {
            let t = rng.gen_range(1..schedule.len());
            let eps = Tensor::randn(ex.x0.shape(), rng);
            let keep = BranchKeep {
                image: rng.gen::<f64>() >= drop_prob,
                pose: rng.gen::<f64>() >= drop_prob,
            };
            NoiseDraw { t, eps, keep }
        })
        .collect())
}

fn check_batch<S: Scalar>(batch: &[TrainExample<S>], draws: &[NoiseDraw<S>]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.len() != draws.len() {
        return Err(Error::SizeMismatch(format!(
            "{} examples but {} noise draws",
            batch.len(),
            draws.len()
        )));
    }
    Ok(())
}

fn squared_error<S: Scalar>(pred: &Tensor<S>, eps: &Tensor<S>) -> S {
    pred.data()
        .iter()
        .zip(eps.data())
        .map(|(&p, &e)| (p - e) * (p - e))
        .sum()
}

/// Mean over batch and pixels of `|eps - eps_theta(x_t, ..., t)|^2` for
/// fixed draws, without touching parameters.
pub fn batch_loss<S: Scalar, D: NoisePredictor<S> + ?Sized>(
    batch: &[TrainExample<S>],
    model: &D,
    schedule: &NoiseSchedule<S>,
    draws: &[NoiseDraw<S>],
) -> Result<S> {
    check_batch(batch, draws)?;
    let mut total = S::zero();
    let mut count = 0usize;
    for (ex, d) in batch.iter().zip(draws) {
        let x_t = forward_noise(&ex.x0, d.t, &d.eps, schedule)?;
        total += squared_error(&model.predict(&x_t, &ex.bundle, d.keep, d.t), &d.eps);
        count += d.eps.len();
    }
    Ok(total / S::of(count as f64))
}

/// One optimizer step on the noise-matching loss with the given draws.
/// Returns the loss before the update.
pub fn training_step_with<S: Scalar, D: TrainableDenoiser<S> + ?Sized>(
    batch: &[TrainExample<S>],
    model: &mut D,
    schedule: &NoiseSchedule<S>,
    draws: &[NoiseDraw<S>],
) -> Result<S> {
    check_batch(batch, draws)?;
    let count: usize = draws.iter().map(|d| d.eps.len()).sum();
    let weight = S::one() / S::of(count as f64);
    let mut total = S::zero();
    for (ex, d) in batch.iter().zip(draws) {
        let x_t = forward_noise(&ex.x0, d.t, &d.eps, schedule)?;
        let pred = model.forward_backward(&x_t, &ex.bundle, d.keep, d.t, &d.eps, weight);
        total += squared_error(&pred, &d.eps);
    }
    model.apply_update();
    Ok(total * weight)
}

/// Samples timesteps, noise and branch drops, then takes one optimizer step.
pub fn training_step<S: Scalar, D: TrainableDenoiser<S> + ?Sized, R: Rng + ?Sized>(
    batch: &[TrainExample<S>],
    model: &mut D,
    schedule: &NoiseSchedule<S>,
    drop_prob: f64,
    rng: &mut R,
) -> Result<S> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let draws = draw_noise(batch, schedule, drop_prob, rng)?;
    training_step_with(batch, model, schedule, &draws)
}

#[cfg(test)]
mod tests {
    use super::super::conditions::{assemble_conditions, random_mask};
    use super::super::guidance::{GeneratorTrainer, ZeroPredictor};
    use super::super::network::{Generator, GeneratorConfig};
    use super::*;
    use crate::nn::{AdamConfig, Module};
    use crate::pose::{render_skeleton, synth_pose};
    use crate::sample::{Category, Convention, ImageBuffer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Returns exactly the noise it is asked to match.
    struct PerfectStub;

    impl NoisePredictor<f64> for PerfectStub {
        fn predict(&self, x: &Tensor<f64>, _: &ConditionBundle<f64>, _: BranchKeep, _: usize) -> Tensor<f64> {
            Tensor::zeros(x.shape())
        }
    }

    impl TrainableDenoiser<f64> for PerfectStub {
        fn forward_backward(
            &mut self,
            _: &Tensor<f64>,
            _: &ConditionBundle<f64>,
            _: BranchKeep,
            _: usize,
            eps: &Tensor<f64>,
            _: f64,
        ) -> Tensor<f64> {
            eps.clone()
        }
        fn apply_update(&mut self) {}
    }

    fn batch(g: &Generator<f64>, n: usize, seed: u64) -> Vec<TrainExample<f64>> {
        let r = g.config().resolution;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let mut img = || {
                    let v = (0..3 * r * r).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
                    ImageBuffer::new(r, r, 3, Convention::Model, v).unwrap()
                };
                let (s, t) = (img(), img());
                let a = render_skeleton(&synth_pose(Category::ALL[i % 10], i as u64), r, r);
                let b = render_skeleton(&synth_pose(Category::ALL[(i + 3) % 10], i as u64), r, r);
                let mask = random_mask(r, r, &mut rng);
                let bundle = assemble_conditions(&s, &t, &a, &b, &mask, g.encoders()).unwrap();
                TrainExample { x0: t.to_tensor(), bundle }
            })
            .collect()
    }

    fn mini() -> Generator<f64> {
        Generator::new(GeneratorConfig {
            resolution: 8,
            base_channels: 4,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn perfect_predictor_has_zero_loss() {
        let s = NoiseSchedule::linear(200, 1e-4, 2e-2).unwrap();
        let b = batch(&mini(), 4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(training_step(&b, &mut PerfectStub, &s, 0.1, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn zero_predictor_loss_is_near_one() {
        let s = NoiseSchedule::linear(200, 1e-4, 2e-2).unwrap();
        // 24 images of 3x8x8 = 4608 pixels
        let b = batch(&mini(), 24, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let loss = training_step(&b, &mut ZeroPredictor, &s, 0.1, &mut rng).unwrap();
        assert!((0.9..=1.1).contains(&loss), "{loss}");
    }

    #[test]
    fn empty_batch_and_bad_drop_prob_are_errors() {
        let s = NoiseSchedule::<f64>::linear(10, 1e-4, 2e-2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            training_step::<f64, _, _>(&[], &mut ZeroPredictor, &s, 0.1, &mut rng),
            Err(Error::EmptyBatch)
        ));
        let b = batch(&mini(), 1, 0);
        assert!(training_step(&b, &mut ZeroPredictor, &s, 1.0, &mut rng).is_err());
        assert!(training_step(&b, &mut ZeroPredictor, &s, -0.1, &mut rng).is_err());
    }

    #[test]
    fn reported_loss_matches_batch_loss_before_update() {
        let s = NoiseSchedule::linear(50, 1e-4, 2e-2).unwrap();
        let g = mini();
        let b = batch(&g, 3, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws = draw_noise(&b, &s, 0.3, &mut rng).unwrap();
        let before = batch_loss(&b, &g, &s, &draws).unwrap();
        let mut trainer = GeneratorTrainer::new(g, AdamConfig::adam(1e-3, 0.0));
        let reported = training_step_with(&b, &mut trainer, &s, &draws).unwrap();
        assert!((before - reported).abs() < 1e-12);
        let after = batch_loss(&b, &trainer.generator, &s, &draws).unwrap();
        assert_ne!(before, after);
        assert!(trainer.generator.num_params() > 0);
    }
}
