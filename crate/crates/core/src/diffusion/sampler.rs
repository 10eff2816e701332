use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::conditions::ConditionBundle;
use super::guidance::{cfg_predict, check_weight, NoisePredictor};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::sample::ImageBuffer;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Guidance weight in `[0, 1]`: 1 uses only the image-semantic branch,
    /// 0 only the pose branch.
    pub w: f64,
    /// Number of denoising steps, strided over the schedule.
    pub steps: usize,
    pub seed: u64,
    /// Deterministic update rule when set; otherwise fresh noise is injected
    /// at every step (still reproducible from `seed`).
    pub deterministic: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            w: 0.5,
            steps: 20,
            seed: 0,
            deterministic: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        check_weight(self.w)?;
        if self.steps < 1 {
            return Err(Error::Invalid("sampling needs at least 1 step".into()));
        }
        Ok(())
    }
}

/// Descending timesteps visited by the sampler: `steps` values spread
/// evenly from `T - 1` down to 1 (fewer if the schedule is shorter).
pub fn timesteps(schedule_len: usize, steps: usize) -> Vec<usize> {
    let top = schedule_len.saturating_sub(1);
    if top == 0 || steps == 0 {
        return Vec::new();
    }
    let n = steps.min(top);
    if n == 1 {
        return vec![top];
    }
    let mut ts: Vec<usize> = (0..n)
        .map(|i| 1 + ((top - 1) as f64 * (n - 1 - i) as f64 / (n - 1) as f64).round() as usize)
        .collect();
    ts.dedup();
    ts
}

/// Random stream for image `index` of a run seeded with `seed`.
pub fn image_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Reverse process from pure noise. Each step predicts the clean image
/// (clamped to `[-1, 1]`) from the guided noise estimate and moves to the
/// next visited timestep; the last step lands on the clean image.
pub fn sample_tensor<S: Scalar, D: NoisePredictor<S> + ?Sized>(
    model: &D,
    bundle: &ConditionBundle<S>,
    schedule: &NoiseSchedule<S>,
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<S>> {
    config.validate()?;
    let shape = bundle.image_shape();
    let mut x = Tensor::<S>::randn(&shape, rng);
    let ts = timesteps(schedule.len(), config.steps);
    let (lo, hi) = (-S::one(), S::one());
    for (k, &t) in ts.iter().enumerate() {
        let ab = schedule.alpha_bar(t)?;
        let ab_prev = match ts.get(k + 1) {
            Some(&next) => schedule.alpha_bar(next)?,
            None => S::one(),
        };
        let eps = cfg_predict(model, &x, bundle, t, config.w)?;
        let (sa, sn) = (ab.sqrt(), (S::one() - ab).sqrt());
        let x0 = x.zip_map(&eps, |xv, e| ((xv - sn * e) / sa).max(lo).min(hi));
        // keep the noise direction consistent with the clamped estimate
        let eps = x.zip_map(&x0, |xv, a| (xv - sa * a) / sn);
        let sigma = if config.deterministic {
            S::zero()
        } else {
            ((S::one() - ab_prev) / (S::one() - ab) * (S::one() - ab / ab_prev)).sqrt()
        };
        let dir = (S::one() - ab_prev - sigma * sigma).max(S::zero()).sqrt();
        let sp = ab_prev.sqrt();
        x = x0.zip_map(&eps, |a, e| sp * a + dir * e);
        if sigma > S::zero() {
            for v in x.data_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v += sigma * S::of(z);
            }
        }
    }
    Ok(x.map(|v| v.max(lo).min(hi)))
}

/// Generates one image with the stream for index 0 of `config.seed`.
pub fn sample<S: Scalar, D: NoisePredictor<S> + ?Sized>(
    model: &D,
    bundle: &ConditionBundle<S>,
    schedule: &NoiseSchedule<S>,
    config: &SamplerConfig,
) -> Result<ImageBuffer> {
    let mut rng = image_rng(config.seed, 0);
    ImageBuffer::from_tensor(&sample_tensor(model, bundle, schedule, config, &mut rng)?)
}

/// Generates one image per bundle; image `i` uses stream `i` of
/// `config.seed`, so results do not depend on `threads`.
pub fn sample_many<S: Scalar, D: NoisePredictor<S> + ?Sized>(
    model: &D,
    bundles: &[ConditionBundle<S>],
    schedule: &NoiseSchedule<S>,
    config: &SamplerConfig,
    threads: usize,
) -> Result<Vec<ImageBuffer>> {
    config.validate()?;
    let one = |i: usize| {
        let mut rng = image_rng(config.seed, i as u64);
        ImageBuffer::from_tensor(&sample_tensor(model, &bundles[i], schedule, config, &mut rng)?)
    };
    let threads = threads.clamp(1, bundles.len().max(1));
    if threads == 1 {
        return (0..bundles.len()).map(one).collect();
    }
    let mut slots: Vec<Option<Result<ImageBuffer>>> = (0..bundles.len()).map(|_| None).collect();
    let chunk = bundles.len().div_ceil(threads);
    std::thread::scope(|scope| {
        for (c, part) in slots.chunks_mut(chunk).enumerate() {
            let one = &one;
            scope.spawn(move || {
                for (j, slot) in part.iter_mut().enumerate() {
                    *slot = Some(one(c * chunk + j));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::super::conditions::{assemble_conditions, random_mask};
    use super::super::guidance::ZeroPredictor;
    use super::super::network::{Generator, GeneratorConfig};
    use super::*;
    use crate::pose::{render_skeleton, synth_pose};
    use crate::sample::{Category, Convention};
    use rand::Rng;

    fn bundle(g: &Generator<f64>) -> ConditionBundle<f64> {
        let r = g.config().resolution;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut img = || {
            let v = (0..3 * r * r).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
            ImageBuffer::new(r, r, 3, Convention::Model, v).unwrap()
        };
        let (s, t) = (img(), img());
        let a = render_skeleton(&synth_pose(Category::ALL[0], 0), r, r);
        let b = render_skeleton(&synth_pose(Category::ALL[1], 0), r, r);
        let mask = random_mask(r, r, &mut ChaCha8Rng::seed_from_u64(2));
        assemble_conditions(&s, &t, &a, &b, &mask, g.encoders()).unwrap()
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
    fn timesteps_descend_from_the_top() {
        assert_eq!(timesteps(1000, 1), vec![999]);
        let ts = timesteps(1000, 20);
        assert_eq!(ts.len(), 20);
        assert_eq!((ts[0], ts[19]), (999, 1));
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(timesteps(5, 50), vec![4, 3, 2, 1]);
    }

    #[test]
    fn same_seed_same_pixels() {
        let g = mini();
        let b = bundle(&g);
        let s = NoiseSchedule::linear(100, 1e-4, 2e-2).unwrap();
        for deterministic in [true, false] {
            let c = SamplerConfig {
                steps: 5,
                seed: 3,
                deterministic,
                ..SamplerConfig::default()
            };
            assert_eq!(sample(&g, &b, &s, &c).unwrap(), sample(&g, &b, &s, &c).unwrap());
        }
    }

    #[test]
    fn zero_predictor_follows_the_hand_rolled_trajectory() {
        let g = mini();
        let b = bundle(&g);
        let s = NoiseSchedule::<f64>::linear(200, 1e-4, 2e-2).unwrap();
        let c = SamplerConfig {
            steps: 10,
            seed: 9,
            ..SamplerConfig::default()
        };
        let got = sample(&ZeroPredictor, &b, &s, &c).unwrap();

        // Independent loop: with zero noise estimates each step rescales x by
        // sqrt(ab_prev / ab) after clamping the clean estimate.
        let mut rng = image_rng(9, 0);
        let mut x: Vec<f64> = (0..3 * 8 * 8).map(|_| rng.sample(StandardNormal)).collect();
        let ts = timesteps(200, 10);
        for (k, &t) in ts.iter().enumerate() {
            let ab = s.alpha_bars()[t];
            let ab_prev = ts.get(k + 1).map_or(1.0, |&n| s.alpha_bars()[n]);
            for v in x.iter_mut() {
                *v = ab_prev.sqrt() * (*v / ab.sqrt()).clamp(-1.0, 1.0);
            }
        }
        for (a, b) in got.values().iter().zip(&x) {
            assert!((*a as f64 - b.clamp(-1.0, 1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn output_stays_in_model_range() {
        let g = mini();
        let s = NoiseSchedule::linear(50, 1e-4, 2e-2).unwrap();
        let img = sample(&g, &bundle(&g), &s, &SamplerConfig { steps: 3, ..Default::default() }).unwrap();
        assert!(img.values().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_steps_is_an_error() {
        let g = mini();
        let s = NoiseSchedule::linear(50, 1e-4, 2e-2).unwrap();
        let c = SamplerConfig { steps: 0, ..Default::default() };
        assert!(matches!(sample(&g, &bundle(&g), &s, &c), Err(Error::Invalid(_))));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let g = mini();
        let s = NoiseSchedule::linear(50, 1e-4, 2e-2).unwrap();
        let bs = vec![bundle(&g); 3];
        let c = SamplerConfig { steps: 2, seed: 4, ..Default::default() };
        let a = sample_many(&g, &bs, &s, &c, 1).unwrap();
        let b = sample_many(&g, &bs, &s, &c, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }
}
