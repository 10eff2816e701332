use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Variance schedule of the forward noising process.
///
/// `alpha_bar[t]` is the signal fraction left after `t` noising steps, so
/// `alpha_bar[0] = 1` (a clean image) and `alpha_bar[t] = prod_{s < t} (1 - beta[s])`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<S> {
    betas: Vec<S>,
    alphas: Vec<S>,
    alpha_bars: Vec<S>,
}

/// Serializable description of a linear schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            beta_min: 1e-4,
            beta_max: 2e-2,
        }
    }
}

impl ScheduleConfig {
    pub fn build<S: Scalar>(&self) -> Result<NoiseSchedule<S>> {
        NoiseSchedule::linear(self.steps, self.beta_min, self.beta_max)
    }
}

impl<S: Scalar> NoiseSchedule<S> {
    /// Betas spaced linearly from `beta_min` to `beta_max` over `steps` steps.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Invalid(format!("schedule needs at least 2 steps, got {steps}")));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Invalid(format!(
                "beta range must satisfy 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let betas = (0..steps)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Invalid(format!("beta {b} outside (0, 1)")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0f64;
        for b in &betas {
            alpha_bars.push(S::of(prod));
            prod *= 1.0 - b;
        }
        Ok(Self {
            alphas: betas.iter().map(|b| S::of(1.0 - b)).collect(),
            betas: betas.into_iter().map(S::of).collect(),
            alpha_bars,
        })
    }

    /// Number of steps `T`; valid step indices are `0..T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[S] {
        &self.betas
    }

    pub fn alphas(&self) -> &[S] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[S] {
        &self.alpha_bars
    }

    pub fn alpha_bar(&self, t: usize) -> Result<S> {
        self.alpha_bars
            .get(t)
            .copied()
            .ok_or(Error::StepOutOfRange { t, steps: self.len() })
    }

    /// Signal-to-noise ratio `alpha_bar / (1 - alpha_bar)`; infinite at `t = 0`.
    pub fn snr(&self, t: usize) -> Result<S> {
        let ab = self.alpha_bar(t)?;
        Ok(ab / (S::one() - ab))
    }
}

/// `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_noise<S: Scalar>(
    x0: &Tensor<S>,
    t: usize,
    eps: &Tensor<S>,
    schedule: &NoiseSchedule<S>,
) -> Result<Tensor<S>> {
    let ab = schedule.alpha_bar(t)?;
    if x0.shape() != eps.shape() {
        return Err(Error::SizeMismatch(format!(
            "x0 {:?} vs noise {:?}",
            x0.shape(),
            eps.shape()
        )));
    }
    let (a, b) = (ab.sqrt(), (S::one() - ab).sqrt());
    Ok(x0.zip_map(eps, |x, e| a * x + b * e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_schedule_invariants() {
        let s: NoiseSchedule<f64> = ScheduleConfig::default().build().unwrap();
        assert_eq!(s.len(), 200);
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
        assert!(s.betas().iter().all(|&b| b > 0.0));
        for t in 1..s.len() {
            assert!(s.alpha_bars()[t] < s.alpha_bars()[t - 1]);
            assert!(s.snr(t).unwrap() < s.snr(t - 1).unwrap());
        }
        assert!((s.betas()[0] - 1e-4).abs() < 1e-15 && (s.betas()[199] - 2e-2).abs() < 1e-15);
        assert!(s.alpha_bar(199).unwrap() < 0.2);
    }

    #[test]
    fn clean_step_returns_input_exactly() {
        let s = NoiseSchedule::<f32>::linear(200, 1e-4, 2e-2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = Tensor::randn(&[3, 4, 4], &mut rng).map(|v: f32| v.clamp(-1.0, 1.0));
        let eps = Tensor::randn(&[3, 4, 4], &mut rng);
        assert_eq!(forward_noise(&x0, 0, &eps, &s).unwrap(), x0);
    }

    #[test]
    fn zero_signal_leaves_scaled_noise() {
        let s = NoiseSchedule::<f64>::linear(200, 1e-4, 2e-2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let eps = Tensor::randn(&[1, 3, 3], &mut rng);
        for t in [1, 57, 199] {
            let xt = forward_noise(&Tensor::zeros(&[1, 3, 3]), t, &eps, &s).unwrap();
            let k = (1.0 - s.alpha_bar(t).unwrap()).sqrt();
            for (a, e) in xt.data().iter().zip(eps.data()) {
                assert_eq!(*a, k * e);
            }
        }
    }

    #[test]
    fn out_of_range_step_is_an_error() {
        let s = NoiseSchedule::<f64>::linear(10, 1e-4, 2e-2).unwrap();
        let x = Tensor::zeros(&[1, 1, 1]);
        assert!(matches!(
            forward_noise(&x, 10, &x, &s),
            Err(Error::StepOutOfRange { t: 10, steps: 10 })
        ));
    }

    #[test]
    fn bad_beta_ranges_are_rejected() {
        assert!(NoiseSchedule::<f64>::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::<f64>::linear(10, 0.03, 0.02).is_err());
        assert!(NoiseSchedule::<f64>::linear(1, 1e-4, 0.02).is_err());
    }

    proptest! {
        #[test]
        fn noising_is_jointly_linear(
            a in -2.0f64..2.0, b in -2.0f64..2.0, t in 0usize..100, seed in any::<u64>()
        ) {
            let s = NoiseSchedule::<f64>::linear(100, 1e-4, 2e-2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x1, e1) = (Tensor::randn(&[2, 3, 3], &mut rng), Tensor::randn(&[2, 3, 3], &mut rng));
            let (x2, e2) = (Tensor::randn(&[2, 3, 3], &mut rng), Tensor::randn(&[2, 3, 3], &mut rng));
            let comb = |u: &Tensor<f64>, v: &Tensor<f64>| u.zip_map(v, |p, q| a * p + b * q);
            let lhs = forward_noise(&comb(&x1, &x2), t, &comb(&e1, &e2), &s).unwrap();
            let rhs = comb(
                &forward_noise(&x1, t, &e1, &s).unwrap(),
                &forward_noise(&x2, t, &e2, &s).unwrap(),
            );
            prop_assert_eq!(lhs.shape(), x1.shape());
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }
}
