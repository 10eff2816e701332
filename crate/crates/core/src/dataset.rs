//! Few-shot subsetting and ratio-controlled mixing of real and synthetic
//! samples.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{Category, DatasetManifest, LabeledSample, Provenance, Split};

pub use crate::sample::manifest::{read_manifest, write_manifest};

/// Synthetic-per-real mixing at `ratio` with `k_shot` real samples per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub ratio: f64,
    pub k_shot: usize,
    pub seed: u64,
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio >= 0.0 && self.ratio.is_finite()) {
            return Err(Error::Invalid(format!("mixing ratio {} must be >= 0", self.ratio)));
        }
        if self.k_shot < 1 {
            return Err(Error::Invalid("k_shot must be at least 1".into()));
        }
        Ok(())
    }

    /// Synthetic samples added per class.
    pub fn synthetic_per_class(&self) -> usize {
        round_half_up(self.k_shot as f64 * self.ratio)
    }
}

/// Nearest integer, halves rounded up. A tolerance of 1e-9 absorbs
/// products such as `3 * 0.15` that land just below a half.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

fn class_rng(seed: u64, salt: u64, c: Category) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(c.id() as u64);
    rng
}

fn shortfall(c: Category, needed: usize, available: usize) -> Error {
    Error::Shortfall {
        category: c.code(),
        needed,
        available,
        shortfall: needed - available,
    }
}

/// Picks `n` of `pool` uniformly without replacement, keeping pool order.
fn choose<'a>(pool: &[&'a LabeledSample], n: usize, rng: &mut ChaCha8Rng) -> Vec<&'a LabeledSample> {
    let mut picked = index::sample(rng, pool.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| pool[i]).collect()
}

/// Exactly `k` real samples per class, uniformly without replacement,
/// listed in source order.
pub fn few_shot_subset(source: &DatasetManifest, k: usize, seed: u64) -> Result<DatasetManifest> {
    if k < 1 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    let mut chosen = std::collections::HashSet::new();
    for c in Category::ALL {
        let pool: Vec<&LabeledSample> = source
            .of_category(c)
            .filter(|r| r.provenance() == Provenance::Real)
            .collect();
        if pool.len() < k {
            return Err(shortfall(c, k, pool.len()));
        }
        for r in choose(&pool, k, &mut class_rng(seed, 0x6b73_686f_74, c)) {
            chosen.insert(r.id().to_string());
        }
    }
    let records = source
        .records()
        .iter()
        .filter(|r| chosen.contains(r.id()))
        .cloned()
        .collect();
    let subset = DatasetManifest::new(records, Split::Train, seed)?;
    Ok(match source.root() {
        Some(root) => subset.with_root(root),
        None => subset,
    })
}

/// All real samples plus `round_half_up(k_shot * ratio)` synthetic samples
/// per class drawn from the pool. When anything is added the result is
/// shuffled with the seed; otherwise it is `real` unchanged. File paths are
/// made absolute so the result does not depend on either input's directory.
pub fn mix(real: &DatasetManifest, synthetic_pool: &DatasetManifest, spec: &MixSpec) -> Result<DatasetManifest> {
    spec.validate()?;
    for c in Category::ALL {
        let n = real.of_category(c).count();
        if n != spec.k_shot {
            return Err(Error::Invalid(format!(
                "real set has {n} samples of {} but k_shot is {}",
                c.code(),
                spec.k_shot
            )));
        }
    }
    if let Some(r) = real.records().iter().find(|r| r.provenance() != Provenance::Real) {
        return Err(Error::Invalid(format!("real set contains synthetic sample {}", r.id())));
    }
    if let Some(r) = synthetic_pool
        .records()
        .iter()
        .find(|r| r.provenance() != Provenance::Synthetic || r.score().is_none())
    {
        return Err(Error::Invalid(format!(
            "pool sample {} is not a scored synthetic sample",
            r.id()
        )));
    }
    let n = spec.synthetic_per_class();
    if n == 0 {
        return Ok(real.clone());
    }
    let pool = synthetic_pool.absolutized();
    let mut records: Vec<LabeledSample> = real.absolutized().into_records();
    for c in Category::ALL {
        let members: Vec<&LabeledSample> = pool.of_category(c).collect();
        if members.len() < n {
            return Err(shortfall(c, n, members.len()));
        }
        records.extend(choose(&members, n, &mut class_rng(spec.seed, 0x6d69_78, c)).into_iter().cloned());
    }
    records.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7368_7566));
    DatasetManifest::new(records, Split::Train, spec.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{per_class_counts, ImageRef};
    use std::collections::HashSet;
    use std::path::PathBuf;

    fn real_set(per_class: usize) -> DatasetManifest {
        let records = Category::ALL
            .into_iter()
            .flat_map(|c| {
                (0..per_class).map(move |i| {
                    LabeledSample::real(
                        format!("r{}-{i}", c.id()),
                        ImageRef::File(PathBuf::from(format!("r{}-{i}.png", c.id()))),
                        c,
                    )
                })
            })
            .collect();
        DatasetManifest::new(records, Split::Test, 0).unwrap()
    }

    fn pool(per_class: usize) -> DatasetManifest {
        let records = Category::ALL
            .into_iter()
            .flat_map(|c| {
                (0..per_class).map(move |i| {
                    LabeledSample::synthetic(
                        format!("s{}-{i}", c.id()),
                        ImageRef::File(PathBuf::from(format!("s{}-{i}.png", c.id()))),
                        c,
                    )
                    .with_score(0.9)
                    .unwrap()
                })
            })
            .collect();
        DatasetManifest::new(records, Split::SyntheticPool, 0).unwrap()
    }

    #[test]
    fn round_half_up_rule() {
        assert_eq!(round_half_up(5.0), 5);
        assert_eq!(round_half_up(1.5), 2);
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(2.4999), 2);
        assert_eq!(round_half_up(3.0 * 0.15 * 10.0), 5);
        assert_eq!(round_half_up(0.0), 0);
    }

    #[test]
    fn ten_shot_over_ten_classes() {
        let s = few_shot_subset(&real_set(25), 10, 4).unwrap();
        assert_eq!(s.len(), 100);
        assert!(per_class_counts(&s).0.iter().all(|&n| n == 10));
        assert_eq!(s.ids(), few_shot_subset(&real_set(25), 10, 4).unwrap().ids());
        assert_ne!(s.ids(), few_shot_subset(&real_set(25), 10, 5).unwrap().ids());
    }

    #[test]
    fn one_shot_from_singletons_is_forced() {
        let src = real_set(1);
        assert_eq!(few_shot_subset(&src, 1, 99).unwrap().ids(), src.ids());
    }

    #[test]
    fn short_classes_are_named() {
        let mut records = real_set(3).into_records();
        records.retain(|r| !(r.category() == Category::ALL[7] && r.id().ends_with("-2")));
        let src = DatasetManifest::new(records, Split::Test, 0).unwrap();
        match few_shot_subset(&src, 3, 0) {
            Err(Error::Shortfall { category, needed: 3, available: 2, shortfall: 1 }) => {
                assert_eq!(category, "C7")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mixing_counts_follow_the_ratio() {
        let real = real_set(10);
        for (ratio, synth, total) in [(2.0, 20, 300), (0.5, 5, 150), (1.0, 10, 200), (3.0, 30, 400)] {
            let m = mix(&real, &pool(40), &MixSpec { ratio, k_shot: 10, seed: 1 }).unwrap();
            assert_eq!(m.len(), total);
            for c in Category::ALL {
                let synthetic = m
                    .of_category(c)
                    .filter(|r| r.provenance() == Provenance::Synthetic)
                    .count();
                assert_eq!(synthetic, synth);
                assert_eq!(m.of_category(c).count() - synthetic, 10);
            }
            let ids: HashSet<&str> = m.ids().into_iter().collect();
            assert_eq!(ids.len(), m.len());
        }
    }

    #[test]
    fn zero_ratio_returns_the_real_set() {
        let real = real_set(4);
        let m = mix(&real, &pool(0), &MixSpec { ratio: 0.0, k_shot: 4, seed: 7 }).unwrap();
        assert_eq!(m, real);
    }

    #[test]
    fn pool_shortfall_is_an_error() {
        let err = mix(&real_set(10), &pool(19), &MixSpec { ratio: 2.0, k_shot: 10, seed: 0 }).unwrap_err();
        assert!(matches!(err, Error::Shortfall { needed: 20, available: 19, shortfall: 1, .. }));
    }

    #[test]
    fn unscored_pool_samples_are_rejected() {
        let unscored = DatasetManifest::new(
            vec![LabeledSample::synthetic("x", ImageRef::File("x.png".into()), Category::ALL[0])],
            Split::SyntheticPool,
            0,
        )
        .unwrap();
        assert!(mix(&real_set(1), &unscored, &MixSpec { ratio: 1.0, k_shot: 1, seed: 0 }).is_err());
    }
}
