use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classifier::{train_classifier, TrainConfig};
use crate::dataset::{few_shot_subset, mix, MixSpec};
use crate::error::{Error, Result};
use crate::sample::{DatasetManifest, Provenance, Split};

/// Mixing ratios swept by default (synthetic per real, per class).
pub const DEFAULT_RATIOS: [f64; 4] = [0.5, 1.0, 2.0, 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub seed: u64,
    pub top1: f64,
    pub f1_macro: f64,
    pub n_train: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioSummary {
    pub ratio: f64,
    pub mean_top1: f64,
    /// Sample standard deviation over seeds; 0 for a single seed.
    pub std_top1: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// One entry per distinct ratio, in first-seen order.
    pub fn summary(&self) -> Vec<RatioSummary> {
        let mut ratios: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !ratios.contains(&r.ratio) {
                ratios.push(r.ratio);
            }
        }
        ratios
            .into_iter()
            .map(|ratio| {
                let v: Vec<f64> = self.rows.iter().filter(|r| r.ratio == ratio).map(|r| r.top1).collect();
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let std = if v.len() > 1 {
                    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                RatioSummary {
                    ratio,
                    mean_top1: mean,
                    std_top1: std,
                    seeds: v.len(),
                }
            })
            .collect()
    }

    /// `ratio,seed,top1,f1_macro,n_train`, one line per cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("ratio,seed,top1,f1_macro,n_train\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.ratio, r.seed, r.top1, r.f1_macro, r.n_train);
        }
        out
    }

    /// `x,y,series` triples: accuracy against ratio for each seed, plus a
    /// `mean` series.
    pub fn plot_data(&self) -> String {
        let mut out = String::from("x,y,series\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},seed-{}", r.ratio, r.top1, r.seed);
        }
        for s in self.summary() {
            let _ = writeln!(out, "{},{},mean", s.ratio, s.mean_top1);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_plot_data(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.plot_data()).map_err(|e| Error::io(path, e))
    }
}

/// Real records of `source` not in `subset`.
pub fn held_out(source: &DatasetManifest, subset: &DatasetManifest) -> Result<DatasetManifest> {
    let taken: HashSet<&str> = subset.ids().into_iter().collect();
    let records = source
        .records()
        .iter()
        .filter(|r| r.provenance() == Provenance::Real && !taken.contains(r.id()))
        .cloned()
        .collect();
    let m = DatasetManifest::new(records, Split::Test, source.seed())?;
    Ok(match source.root() {
        Some(root) => m.with_root(root),
        None => m,
    })
}

/// For each ratio and seed: draw a `k`-shot subset of `real`, mix in pool
/// samples at the ratio, train with `config` (its seed replaced by the
/// cell's) and evaluate. The evaluation set is `eval` when given, else the
/// real samples left out of that seed's subset.
pub fn ratio_sweep(
    real: &DatasetManifest,
    synthetic_pool: &DatasetManifest,
    ratios: &[f64],
    k: usize,
    seeds: &[u64],
    config: &TrainConfig,
    eval: Option<&DatasetManifest>,
) -> Result<SweepTable> {
    if ratios.is_empty() || seeds.is_empty() {
        return Err(Error::EmptyInput("ratios and seeds"));
    }
    config.validate()?;
    let mut rows = Vec::with_capacity(ratios.len() * seeds.len());
    for &ratio in ratios {
        for &seed in seeds {
            let subset = few_shot_subset(real, k, seed)?;
            let train = mix(&subset, synthetic_pool, &MixSpec { ratio, k_shot: k, seed })?;
            let leftover;
            let eval_set = match eval {
                Some(e) => e,
                None => {
                    leftover = held_out(real, &subset)?;
                    &leftover
                }
            };
            let cell = TrainConfig { seed, ..*config };
            let (_, result) = train_classifier::<f32>(&train, eval_set, &cell)?;
            rows.push(SweepRow {
                ratio,
                seed,
                top1: result.top1,
                f1_macro: result.f1_macro,
                n_train: train.len(),
            });
        }
    }
    Ok(SweepTable { rows })
}
