//! Pipeline configuration: a TOML file, then command-line overrides, then
//! validation of every section before any stage runs.

use std::path::{Path, PathBuf};

use pqdaf_core::dataset::MixSpec;
use pqdaf_core::diffusion::{GeneratorConfig, SamplerConfig, ScheduleConfig, DEFAULT_DROP_PROB};
use pqdaf_core::eval::{TrainConfig, DEFAULT_RATIOS};
use pqdaf_core::filter::{FilterConfig, UnparseablePolicy, DEFAULT_TAU};
use pqdaf_core::toy::{GeneratorTraining, TOY_SCHEDULE_STEPS};
use pqdaf_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Read when `--scorer-endpoint` is absent; overrides the config file.
pub const ENDPOINT_ENV: &str = "PQDAF_SCORER_ENDPOINT";

/// Name of the merged-config echo written into every output directory.
pub const ECHO_FILE: &str = "pqdaf-config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub paths: Paths,
    pub toy: ToySection,
    pub generator: GeneratorSection,
    pub sampling: SamplingSection,
    pub filter: FilterSection,
    pub mix: MixSection,
    pub train: TrainConfig,
    pub sweep: SweepSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("pqdaf-out"),
            paths: Paths::default(),
            toy: ToySection::default(),
            generator: GeneratorSection::default(),
            sampling: SamplingSection::default(),
            filter: FilterSection::default(),
            mix: MixSection::default(),
            train: TrainConfig::default(),
            sweep: SweepSection::default(),
        }
    }
}

/// Inputs consumed by the stages. Unset entries must be given as flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub real: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySection {
    pub resolution: usize,
    /// Real photos per class in the training split.
    pub per_class: usize,
    /// Photos per class in the separate test split.
    pub test_per_class: usize,
}

impl Default for ToySection {
    fn default() -> Self {
        Self {
            resolution: 32,
            per_class: 40,
            test_per_class: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_range: [f64; 2],
    pub drop_prob: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let t = GeneratorTraining::default();
        let s = ScheduleConfig::default();
        Self {
            steps: TOY_SCHEDULE_STEPS,
            beta_range: [s.beta_min, s.beta_max],
            drop_prob: DEFAULT_DROP_PROB,
            iterations: t.iterations,
            batch_size: t.batch_size,
            lr: t.lr,
        }
    }
}

impl GeneratorSection {
    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            steps: self.steps,
            beta_min: self.beta_range[0],
            beta_max: self.beta_range[1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub w: f64,
    pub steps: usize,
    pub deterministic: bool,
    /// Images generated per class.
    pub per_class: usize,
    pub threads: usize,
}

impl Default for SamplingSection {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self {
            w: s.w,
            steps: s.steps,
            deterministic: s.deterministic,
            per_class: 20,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub tau: f64,
    pub scorer: ScorerKind,
    pub endpoint: Option<String>,
    pub timeout_secs: u64,
    pub unparseable_policy: UnparseablePolicy,
    pub max_concurrent_requests: usize,
    pub retry_limit: u32,
    /// Mock replies: this score for every sample when set, otherwise a
    /// hash-derived score uniform on `mock_range`.
    pub mock_score: Option<f64>,
    pub mock_range: [f64; 2],
}

impl Default for FilterSection {
    fn default() -> Self {
        let f = FilterConfig::default();
        Self {
            tau: DEFAULT_TAU,
            scorer: ScorerKind::Mock,
            endpoint: None,
            timeout_secs: 60,
            unparseable_policy: f.unparseable_policy,
            max_concurrent_requests: f.max_concurrent_requests,
            retry_limit: f.retry_limit,
            mock_score: None,
            mock_range: [0.6, 1.0],
        }
    }
}

impl FilterSection {
    pub fn core(&self) -> FilterConfig {
        FilterConfig {
            tau: self.tau,
            unparseable_policy: self.unparseable_policy,
            max_concurrent_requests: self.max_concurrent_requests,
            retry_limit: self.retry_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixSection {
    pub k_shot: usize,
    pub ratio: f64,
}

impl Default for MixSection {
    fn default() -> Self {
        Self { k_shot: 10, ratio: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            ratios: DEFAULT_RATIOS.to_vec(),
            seeds: vec![0, 1, 2],
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub k_shot: Option<usize>,
    pub ratio: Option<f64>,
    pub tau: Option<f64>,
    pub scorer: Option<ScorerKind>,
    pub scorer_endpoint: Option<String>,
    pub out_dir: Option<PathBuf>,
    pub deterministic: Option<bool>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.to_string().replace('\n', " ");
            Error::Invalid(format!("{}: {}", origin.display(), msg.trim()))
        })
    }

    /// Defaults, then `file` if given, then the environment, then `flags`.
    pub fn load(file: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Invalid(format!("cannot read config {}: {e}", path.display())))?;
                Self::from_toml(&text, path)?
            }
            None => Self::default(),
        };
        if let Ok(v) = std::env::var(ENDPOINT_ENV) {
            if !v.is_empty() {
                cfg.filter.endpoint = Some(v);
            }
        }
        cfg.apply(flags);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.k_shot {
            self.mix.k_shot = v;
        }
        if let Some(v) = o.ratio {
            self.mix.ratio = v;
        }
        if let Some(v) = o.tau {
            self.filter.tau = v;
        }
        if let Some(v) = o.scorer {
            self.filter.scorer = v;
        }
        if let Some(v) = &o.scorer_endpoint {
            self.filter.endpoint = Some(v.clone());
        }
        if let Some(v) = &o.out_dir {
            self.out_dir = v.clone();
        }
        if let Some(v) = o.deterministic {
            self.sampling.deterministic = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.toy.resolution;
        if r == 0 || r % 8 != 0 {
            return Err(Error::Invalid(format!("toy.resolution {r} must be a positive multiple of 8")));
        }
        if self.toy.per_class == 0 {
            return Err(Error::Invalid("toy.per_class must be at least 1".into()));
        }
        GeneratorConfig {
            resolution: r,
            ..GeneratorConfig::default()
        }
        .validate()?;
        let g = &self.generator;
        g.schedule().build::<f64>()?;
        if g.steps > 1000 {
            return Err(Error::Invalid(format!("generator.T = {} exceeds 1000", g.steps)));
        }
        if !(0.0..1.0).contains(&g.drop_prob) {
            return Err(Error::Invalid(format!("generator.drop_prob = {} outside [0, 1)", g.drop_prob)));
        }
        if g.batch_size == 0 || !(g.lr > 0.0 && g.lr.is_finite()) {
            return Err(Error::Invalid("generator.batch_size and generator.lr must be positive".into()));
        }
        self.sampler().validate()?;
        if self.sampling.threads == 0 {
            return Err(Error::Invalid("sampling.threads must be at least 1".into()));
        }
        let f = &self.filter;
        f.core().validate()?;
        if f.scorer == ScorerKind::Remote && f.endpoint.as_deref().unwrap_or("").is_empty() {
            return Err(Error::Invalid(format!(
                "remote scorer needs --scorer-endpoint, {ENDPOINT_ENV} or filter.endpoint"
            )));
        }
        if let Some(s) = f.mock_score {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Invalid(format!("filter.mock_score {s} outside [0, 1]")));
            }
        }
        let [lo, hi] = f.mock_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Invalid(format!("filter.mock_range [{lo}, {hi}] is not inside [0, 1]")));
        }
        if f.timeout_secs == 0 {
            return Err(Error::Invalid("filter.timeout_secs must be at least 1".into()));
        }
        self.mix_spec().validate()?;
        self.train.validate()?;
        if self.sweep.ratios.is_empty() || self.sweep.seeds.is_empty() {
            return Err(Error::Invalid("sweep.ratios and sweep.seeds must be non-empty".into()));
        }
        for &ratio in &self.sweep.ratios {
            MixSpec { ratio, ..self.mix_spec() }.validate()?;
        }
        Ok(())
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            w: self.sampling.w,
            steps: self.sampling.steps,
            seed: self.seed,
            deterministic: self.sampling.deterministic,
        }
    }

    pub fn mix_spec(&self) -> MixSpec {
        MixSpec {
            ratio: self.mix.ratio,
            k_shot: self.mix.k_shot,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Writes the merged configuration into `dir`.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        let path = dir.join(ECHO_FILE);
        std::fs::write(&path, self.to_toml()).map_err(|e| crate::commands::io_error(&path, e))
    }
}
