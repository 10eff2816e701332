use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use pqdaf_core::dataset::{few_shot_subset, mix, read_manifest, write_manifest};
use pqdaf_core::diffusion::{load_checkpoint, save_checkpoint, GeneratorConfig};
use pqdaf_core::eval::{evaluate, fit, load_classifier, ratio_sweep, save_classifier, EvalResult};
use pqdaf_core::filter::{filter_manifest, write_audit_log, Decision, MockScorer, PromptTable, RemoteScorer, Scorer};
use pqdaf_core::pipeline::{generate, load_pose_sources, write_pool, PoolRequest};
use pqdaf_core::sample::{Category, DatasetManifest, Split};
use pqdaf_core::toy::{train_generator, GeneratorTraining, ToyDomain};
use pqdaf_core::{Error, Result};

use crate::config::{PipelineConfig, ScorerKind};

pub const REAL_DIR: &str = "real";
pub const TEST_DIR: &str = "test";
pub const MANIFEST: &str = "manifest.jsonl";
pub const CHECKPOINT: &str = "generator.json";
pub const KEPT: &str = "kept.jsonl";
pub const AUDIT: &str = "audit.jsonl";
pub const SUBSET: &str = "subset.jsonl";
pub const TRAIN: &str = "train.jsonl";
pub const CLASSIFIER: &str = "classifier.json";
pub const EVAL: &str = "eval.json";
pub const TRAIN_EVAL: &str = "train_eval.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_PLOT: &str = "sweep_plot.csv";

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn prepare(cfg: &PipelineConfig) -> Result<&Path> {
    let dir = cfg.out_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    cfg.echo_into(dir)?;
    Ok(dir)
}

fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Invalid(format!("missing input: pass --{what} or set paths.{what}")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("serializes") + "\n"))
}

fn toy(cfg: &PipelineConfig) -> ToyDomain {
    ToyDomain {
        resolution: cfg.toy.resolution,
        ..ToyDomain::default()
    }
}

/// Real training photos under `real/` and a disjoint test split under
/// `test/`, each with skeleton sidecars.
pub fn toy_data(cfg: &PipelineConfig) -> Result<()> {
    let dir = prepare(cfg)?;
    let d = toy(cfg);
    let real = d.write_dataset(&dir.join(REAL_DIR), cfg.seed, cfg.toy.per_class, "real", Split::Train)?;
    let test = d.write_dataset(
        &dir.join(TEST_DIR),
        cfg.seed ^ 0x7465_7374,
        cfg.toy.test_per_class,
        "test",
        Split::Test,
    )?;
    println!("real: {} samples -> {}", real.len(), dir.join(REAL_DIR).join(MANIFEST).display());
    println!("test: {} samples -> {}", test.len(), dir.join(TEST_DIR).join(MANIFEST).display());
    Ok(())
}

pub fn train_gen(cfg: &PipelineConfig) -> Result<()> {
    let dir = prepare(cfg)?;
    let g = &cfg.generator;
    let schedule_cfg = g.schedule();
    let schedule = schedule_cfg.build::<f32>()?;
    let budget = GeneratorTraining {
        iterations: g.iterations,
        batch_size: g.batch_size,
        lr: g.lr,
        drop_prob: g.drop_prob,
        seed: cfg.seed,
        ..GeneratorTraining::default()
    };
    let every = (g.iterations / 10).max(1);
    let (generator, losses) = train_generator(&toy(cfg), GeneratorConfig::default(), &schedule, &budget, |it, loss| {
        if (it + 1) % every == 0 {
            eprintln!("iteration {}/{}: loss {loss:.4}", it + 1, g.iterations);
        }
    })?;
    let path = dir.join(CHECKPOINT);
    save_checkpoint(&generator, &schedule_cfg, &path)?;
    let mut csv = String::from("iteration,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l}");
    }
    write_text(&dir.join("generator_loss.csv"), &csv)?;
    let tail = &losses[losses.len().saturating_sub(50)..];
    if !tail.is_empty() {
        println!("final 50-step mean loss {:.4}", tail.iter().sum::<f32>() / tail.len() as f32);
    }
    println!("checkpoint -> {}", path.display());
    Ok(())
}

pub fn generate_pool(cfg: &PipelineConfig) -> Result<()> {
    let checkpoint = required(&cfg.paths.checkpoint, "checkpoint")?;
    if !checkpoint.exists() {
        return Err(Error::Invalid(format!("checkpoint {} does not exist", checkpoint.display())));
    }
    let dir = prepare(cfg)?;
    let (generator, schedule_cfg) = load_checkpoint::<f32>(checkpoint)?;
    let schedule = schedule_cfg.build::<f32>()?;
    let sources = if cfg.sampling.per_class == 0 {
        Vec::new()
    } else {
        load_pose_sources(&read_manifest(required(&cfg.paths.real, "real")?)?, None)?
    };
    let request = PoolRequest {
        per_class: cfg.sampling.per_class,
        seed: cfg.seed,
        sampler: cfg.sampler(),
        threads: cfg.sampling.threads,
    };
    let generated = generate(&generator, &schedule, &sources, &request, "syn")?;
    let pool = write_pool(&generated, dir, cfg.seed)?;
    println!("generated {} images -> {}", pool.len(), dir.join(MANIFEST).display());
    Ok(())
}

fn scorer(cfg: &PipelineConfig) -> Result<Box<dyn Scorer>> {
    let f = &cfg.filter;
    Ok(match f.scorer {
        ScorerKind::Mock => Box::new(match f.mock_score {
            Some(s) => MockScorer::fixed(s),
            None => MockScorer::Hashed {
                seed: cfg.seed,
                low: f.mock_range[0],
                high: f.mock_range[1],
            },
        }),
        ScorerKind::Remote => {
            let endpoint = f.endpoint.clone().unwrap_or_default();
            Box::new(RemoteScorer::new(endpoint, Duration::from_secs(f.timeout_secs))?)
        }
    })
}

pub fn filter_pool(cfg: &PipelineConfig) -> Result<()> {
    let pool = read_manifest(required(&cfg.paths.pool, "pool")?)?;
    let dir = prepare(cfg)?;
    let scorer = scorer(cfg)?;
    let out = filter_manifest(&pool, scorer.as_ref(), &cfg.filter.core(), &PromptTable::default())?;
    write_audit_log(&out.audit, &dir.join(AUDIT))?;
    let kept = DatasetManifest::new(out.kept, Split::SyntheticPool, pool.seed())?;
    let kept = match pool.root() {
        Some(root) => kept.with_root(root).absolutized(),
        None => kept,
    };
    write_manifest(&kept, &dir.join(KEPT))?;
    for c in Category::ALL {
        let of_c = || out.audit.iter().filter(move |r| r.category_id == c);
        let total = of_c().count();
        let kept = of_c().filter(|r| r.decision == Some(Decision::Kept)).count();
        let rate = if total == 0 { 0.0 } else { 100.0 * kept as f64 / total as f64 };
        println!("{}: kept {kept}/{total} ({rate:.1}%)", c.code());
    }
    println!("kept {}/{} at tau {}", kept.len(), pool.len(), cfg.filter.tau);
    Ok(())
}

pub fn mix_sets(cfg: &PipelineConfig) -> Result<()> {
    let real = read_manifest(required(&cfg.paths.real, "real")?)?;
    let pool = read_manifest(required(&cfg.paths.pool, "pool")?)?;
    let dir = prepare(cfg)?;
    let spec = cfg.mix_spec();
    let subset = few_shot_subset(&real, spec.k_shot, spec.seed)?.absolutized();
    let mixed = mix(&subset, &pool.absolutized(), &spec)?;
    write_manifest(&subset, &dir.join(SUBSET))?;
    write_manifest(&mixed, &dir.join(TRAIN))?;
    println!(
        "{} real + {} synthetic = {} records -> {}",
        subset.len(),
        mixed.len() - subset.len(),
        mixed.len(),
        dir.join(TRAIN).display()
    );
    Ok(())
}

fn report(label: &str, r: &EvalResult) {
    println!("{label}: top1 {:.4} macro-F1 {:.4} (n = {})", r.top1, r.f1_macro, r.n);
}

pub fn train_model(cfg: &PipelineConfig) -> Result<()> {
    let train = read_manifest(required(&cfg.paths.train, "train")?)?;
    let eval = cfg.paths.eval.as_deref().map(read_manifest).transpose()?;
    let dir = prepare(cfg)?;
    let (model, losses) = fit::<f32>(&train, &cfg.train_config())?;
    save_classifier(&model, &dir.join(CLASSIFIER))?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l}");
    }
    write_text(&dir.join("train_loss.csv"), &csv)?;
    let on_train = evaluate(&model, &train)?;
    write_json(&dir.join(TRAIN_EVAL), &on_train)?;
    report("train", &on_train);
    if let Some(eval) = eval {
        let r = evaluate(&model, &eval)?;
        write_json(&dir.join(EVAL), &r)?;
        report("eval", &r);
    }
    println!("classifier -> {}", dir.join(CLASSIFIER).display());
    Ok(())
}

pub fn eval_model(cfg: &PipelineConfig) -> Result<()> {
    let model = load_classifier::<f32>(required(&cfg.paths.model, "model")?)?;
    let eval = read_manifest(required(&cfg.paths.eval, "eval")?)?;
    let dir = prepare(cfg)?;
    let r = evaluate(&model, &eval)?;
    write_json(&dir.join(EVAL), &r)?;
    report("eval", &r);
    Ok(())
}

pub fn sweep(cfg: &PipelineConfig) -> Result<()> {
    let real = read_manifest(required(&cfg.paths.real, "real")?)?;
    let pool = read_manifest(required(&cfg.paths.pool, "pool")?)?;
    let eval = cfg.paths.eval.as_deref().map(read_manifest).transpose()?;
    let dir = prepare(cfg)?;
    let table = ratio_sweep(
        &real,
        &pool,
        &cfg.sweep.ratios,
        cfg.mix.k_shot,
        &cfg.sweep.seeds,
        &cfg.train,
        eval.as_ref(),
    )?;
    table.write_csv(&dir.join(SWEEP_CSV))?;
    table.write_plot_data(&dir.join(SWEEP_PLOT))?;
    for s in table.summary() {
        println!(
            "ratio {}: top1 {:.4} ± {:.4} over {} seeds",
            s.ratio, s.mean_top1, s.std_top1, s.seeds
        );
    }
    println!("table -> {}", dir.join(SWEEP_CSV).display());
    Ok(())
}
