//! Semantic quality filtering of generated samples.
//!
//! Each sample is scored by asking a vision-language scorer how well the
//! image matches its category prompt; samples whose parsed score reaches the
//! threshold are kept. Every decision is recorded in an audit trail.

mod parse;
mod prompts;
mod scorer;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use parse::{parse_score, ParseFailure};
pub use prompts::{build_query, PromptTable};
pub use scorer::{MockScorer, RemoteRequest, RemoteScorer, ScoreRequest, Scorer, ScorerError};

use crate::error::{Error, Result};
use crate::sample::{Category, DatasetManifest, LabeledSample};

pub const DEFAULT_TAU: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnparseablePolicy {
    /// Drop the sample and keep going; the audit keeps the raw reply.
    Discard,
    /// Abort the whole run on the first unparseable reply.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub tau: f64,
    pub unparseable_policy: UnparseablePolicy,
    pub max_concurrent_requests: usize,
    pub retry_limit: u32,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            unparseable_policy: UnparseablePolicy::Discard,
            max_concurrent_requests: 1,
            retry_limit: 2,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Invalid(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if self.max_concurrent_requests == 0 {
            return Err(Error::Invalid("max_concurrent_requests must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Kept,
    Discarded,
    Unparseable,
}

/// Audit entry for one scored sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub category_id: Category,
    pub query: String,
    pub raw_response: String,
    /// Parsed score; `None` when the reply could not be parsed.
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_failure: Option<ParseFailure>,
    /// Unset until a threshold has been applied.
    pub decision: Option<Decision>,
}

impl ScoreRecord {
    /// Applies the inclusive keep rule `s >= tau`.
    pub fn decide(&mut self, tau: f64) -> Decision {
        let d = match self.s {
            Some(s) if s >= tau => Decision::Kept,
            Some(_) => Decision::Discarded,
            None => Decision::Unparseable,
        };
        self.decision = Some(d);
        d
    }
}

/// Queries the scorer for one sample, retrying transport failures up to
/// `retry_limit` times. The returned record has no decision yet.
pub fn score_sample(
    scorer: &dyn Scorer,
    sample: &LabeledSample,
    table: &PromptTable,
    root: Option<&Path>,
    retry_limit: u32,
) -> Result<ScoreRecord> {
    let image = sample.image_bytes(root)?;
    let query = build_query(sample.category(), table);
    let request = ScoreRequest {
        sample_id: sample.id(),
        image: &image,
        query: &query,
    };
    let mut attempt = 0;
    let raw_response = loop {
        match scorer.score(&request) {
            Ok(reply) => break reply,
            Err(ScorerError::Transport(_)) if attempt < retry_limit => attempt += 1,
            Err(e) => return Err(e.into()),
        }
    };
    let parsed = parse_score(&raw_response);
    Ok(ScoreRecord {
        sample_id: sample.id().to_string(),
        category_id: sample.category(),
        query,
        raw_response,
        s: parsed.ok(),
        parse_failure: parsed.err(),
        decision: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    /// Samples with `s >= tau`, in input order, annotated with their score.
    pub kept: Vec<LabeledSample>,
    /// One record per input, in input order.
    pub audit: Vec<ScoreRecord>,
}

/// Scores every sample and keeps those at or above the threshold.
///
/// Up to `max_concurrent_requests` scorer calls run at once; results are
/// joined back into input order.
pub fn filter(
    samples: &[LabeledSample],
    scorer: &dyn Scorer,
    config: &FilterConfig,
    table: &PromptTable,
    root: Option<&Path>,
) -> Result<FilterOutput> {
    config.validate()?;
    let records = score_all(samples, scorer, config, table, root)?;
    let mut kept = Vec::new();
    let mut audit = Vec::with_capacity(records.len());
    for (sample, mut record) in samples.iter().zip(records) {
        match record.decide(config.tau) {
            Decision::Kept => kept.push(sample.with_score(record.s.expect("kept implies parsed"))?),
            Decision::Discarded => {}
            Decision::Unparseable => {
                if config.unparseable_policy == UnparseablePolicy::Error {
                    let failure = record.parse_failure.unwrap_or(ParseFailure::NoNumeral);
                    return Err(Error::UnparseableScore {
                        record: Box::new(record),
                        failure,
                    });
                }
            }
        }
        audit.push(record);
    }
    Ok(FilterOutput { kept, audit })
}

/// [`filter`] over a manifest's records, resolving paths against its root.
pub fn filter_manifest(
    manifest: &DatasetManifest,
    scorer: &dyn Scorer,
    config: &FilterConfig,
    table: &PromptTable,
) -> Result<FilterOutput> {
    filter(manifest.records(), scorer, config, table, manifest.root())
}

fn score_all(
    samples: &[LabeledSample],
    scorer: &dyn Scorer,
    config: &FilterConfig,
    table: &PromptTable,
    root: Option<&Path>,
) -> Result<Vec<ScoreRecord>> {
    let workers = config.max_concurrent_requests.min(samples.len());
    if workers <= 1 {
        return samples
            .iter()
            .map(|s| score_sample(scorer, s, table, root, config.retry_limit))
            .collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<ScoreRecord>>>> = samples.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(sample) = samples.get(i) else { break };
                let result = score_sample(scorer, sample, table, root, config.retry_limit);
                *slots[i].lock().expect("slot lock") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}

/// Writes one record per line in the same JSON-lines style as manifests.
pub fn write_audit_log(records: &[ScoreRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_audit_log(path: &Path) -> Result<Vec<ScoreRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::ManifestParse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{Convention, ImageBuffer, ImageRef};
    use std::collections::HashMap;
    use std::sync::Arc;

    fn pool(n: usize) -> Vec<LabeledSample> {
        let img = Arc::new(ImageBuffer::black(4, 4, 3, Convention::Stored));
        (0..n)
            .map(|i| {
                LabeledSample::synthetic(
                    format!("g{i}"),
                    ImageRef::Memory(img.clone()),
                    Category::ALL[i % 10],
                )
            })
            .collect()
    }

    fn scripted(replies: &[(&str, &str)]) -> MockScorer {
        MockScorer::Scripted {
            replies: replies.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            default: "0".into(),
        }
    }

    struct Flaky {
        failures_left: Mutex<u32>,
    }
    impl Scorer for Flaky {
        fn score(&self, _: &ScoreRequest<'_>) -> Result<String, ScorerError> {
            let mut left = self.failures_left.lock().unwrap();
            if *left > 0 {
                *left -= 1;
                Err(ScorerError::Transport("connection reset".into()))
            } else {
                Ok("0.9".into())
            }
        }
    }

    #[test]
    fn score_sample_passes_reply_through() {
        let table = PromptTable::default();
        let s = &pool(1)[0];
        let rec = score_sample(&MockScorer::fixed(1.0), s, &table, None, 0).unwrap();
        assert_eq!(rec.s, Some(1.0));
        assert_eq!(rec.decision, None);
        assert_eq!(rec.query, build_query(Category::ALL[0], &table));
        let rec = score_sample(&MockScorer::Fixed("match: 0.42 overall".into()), s, &table, None, 0).unwrap();
        assert_eq!(rec.s, Some(0.42));
    }

    #[test]
    fn transport_failures_retry_then_surface() {
        let table = PromptTable::default();
        let s = &pool(1)[0];
        let flaky = Flaky { failures_left: Mutex::new(1) };
        assert!(matches!(
            score_sample(&flaky, s, &table, None, 0),
            Err(Error::Scorer(ScorerError::Transport(_)))
        ));
        let flaky = Flaky { failures_left: Mutex::new(2) };
        assert_eq!(score_sample(&flaky, s, &table, None, 2).unwrap().s, Some(0.9));
    }

    #[test]
    fn threshold_is_inclusive() {
        let samples = pool(2);
        let mock = scripted(&[("g0", "0.8"), ("g1", "0.79999")]);
        let out = filter(&samples, &mock, &FilterConfig::default(), &PromptTable::default(), None).unwrap();
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.kept[0].id(), "g0");
        assert_eq!(out.kept[0].score(), Some(0.8));
        assert_eq!(out.audit[1].decision, Some(Decision::Discarded));
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let out = filter(&[], &MockScorer::fixed(1.0), &FilterConfig::default(), &PromptTable::default(), None).unwrap();
        assert!(out.kept.is_empty() && out.audit.is_empty());
    }

    #[test]
    fn unparseable_policy() {
        let samples = pool(3);
        let mock = scripted(&[("g0", "0.9"), ("g1", "no idea"), ("g2", "0.95")]);
        let table = PromptTable::default();
        let out = filter(&samples, &mock, &FilterConfig::default(), &table, None).unwrap();
        assert_eq!(out.kept.len(), 2);
        assert_eq!(out.audit[1].decision, Some(Decision::Unparseable));
        assert_eq!(out.audit[1].parse_failure, Some(ParseFailure::NoNumeral));

        let strict = FilterConfig {
            unparseable_policy: UnparseablePolicy::Error,
            ..FilterConfig::default()
        };
        match filter(&samples, &mock, &strict, &table, None) {
            Err(Error::UnparseableScore { record, .. }) => assert_eq!(record.sample_id, "g1"),
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn invalid_tau_is_rejected() {
        let bad = FilterConfig { tau: 1.5, ..FilterConfig::default() };
        assert!(filter(&pool(1), &MockScorer::fixed(1.0), &bad, &PromptTable::default(), None).is_err());
    }

    #[test]
    fn tau_extremes() {
        let samples = pool(4);
        let mock = scripted(&[("g0", "0"), ("g1", "1.0"), ("g2", "0.5"), ("g3", "n/a")]);
        let table = PromptTable::default();
        let all = FilterConfig { tau: 0.0, ..FilterConfig::default() };
        assert_eq!(filter(&samples, &mock, &all, &table, None).unwrap().kept.len(), 3);
        let top = FilterConfig { tau: 1.0, ..FilterConfig::default() };
        let kept = filter(&samples, &mock, &top, &table, None).unwrap().kept;
        assert_eq!(kept.iter().map(|s| s.id()).collect::<Vec<_>>(), vec!["g1"]);
    }

    #[test]
    fn concurrent_run_matches_sequential_order() {
        let samples = pool(40);
        let replies: HashMap<String, String> = (0..40)
            .map(|i| (format!("g{i}"), format!("{:.3}", (i * 37 % 100) as f64 / 100.0)))
            .collect();
        let mock = MockScorer::Scripted { replies, default: "0".into() };
        let table = PromptTable::default();
        let seq = filter(&samples, &mock, &FilterConfig::default(), &table, None).unwrap();
        let par_cfg = FilterConfig {
            max_concurrent_requests: 6,
            ..FilterConfig::default()
        };
        let par = filter(&samples, &mock, &par_cfg, &table, None).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn audit_log_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = pool(3);
        let mock = scripted(&[("g0", "0.9"), ("g1", "??"), ("g2", "3")]);
        let out = filter(&samples, &mock, &FilterConfig::default(), &PromptTable::default(), None).unwrap();
        let path = dir.path().join("audit.jsonl");
        write_audit_log(&out.audit, &path).unwrap();
        assert_eq!(read_audit_log(&path).unwrap(), out.audit);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().next().unwrap().contains("\"decision\":\"kept\""));
    }
}
