//! Line-oriented manifest files.
//!
//! The first line is a header object `{"format_version", "seed", "split"}`;
//! every following non-empty line is one record object
//! `{"id", "path", "category_id", "provenance", "score"?}`. Objects are JSON.
//! Paths are relative to the manifest's directory unless absolute.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Category, DatasetManifest, ImageRef, LabeledSample, Provenance, Split};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    seed: u64,
    split: Split,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    path: PathBuf,
    category_id: i64,
    provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

/// Serializes a manifest. Every record must reference an image file.
pub fn to_string(manifest: &DatasetManifest) -> Result<String> {
    let mut out = serde_json::to_string(&Header {
        format_version: FORMAT_VERSION,
        seed: manifest.seed(),
        split: manifest.split(),
    })
    .expect("header serializes");
    out.push('\n');
    for r in manifest.records() {
        let path = match r.image() {
            ImageRef::File(p) => p.clone(),
            ImageRef::Memory(_) => {
                return Err(Error::Invalid(format!(
                    "sample {} has no image file; save its pixels before writing the manifest",
                    r.id()
                )))
            }
        };
        let line = serde_json::to_string(&Record {
            id: r.id().to_string(),
            path,
            category_id: r.category().id() as i64,
            provenance: r.provenance(),
            score: r.score(),
        })
        .expect("record serializes");
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let text = to_string(manifest)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses manifest text; `origin` is only used in error messages.
pub fn from_reader(reader: impl BufRead, origin: &Path) -> Result<DatasetManifest> {
    let parse_err = |line: usize, message: String| Error::ManifestParse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut header: Option<Header> = None;
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match &header {
            None => {
                // Check the version before the full schema so a newer header
                // with extra fields still reports a version error.
                let raw: serde_json::Value =
                    serde_json::from_str(&line).map_err(|e| parse_err(lineno, format!("header: {e}")))?;
                let version = raw
                    .get("format_version")
                    .and_then(|v| v.as_u64())
                    .ok_or_else(|| parse_err(lineno, "header: missing format_version".into()))?;
                if version != FORMAT_VERSION as u64 {
                    return Err(Error::FormatVersion {
                        found: version.min(u32::MAX as u64) as u32,
                        expected: FORMAT_VERSION,
                    });
                }
                header = Some(
                    serde_json::from_value(raw).map_err(|e| parse_err(lineno, format!("header: {e}")))?,
                );
            }
            Some(_) => {
                let rec: Record =
                    serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
                let category =
                    Category::from_id(rec.category_id).map_err(|e| parse_err(lineno, e.to_string()))?;
                let sample = LabeledSample::new(
                    rec.id,
                    ImageRef::File(rec.path),
                    category,
                    rec.provenance,
                    rec.score,
                )
                .map_err(|e| parse_err(lineno, e.to_string()))?;
                records.push(sample);
            }
        }
    }
    let header = header.ok_or_else(|| parse_err(1, "missing header line".into()))?;
    DatasetManifest::new(records, header.split, header.seed).map_err(|e| parse_err(0, e.to_string()))
}

/// Reads a manifest; relative image paths resolve against its directory.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let manifest = from_reader(BufReader::new(file), path)?;
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let root = std::path::absolute(parent).map_err(|e| Error::io(parent, e))?;
    Ok(manifest.with_root(root))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<DatasetManifest> {
        from_reader(text.as_bytes(), Path::new("m.jsonl"))
    }

    #[test]
    fn header_and_record_field_names_are_fixed() {
        let s = LabeledSample::synthetic("g1", ImageRef::File("img/g1.png".into()), Category::ALL[4])
            .with_score(0.875)
            .unwrap();
        let m = DatasetManifest::new(vec![s], Split::SyntheticPool, 9).unwrap();
        let text = to_string(&m).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], r#"{"format_version":1,"seed":9,"split":"synthetic-pool"}"#);
        assert_eq!(
            lines[1],
            r#"{"id":"g1","path":"img/g1.png","category_id":4,"provenance":"synthetic","score":0.875}"#
        );
    }

    #[test]
    fn missing_category_is_reported_with_line_number() {
        let text = "{\"format_version\":1,\"seed\":0,\"split\":\"train\"}\n\
                    {\"id\":\"a\",\"path\":\"a.png\",\"category_id\":1,\"provenance\":\"real\"}\n\
                    {\"id\":\"b\",\"path\":\"b.png\",\"provenance\":\"real\"}\n";
        match parse(text) {
            Err(Error::ManifestParse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("category_id"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_version_is_a_version_error() {
        let text = "{\"format_version\":7,\"seed\":0,\"split\":\"train\",\"extra\":true}\n";
        assert!(matches!(
            parse(text),
            Err(Error::FormatVersion { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn in_memory_images_cannot_be_serialized() {
        let img = super::super::ImageBuffer::black(2, 2, 1, super::super::Convention::Stored);
        let s = LabeledSample::real("m", ImageRef::Memory(img.into()), Category::ALL[0]);
        let m = DatasetManifest::new(vec![s], Split::Train, 0).unwrap();
        assert!(to_string(&m).is_err());
    }

    fn arb_sample() -> impl Strategy<Value = LabeledSample> {
        (
            "[a-z0-9_-]{1,12}",
            "[a-z0-9/]{1,16}\\.png",
            0i64..10,
            prop::option::of(0.0f64..=1.0),
        )
            .prop_map(|(id, path, cat, score)| {
                let cat = Category::from_id(cat).unwrap();
                match score {
                    None => LabeledSample::real(id, ImageRef::File(path.into()), cat),
                    Some(s) => LabeledSample::synthetic(id, ImageRef::File(path.into()), cat)
                        .with_score(s)
                        .unwrap(),
                }
            })
    }

    proptest! {
        #[test]
        fn roundtrip_preserves_fields_bit_exactly(
            samples in prop::collection::vec(arb_sample(), 0..20),
            seed in any::<u64>(),
        ) {
            let mut seen = std::collections::HashSet::new();
            let samples: Vec<_> = samples.into_iter().filter(|s| seen.insert(s.id().to_string())).collect();
            let m = DatasetManifest::new(samples, Split::Test, seed).unwrap();
            let back = parse(&to_string(&m).unwrap()).unwrap();
            prop_assert_eq!(back.seed(), seed);
            prop_assert_eq!(back.split(), Split::Test);
            prop_assert_eq!(back.len(), m.len());
            for (a, b) in m.records().iter().zip(back.records()) {
                prop_assert_eq!(a.id(), b.id());
                prop_assert_eq!(a.category(), b.category());
                prop_assert_eq!(a.provenance(), b.provenance());
                prop_assert_eq!(a.score().map(f64::to_bits), b.score().map(f64::to_bits));
                prop_assert_eq!(a.image(), b.image());
            }
        }
    }
}
