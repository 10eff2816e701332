//! Domain types shared by every stage: categories, images, labeled samples
//! and dataset manifests.

mod category;
mod image;
pub mod manifest;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use category::{Category, NUM_CATEGORIES};
pub use image::{Convention, ImageBuffer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
}

/// Where a sample's pixels live.
#[derive(Debug, Clone, PartialEq)]
pub enum ImageRef {
    /// Path relative to the manifest directory (or absolute).
    File(PathBuf),
    Memory(Arc<ImageBuffer>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    id: String,
    image: ImageRef,
    category: Category,
    provenance: Provenance,
    score: Option<f64>,
}

impl LabeledSample {
    pub fn new(
        id: impl Into<String>,
        image: ImageRef,
        category: Category,
        provenance: Provenance,
        score: Option<f64>,
    ) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Invalid("sample id must not be empty".into()));
        }
        validate_score(provenance, score, &id)?;
        Ok(Self {
            id,
            image,
            category,
            provenance,
            score,
        })
    }

    pub fn real(id: impl Into<String>, image: ImageRef, category: Category) -> Self {
        Self::new(id, image, category, Provenance::Real, None).expect("real sample without score")
    }

    pub fn synthetic(id: impl Into<String>, image: ImageRef, category: Category) -> Self {
        Self::new(id, image, category, Provenance::Synthetic, None).expect("unscored synthetic sample")
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn image(&self) -> &ImageRef {
        &self.image
    }
    pub fn category(&self) -> Category {
        self.category
    }
    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
    pub fn score(&self) -> Option<f64> {
        self.score
    }

    /// Copy of this sample carrying a quality score.
    pub fn with_score(&self, score: f64) -> Result<Self> {
        validate_score(self.provenance, Some(score), &self.id)?;
        Ok(Self {
            score: Some(score),
            ..self.clone()
        })
    }

    /// Copy of this sample pointing at a different image location.
    pub fn with_image(&self, image: ImageRef) -> Self {
        Self {
            image,
            ..self.clone()
        }
    }

    /// Loads the pixels, resolving relative paths against `root`.
    pub fn load_image(&self, root: Option<&Path>) -> Result<ImageBuffer> {
        match &self.image {
            ImageRef::Memory(img) => Ok((**img).clone()),
            ImageRef::File(p) => ImageBuffer::load_png(&resolve(root, p)),
        }
    }

    /// Encoded file bytes of the image (read from disk, or PNG-encoded).
    pub fn image_bytes(&self, root: Option<&Path>) -> Result<Vec<u8>> {
        match &self.image {
            ImageRef::Memory(img) => img.encode_png(),
            ImageRef::File(p) => {
                let path = resolve(root, p);
                std::fs::read(&path).map_err(|e| Error::io(path, e))
            }
        }
    }
}

fn validate_score(provenance: Provenance, score: Option<f64>, id: &str) -> Result<()> {
    match (provenance, score) {
        (Provenance::Real, Some(_)) => Err(Error::Invalid(format!(
            "real sample {id} must not carry a score"
        ))),
        (_, Some(s)) if !(0.0..=1.0).contains(&s) => Err(Error::Invalid(format!(
            "score {s} of sample {id} outside [0, 1]"
        ))),
        _ => Ok(()),
    }
}

pub(crate) fn resolve(root: Option<&Path>, p: &Path) -> PathBuf {
    match root {
        Some(r) if p.is_relative() => r.join(p),
        _ => p.to_path_buf(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
    SyntheticPool,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::SyntheticPool => "synthetic-pool",
        })
    }
}

/// Ordered collection of samples with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    records: Vec<LabeledSample>,
    split: Split,
    seed: u64,
    /// Directory relative image paths resolve against. Not serialized.
    root: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn new(records: Vec<LabeledSample>, split: Split, seed: u64) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Invalid(format!("duplicate sample id {:?}", r.id)));
            }
        }
        Ok(Self {
            records,
            split,
            seed,
            root: None,
        })
    }

    pub fn empty(split: Split) -> Self {
        Self::new(Vec::new(), split, 0).expect("empty manifest")
    }

    pub fn with_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.root = Some(root.into());
        self
    }

    pub fn records(&self) -> &[LabeledSample] {
        &self.records
    }
    pub fn into_records(self) -> Vec<LabeledSample> {
        self.records
    }
    pub fn split(&self) -> Split {
        self.split
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }
    pub fn len(&self) -> usize {
        self.records.len()
    }
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn load_image(&self, sample: &LabeledSample) -> Result<ImageBuffer> {
        sample.load_image(self.root())
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id()).collect()
    }

    /// Records of one class, in manifest order.
    pub fn of_category(&self, c: Category) -> impl Iterator<Item = &LabeledSample> {
        self.records.iter().filter(move |r| r.category == c)
    }

    /// Copy with every file reference made absolute, so the records stay
    /// valid when combined with records from another directory.
    pub fn absolutized(&self) -> Self {
        let records = self
            .records
            .iter()
            .map(|r| match &r.image {
                ImageRef::File(p) => r.with_image(ImageRef::File(resolve(self.root(), p))),
                ImageRef::Memory(_) => r.clone(),
            })
            .collect();
        Self {
            records,
            split: self.split,
            seed: self.seed,
            root: None,
        }
    }
}

/// Per-class record counts, indexed by category id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts(pub [usize; NUM_CATEGORIES]);

impl ClassCounts {
    pub fn get(&self, c: Category) -> usize {
        self.0[c.id()]
    }
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
    pub fn iter(&self) -> impl Iterator<Item = (Category, usize)> + '_ {
        Category::ALL.iter().map(move |&c| (c, self.get(c)))
    }
}

pub fn per_class_counts(manifest: &DatasetManifest) -> ClassCounts {
    let mut counts = ClassCounts::default();
    for r in manifest.records() {
        counts.0[r.category.id()] += 1;
    }
    counts
}
