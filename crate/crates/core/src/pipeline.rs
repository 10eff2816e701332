//! Building a synthetic pool: pose-guided generation from real sources
//! toward synthesized target poses, written out as PNG files plus a manifest.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{
    assemble_conditions, random_mask, sample_many, ConditionBundle, Generator, NoiseSchedule, SamplerConfig,
};
use crate::error::{Error, Result};
use crate::pose::{extract_pose, render_skeleton, synth_pose, PoseExtractor, PoseMap, Skeleton};
use crate::sample::{manifest, Category, DatasetManifest, ImageBuffer, ImageRef, LabeledSample, Split};
use crate::scalar::Scalar;
use crate::toy::pose_sidecar;

/// A real photo with its pose, usable as a generation source.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSource {
    pub id: String,
    pub image: ImageBuffer,
    pub pose: PoseMap,
    pub category: Category,
}

/// Loads every record of `manifest` as a generation source. The pose comes
/// from the record's skeleton sidecar when one exists under the manifest
/// root, otherwise from `extractor`.
pub fn load_pose_sources(
    manifest: &DatasetManifest,
    extractor: Option<&dyn PoseExtractor>,
) -> Result<Vec<PoseSource>> {
    manifest
        .records()
        .iter()
        .map(|r| {
            let image = manifest.load_image(r)?;
            let sidecar = manifest.root().map(|root| pose_sidecar(root, r.id()));
            let skeleton = match sidecar.filter(|p| p.exists()) {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    let raw: Skeleton = serde_json::from_str(&text)
                        .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
                    Skeleton::new(raw.keypoints().to_vec())
                        .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?
                }
                None => extract_pose(&image, extractor)?,
            };
            Ok(PoseSource {
                id: r.id().to_string(),
                pose: render_skeleton(&skeleton, image.width(), image.height()),
                image,
                category: r.category(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolRequest {
    pub per_class: usize,
    /// Drives target poses, masks and source choice. Sampling noise comes
    /// from `sampler.seed`.
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub threads: usize,
}

/// One generated image with the pose it was asked to follow.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub id: String,
    pub category: Category,
    pub source_id: String,
    pub target_pose: PoseMap,
    pub image: ImageBuffer,
}

fn job_rng(seed: u64, c: Category, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x706f_6f6c);
    rng.set_stream(((c.id() as u64) << 32) | i as u64);
    rng
}

/// `per_class` images of every category, ids `"{prefix}-c{k}-{i:04}"`.
/// Image `i` of class `c` takes a source of that class chosen at random, a
/// fresh target pose of `c` and a random occlusion mask.
pub fn generate<S: Scalar>(
    generator: &Generator<S>,
    schedule: &NoiseSchedule<S>,
    sources: &[PoseSource],
    request: &PoolRequest,
    prefix: &str,
) -> Result<Vec<Generated>> {
    request.sampler.validate()?;
    let r = generator.config().resolution;
    let mut jobs = Vec::new();
    let mut bundles: Vec<ConditionBundle<S>> = Vec::new();
    for c in Category::ALL {
        if request.per_class == 0 {
            break;
        }
        let members: Vec<&PoseSource> = sources.iter().filter(|s| s.category == c).collect();
        if members.is_empty() {
            return Err(Error::Shortfall {
                category: c.code(),
                needed: 1,
                available: 0,
                shortfall: 1,
            });
        }
        for i in 0..request.per_class {
            let mut rng = job_rng(request.seed, c, i);
            let source = members[rng.gen_range(0..members.len())];
            let target_pose = render_skeleton(&synth_pose(c, rng.gen()), r, r);
            let mask = random_mask(r, r, &mut rng);
            bundles.push(assemble_conditions(
                &source.image,
                &source.image,
                &source.pose,
                &target_pose,
                &mask,
                generator.encoders(),
            )?);
            jobs.push((format!("{prefix}-c{}-{i:04}", c.id()), c, source.id.clone(), target_pose));
        }
    }
    let images = sample_many(generator, &bundles, schedule, &request.sampler, request.threads)?;
    Ok(jobs
        .into_iter()
        .zip(images)
        .map(|((id, category, source_id, target_pose), image)| Generated {
            id,
            category,
            source_id,
            target_pose,
            image,
        })
        .collect())
}

/// Writes `images/<id>.png` and `manifest.jsonl` under `dir`; records are
/// synthetic and unscored.
pub fn write_pool(generated: &[Generated], dir: &Path, seed: u64) -> Result<DatasetManifest> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut records = Vec::with_capacity(generated.len());
    for g in generated {
        let rel = Path::new("images").join(format!("{}.png", g.id));
        g.image.save_png(&dir.join(&rel))?;
        records.push(LabeledSample::synthetic(g.id.clone(), ImageRef::File(rel), g.category));
    }
    let m = DatasetManifest::new(records, Split::SyntheticPool, seed)?.with_root(dir);
    manifest::write_manifest(&m, &dir.join("manifest.jsonl"))?;
    Ok(m)
}
