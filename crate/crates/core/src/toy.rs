//! Desk-scale stand-in for driver-camera footage: flat-shaded stick-figure
//! drivers whose arms and head follow category-conditioned skeletons.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{
    assemble_conditions, draw_noise, random_mask, training_step_with, ConditionBundle, EncoderSet,
    Generator, GeneratorConfig, GeneratorTrainer, NoiseSchedule, ScheduleConfig, TrainExample,
};
use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::pose::{fill_capsule, render_skeleton, synth_pose, Joint, PoseGrammar, PoseMap, Skeleton};
use crate::sample::{manifest, Category, Convention, DatasetManifest, ImageBuffer, ImageRef, LabeledSample, Split};
use crate::scalar::Scalar;

const SKIN_TONES: [[f32; 3]; 5] = [
    [224.0, 172.0, 105.0],
    [198.0, 134.0, 66.0],
    [141.0, 85.0, 36.0],
    [255.0, 219.0, 172.0],
    [241.0, 194.0, 125.0],
];

/// Appearance of one toy driver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Identity {
    pub background: [f32; 3],
    pub shirt: [f32; 3],
    pub skin: [f32; 3],
    pub hair: [f32; 3],
}

impl Identity {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut color = |lo: f32, hi: f32| [0; 3].map(|_| rng.gen_range(lo..=hi));
        let background = color(15.0, 60.0);
        let shirt = color(70.0, 235.0);
        let hair = color(10.0, 70.0);
        let base = SKIN_TONES[rng.gen_range(0..SKIN_TONES.len())];
        let skin = base.map(|v| (v + rng.gen_range(-12.0f32..=12.0)).clamp(0.0, 255.0));
        Self {
            background,
            shirt,
            skin,
            hair,
        }
    }
}

/// Renders a driver in `skeleton`'s pose as a stored-convention RGB image
/// with uniform pixel noise of amplitude `noise`.
pub fn render_photo(
    skeleton: &Skeleton,
    identity: &Identity,
    resolution: usize,
    noise: f32,
    noise_seed: u64,
) -> ImageBuffer {
    let r = resolution as f32;
    let mut img = ImageBuffer::black(resolution, resolution, 3, Convention::Stored);
    for c in 0..3 {
        for y in 0..resolution {
            for x in 0..resolution {
                img.set(c, y, x, identity.background[c]);
            }
        }
    }
    let px = |j: Joint| skeleton.get(j).map(|k| (k.x * r, k.y * r));
    let sleeve = identity.shirt.map(|v| v * 0.75);

    if let (Some(neck), Some(hip)) = (px(Joint::Neck), px(Joint::MidHip)) {
        fill_capsule(&mut img, neck, hip, 0.11 * r, &identity.shirt);
    }
    if let (Some(a), Some(b)) = (px(Joint::RightShoulder), px(Joint::LeftShoulder)) {
        fill_capsule(&mut img, a, b, 0.06 * r, &identity.shirt);
    }
    let grammar = PoseGrammar::default();
    let (cx, cy) = (grammar.wheel_center.0 * r, grammar.wheel_center.1 * r);
    let wr = grammar.wheel_radius * r;
    let wheel = [105.0, 105.0, 110.0];
    for i in 0..24 {
        let a0 = (i as f32 * 15.0).to_radians();
        let a1 = ((i + 1) as f32 * 15.0).to_radians();
        let p0 = (cx + wr * a0.cos(), cy - wr * a0.sin());
        let p1 = (cx + wr * a1.cos(), cy - wr * a1.sin());
        fill_capsule(&mut img, p0, p1, 0.02 * r, &wheel);
    }
    let head_joints = [Joint::Nose, Joint::RightEar, Joint::LeftEar, Joint::HeadTop, Joint::Chin];
    let pts: Vec<(f32, f32)> = head_joints.iter().filter_map(|&j| px(j)).collect();
    if !pts.is_empty() {
        let n = pts.len() as f32;
        let centre = (pts.iter().map(|p| p.0).sum::<f32>() / n, pts.iter().map(|p| p.1).sum::<f32>() / n);
        if let Some(top) = px(Joint::HeadTop) {
            fill_capsule(&mut img, top, top, 0.07 * r, &identity.hair);
        }
        fill_capsule(&mut img, centre, centre, 0.085 * r, &identity.skin);
        for j in [Joint::RightEye, Joint::LeftEye, Joint::Mouth] {
            if let Some(p) = px(j) {
                fill_capsule(&mut img, p, p, 0.025 * r, &[30.0, 20.0, 20.0]);
            }
        }
    }
    for (s, e, w) in [
        (Joint::RightShoulder, Joint::RightElbow, Joint::RightWrist),
        (Joint::LeftShoulder, Joint::LeftElbow, Joint::LeftWrist),
    ] {
        if let (Some(s), Some(e), Some(w)) = (px(s), px(e), px(w)) {
            fill_capsule(&mut img, s, e, 0.07 * r, &sleeve);
            fill_capsule(&mut img, e, w, 0.07 * r, &sleeve);
            fill_capsule(&mut img, w, w, 0.08 * r, &identity.skin);
        }
    }
    if noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let values: Vec<f32> = img
            .values()
            .iter()
            .map(|&v| (v + rng.gen_range(-noise..=noise)).round().clamp(0.0, 255.0))
            .collect();
        img = ImageBuffer::new(resolution, resolution, 3, Convention::Stored, values).expect("clamped");
    }
    img
}

/// Domain-wide rendering knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyDomain {
    pub resolution: usize,
    pub noise: f32,
}

impl Default for ToyDomain {
    fn default() -> Self {
        Self {
            resolution: 32,
            noise: 6.0,
        }
    }
}

/// A driver photo with the skeleton it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPhoto {
    pub image: ImageBuffer,
    pub skeleton: Skeleton,
    pub category: Category,
}

impl ToyPhoto {
    pub fn pose_map(&self) -> PoseMap {
        render_skeleton(&self.skeleton, self.image.width(), self.image.height())
    }
}

/// Independent random streams for the different uses of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    GeneratorTraining = 1,
    Dataset = 2,
    GenerationSources = 3,
}

fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) | index);
    rng
}

impl ToyDomain {
    /// Photo number `index` of `stream`: a fresh identity in a pose of `category`.
    pub fn photo(&self, seed: u64, stream: Stream, index: u64, category: Category) -> ToyPhoto {
        let mut rng = stream_rng(seed, stream, index);
        let identity = Identity::random(&mut rng);
        let skeleton = synth_pose(category, rng.gen());
        let image = render_photo(&skeleton, &identity, self.resolution, self.noise, rng.gen());
        ToyPhoto {
            image,
            skeleton,
            category,
        }
    }

    /// Same identity in two poses plus an occlusion mask, for generator training.
    pub fn training_pair(&self, seed: u64, index: u64) -> ToyPair {
        let mut rng = stream_rng(seed, Stream::GeneratorTraining, index);
        let identity = Identity::random(&mut rng);
        let (cs, ct) = (
            Category::ALL[rng.gen_range(0..10)],
            Category::ALL[rng.gen_range(0..10)],
        );
        let (ss, st) = (synth_pose(cs, rng.gen()), synth_pose(ct, rng.gen()));
        let source = render_photo(&ss, &identity, self.resolution, self.noise, rng.gen());
        let target = render_photo(&st, &identity, self.resolution, self.noise, rng.gen());
        let mask = random_mask(self.resolution, self.resolution, &mut rng);
        ToyPair {
            source_pose: render_skeleton(&ss, self.resolution, self.resolution),
            target_pose: render_skeleton(&st, self.resolution, self.resolution),
            source,
            target,
            mask,
            category: ct,
        }
    }

    /// `per_class` photos of every category, class-major, ids `"{prefix}-c{k}-{i:04}"`.
    pub fn dataset(&self, seed: u64, per_class: usize, prefix: &str) -> Vec<(String, ToyPhoto)> {
        let mut out = Vec::with_capacity(per_class * 10);
        for c in Category::ALL {
            for i in 0..per_class {
                let index = (c.id() * per_class + i) as u64;
                out.push((
                    format!("{prefix}-c{}-{i:04}", c.id()),
                    self.photo(seed, Stream::Dataset, index, c),
                ));
            }
        }
        out
    }

    /// Writes a real dataset under `dir`: `images/<id>.png`, the skeleton
    /// each photo was drawn from as `poses/<id>.json`, and `manifest.jsonl`.
    pub fn write_dataset(&self, dir: &Path, seed: u64, per_class: usize, prefix: &str, split: Split) -> Result<DatasetManifest> {
        for sub in ["images", POSE_DIR] {
            let d = dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let mut records = Vec::new();
        for (id, photo) in self.dataset(seed, per_class, prefix) {
            let rel = Path::new("images").join(format!("{id}.png"));
            photo.image.save_png(&dir.join(&rel))?;
            let pose_path = pose_sidecar(dir, &id);
            let json = serde_json::to_string(&photo.skeleton).expect("skeleton serializes");
            std::fs::write(&pose_path, json).map_err(|e| Error::io(&pose_path, e))?;
            records.push(LabeledSample::real(id, ImageRef::File(rel), photo.category));
        }
        let m = DatasetManifest::new(records, split, seed)?.with_root(dir);
        manifest::write_manifest(&m, &dir.join("manifest.jsonl"))?;
        Ok(m)
    }
}

/// Directory, relative to a dataset root, holding skeleton sidecar files.
pub const POSE_DIR: &str = "poses";

/// Where the skeleton of sample `id` is stored under `root`.
pub fn pose_sidecar(root: &Path, id: &str) -> std::path::PathBuf {
    root.join(POSE_DIR).join(format!("{id}.json"))
}

/// One generator training example before encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPair {
    pub source: ImageBuffer,
    pub target: ImageBuffer,
    pub source_pose: PoseMap,
    pub target_pose: PoseMap,
    pub mask: ImageBuffer,
    pub category: Category,
}

impl ToyPair {
    pub fn example<S: Scalar>(&self, encoders: &EncoderSet<S>) -> Result<TrainExample<S>> {
        let bundle = assemble_conditions(
            &self.source,
            &self.target,
            &self.source_pose,
            &self.target_pose,
            &self.mask,
            encoders,
        )?;
        Ok(TrainExample {
            x0: self.target.to_tensor(),
            bundle,
        })
    }
}

/// Conditions for generating a new sample of `category` from a source photo.
///
/// No target image exists at generation time, so the source fills both
/// slots of the image pair.
pub fn generation_bundle<S: Scalar>(
    source: &ToyPhoto,
    target_pose: &PoseMap,
    mask: &ImageBuffer,
    encoders: &EncoderSet<S>,
) -> Result<ConditionBundle<S>> {
    assemble_conditions(
        &source.image,
        &source.image,
        &source.pose_map(),
        target_pose,
        mask,
        encoders,
    )
}

/// Schedule length used for toy runs. With the default betas, 200 steps
/// leave about 13% of the signal at the last step, so sampling from pure
/// noise starts off the training distribution; 500 steps bring that under 1%.
pub const TOY_SCHEDULE_STEPS: usize = 500;

/// The default linear betas stretched over [`TOY_SCHEDULE_STEPS`].
pub fn toy_schedule() -> ScheduleConfig {
    ScheduleConfig {
        steps: TOY_SCHEDULE_STEPS,
        ..ScheduleConfig::default()
    }
}

/// Budget and optimizer settings for toy generator training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorTraining {
    pub iterations: usize,
    pub batch_size: usize,
    /// Distinct training pairs, drawn at random and rendered on demand.
    pub pool_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub drop_prob: f64,
    pub seed: u64,
}

impl Default for GeneratorTraining {
    fn default() -> Self {
        Self {
            iterations: 8000,
            batch_size: 4,
            pool_size: 1 << 20,
            lr: 2e-3,
            weight_decay: 0.0,
            drop_prob: crate::diffusion::DEFAULT_DROP_PROB,
            seed: 0,
        }
    }
}

/// Trains a fresh generator on toy pairs, calling `on_step(iteration, loss)`
/// after every optimizer step. Returns the generator and the loss history.
pub fn train_generator(
    domain: &ToyDomain,
    network: GeneratorConfig,
    schedule: &NoiseSchedule<f32>,
    budget: &GeneratorTraining,
    mut on_step: impl FnMut(usize, f32),
) -> Result<(Generator<f32>, Vec<f32>)> {
    if budget.batch_size == 0 || budget.pool_size == 0 {
        return Err(Error::Invalid("batch_size and pool_size must be positive".into()));
    }
    let generator = Generator::<f32>::new(GeneratorConfig {
        resolution: domain.resolution,
        ..network
    })?;
    let mut trainer = GeneratorTrainer::new(generator, AdamConfig::adam(budget.lr, budget.weight_decay));
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed ^ 0x7261_696e);
    let mut losses = Vec::with_capacity(budget.iterations);
    for it in 0..budget.iterations {
        let batch: Vec<TrainExample<f32>> = (0..budget.batch_size)
            .map(|_| {
                let i = rng.gen_range(0..budget.pool_size as u64);
                domain.training_pair(budget.seed, i).example(trainer.generator.encoders())
            })
            .collect::<Result<_>>()?;
        let draws = draw_noise(&batch, schedule, budget.drop_prob, &mut rng)?;
        let loss = training_step_with(&batch, &mut trainer, schedule, &draws)?;
        on_step(it, loss);
        losses.push(loss);
    }
    Ok((trainer.generator, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::foreground_mask;

    #[test]
    fn photos_are_deterministic() {
        let d = ToyDomain::default();
        let a = d.photo(3, Stream::Dataset, 5, Category::ALL[2]);
        assert_eq!(a, d.photo(3, Stream::Dataset, 5, Category::ALL[2]));
        assert_ne!(a.image, d.photo(3, Stream::Dataset, 6, Category::ALL[2]).image);
    }

    #[test]
    fn hands_are_drawn_at_the_wrists() {
        let d = ToyDomain { noise: 0.0, ..ToyDomain::default() };
        let p = d.photo(1, Stream::Dataset, 0, Category::ALL[2]);
        let w = p.skeleton.get(Joint::RightWrist).unwrap();
        let (x, y) = ((w.x * 32.0) as usize, (w.y * 32.0) as usize);
        let bg = p.image.get(0, 0, 0);
        assert!((0..3).any(|c| p.image.get(c, y, x) != bg));
    }

    #[test]
    fn training_pairs_share_identity_but_not_pose() {
        let d = ToyDomain::default();
        let pair = d.training_pair(0, 3);
        assert_eq!(pair.source.width(), 32);
        assert_ne!(
            foreground_mask(&pair.source_pose.image, 0.0),
            foreground_mask(&pair.target_pose.image, 0.0)
        );
    }

    #[test]
    fn dataset_ids_are_class_major() {
        let d = ToyDomain::default();
        let set = d.dataset(0, 2, "real");
        assert_eq!(set.len(), 20);
        assert_eq!(set[0].0, "real-c0-0000");
        assert_eq!(set[3].1.category, Category::ALL[1]);
    }
}
