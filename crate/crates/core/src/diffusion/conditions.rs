use rand::Rng;

use super::network::{EncoderSet, IMAGE_CHANNELS};
use crate::error::{Error, Result};
use crate::pose::PoseMap;
use crate::sample::{Convention, ImageBuffer};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Value written into occluded pixels of the masked source (mid-gray in the
/// model convention).
pub const NEUTRAL_FILL: f64 = 0.0;

/// Which conditioning branches a prediction sees. A dropped branch is
/// replaced by its learned null embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchKeep {
    /// The image-semantic branch: `f_st` and `i_sm`.
    pub image: bool,
    /// The pose branch: `p_st`.
    pub pose: bool,
}

impl BranchKeep {
    pub const ALL: Self = Self { image: true, pose: true };
    pub const IMAGE_ONLY: Self = Self { image: true, pose: false };
    pub const POSE_ONLY: Self = Self { image: false, pose: true };
    pub const NONE: Self = Self { image: false, pose: false };
}

/// Branch inputs and their embeddings for one generation.
///
/// The raw inputs are kept so training can recompute the trainable
/// embeddings with gradients; `f_st`, `p_st` and `i_sm` are the values
/// computed when the bundle was assembled (see [`ConditionBundle::refresh`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionBundle<S> {
    /// Source and target images side by side, `[3, h, 2w]`.
    pub image_pair: Tensor<S>,
    /// Source and target pose maps side by side, `[3, h, 2w]`.
    pub pose_pair: Tensor<S>,
    /// Masked source followed by the indicator channel, `[4, h, w]`.
    pub mask_input: Tensor<S>,
    /// 1 for visible, 0 for occluded pixels, `[1, h, w]`.
    pub indicator: Tensor<S>,
    /// Output of the frozen semantic encoder over `image_pair`.
    pub semantic_features: Tensor<S>,
    pub f_st: Tensor<S>,
    pub p_st: Tensor<S>,
    pub i_sm: Tensor<S>,
}

impl<S: Scalar> ConditionBundle<S> {
    pub fn height(&self) -> usize {
        self.indicator.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.indicator.shape()[2]
    }

    /// Shape of the image being generated.
    pub fn image_shape(&self) -> [usize; 3] {
        [IMAGE_CHANNELS, self.height(), self.width()]
    }

    pub fn masked_source(&self) -> Tensor<S> {
        self.mask_input.split_channels(&[IMAGE_CHANNELS, 1]).swap_remove(0)
    }

    /// Recomputes the embeddings with the current encoder weights.
    pub fn refresh(&mut self, encoders: &EncoderSet<S>) {
        self.f_st = encoders.f_st(&self.semantic_features);
        self.p_st = encoders.p_st(&self.pose_pair);
        self.i_sm = encoders.i_sm(&self.mask_input);
    }
}

/// The `{0, 1}` indicator of a mask: nonzero mask values mark visible pixels.
///
/// A mask is binary when every value is 0 or 1, or, for stored-convention
/// masks, 0 or 255.
pub fn indicator_from_mask(mask: &ImageBuffer) -> Result<Vec<f32>> {
    if mask.channels() != 1 {
        return Err(Error::Invalid(format!(
            "mask must have 1 channel, found {}",
            mask.channels()
        )));
    }
    let stored = mask.convention() == Convention::Stored;
    mask.values()
        .iter()
        .map(|&v| match v {
            0.0 => Ok(0.0),
            1.0 => Ok(1.0),
            255.0 if stored => Ok(1.0),
            other => Err(Error::NonBinaryMask(other)),
        })
        .collect()
}

fn check_size(what: &str, img: &ImageBuffer, width: usize, height: usize, channels: usize) -> Result<()> {
    if img.width() != width || img.height() != height {
        return Err(Error::SizeMismatch(format!(
            "{what} is {}x{}, expected {width}x{height}",
            img.width(),
            img.height()
        )));
    }
    if img.channels() != channels {
        return Err(Error::SizeMismatch(format!(
            "{what} has {} channels, expected {channels}",
            img.channels()
        )));
    }
    Ok(())
}

/// Builds the three conditioning branches and their embeddings.
///
/// Every image must match the encoders' square resolution; the mask must
/// be a binary single-channel map of the same size.
pub fn assemble_conditions<S: Scalar>(
    source: &ImageBuffer,
    target: &ImageBuffer,
    source_pose: &PoseMap,
    target_pose: &PoseMap,
    mask: &ImageBuffer,
    encoders: &EncoderSet<S>,
) -> Result<ConditionBundle<S>> {
    let r = encoders.resolution();
    check_size("source image", source, r, r, IMAGE_CHANNELS)?;
    check_size("target image", target, r, r, IMAGE_CHANNELS)?;
    check_size("source pose map", &source_pose.image, r, r, IMAGE_CHANNELS)?;
    check_size("target pose map", &target_pose.image, r, r, IMAGE_CHANNELS)?;
    check_size("mask", mask, r, r, 1)?;
    let ind = indicator_from_mask(mask)?;

    let src = source.to_tensor::<S>();
    let image_pair = Tensor::concat_width(&[&src, &target.to_tensor()]);
    let pose_pair = Tensor::concat_width(&[&source_pose.image.to_tensor(), &target_pose.image.to_tensor()]);
    let indicator = Tensor::from_vec(&[1, r, r], ind.iter().map(|&v| S::of(v as f64)).collect());
    let plane = r * r;
    let fill = S::of(NEUTRAL_FILL);
    let mut masked = src;
    for (i, v) in masked.data_mut().iter_mut().enumerate() {
        if ind[i % plane] == 0.0 {
            *v = fill;
        }
    }
    let mask_input = Tensor::concat_channels(&[&masked, &indicator]);
    let semantic_features = encoders.semantic.features(&image_pair);
    let mut bundle = ConditionBundle {
        f_st: Tensor::zeros(&[0]),
        p_st: Tensor::zeros(&[0]),
        i_sm: Tensor::zeros(&[0]),
        image_pair,
        pose_pair,
        mask_input,
        indicator,
        semantic_features,
    };
    bundle.refresh(encoders);
    Ok(bundle)
}

/// Single-channel mask, 1 everywhere except one axis-aligned rectangle of
/// zeros covering between 20% and 50% of the image.
pub fn random_mask<R: Rng + ?Sized>(width: usize, height: usize, rng: &mut R) -> ImageBuffer {
    let area = (width * height) as f64;
    let (lo, hi) = ((0.2 * area).ceil() as usize, (0.5 * area).floor() as usize);
    let (rw, rh) = loop {
        let target = rng.gen_range(lo..=hi.max(lo));
        let rw = rng.gen_range(1..=width);
        let rh = (target as f64 / rw as f64).round() as usize;
        if (1..=height).contains(&rh) && (lo..=hi).contains(&(rw * rh)) {
            break (rw, rh);
        }
    };
    let x0 = rng.gen_range(0..=width - rw);
    let y0 = rng.gen_range(0..=height - rh);
    let mut values = vec![1.0f32; width * height];
    for y in y0..y0 + rh {
        values[y * width + x0..y * width + x0 + rw].fill(0.0);
    }
    ImageBuffer::new(width, height, 1, Convention::Model, values).expect("mask values are in range")
}

#[cfg(test)]
mod tests {
    use super::super::network::{Generator, GeneratorConfig};
    use super::*;
    use crate::pose::{render_skeleton, synth_pose};
    use crate::sample::Category;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise_image(w: usize, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..3 * w * w).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
        ImageBuffer::new(w, w, 3, Convention::Model, v).unwrap()
    }

    fn setup(w: usize) -> (Generator<f64>, ImageBuffer, ImageBuffer, PoseMap, PoseMap) {
        let g = Generator::new(GeneratorConfig {
            resolution: w,
            base_channels: 4,
            ..GeneratorConfig::default()
        })
        .unwrap();
        let a = render_skeleton(&synth_pose(Category::ALL[0], 1), w, w);
        let b = render_skeleton(&synth_pose(Category::ALL[2], 1), w, w);
        (g, noise_image(w, 1), noise_image(w, 2), a, b)
    }

    #[test]
    fn branch_inputs_are_twice_as_wide() {
        let (g, s, t, a, b) = setup(8);
        let ones = ImageBuffer::filled(8, 8, 1, Convention::Model, 1.0).unwrap();
        let bundle = assemble_conditions(&s, &t, &a, &b, &ones, g.encoders()).unwrap();
        assert_eq!(bundle.image_pair.shape(), &[3, 8, 16]);
        assert_eq!(bundle.pose_pair.shape(), &[3, 8, 16]);
        assert_eq!(bundle.p_st.shape(), &[8, 8, 8]);
        assert!(bundle.indicator.data().iter().all(|&v| v == 1.0));
        assert_eq!(bundle.masked_source(), s.to_tensor());
    }

    #[test]
    fn occluded_pixels_hold_the_neutral_fill() {
        let (g, s, t, a, b) = setup(16);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals = (0..256).map(|_| if rng.gen_bool(0.4) { 0.0 } else { 1.0 }).collect();
        let mask = ImageBuffer::new(16, 16, 1, Convention::Model, vals).unwrap();
        let bundle = assemble_conditions(&s, &t, &a, &b, &mask, g.encoders()).unwrap();
        let masked = bundle.masked_source();
        for c in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    let got = masked.data()[(c * 16 + y) * 16 + x];
                    let want = if mask.get(0, y, x) == 0.0 {
                        NEUTRAL_FILL
                    } else {
                        s.get(c, y, x) as f64
                    };
                    assert_eq!(got, want, "pixel ({c}, {y}, {x})");
                    assert_eq!(bundle.indicator.data()[y * 16 + x], mask.get(0, y, x) as f64);
                }
            }
        }
    }

    #[test]
    fn mismatched_sizes_and_soft_masks_are_rejected() {
        let (g, s, t, a, b) = setup(8);
        let ones = ImageBuffer::filled(8, 8, 1, Convention::Model, 1.0).unwrap();
        let small = noise_image(4, 3);
        assert!(matches!(
            assemble_conditions(&small, &t, &a, &b, &ones, g.encoders()),
            Err(Error::SizeMismatch(_))
        ));
        let soft = ImageBuffer::filled(8, 8, 1, Convention::Model, 0.5).unwrap();
        assert!(matches!(
            assemble_conditions(&s, &t, &a, &b, &soft, g.encoders()),
            Err(Error::NonBinaryMask(v)) if v == 0.5
        ));
    }

    #[test]
    fn stored_masks_use_255_for_visible() {
        let m = ImageBuffer::new(2, 1, 1, Convention::Stored, vec![0.0, 255.0]).unwrap();
        assert_eq!(indicator_from_mask(&m).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn random_masks_cover_a_fifth_to_a_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let m = random_mask(32, 32, &mut rng);
            let occluded = m.values().iter().filter(|&&v| v == 0.0).count() as f64 / 1024.0;
            assert!((0.2..=0.5).contains(&occluded), "{occluded}");
            assert!(indicator_from_mask(&m).is_ok());
        }
    }
}
