use crate::error::{Error, Result};
use crate::pose::{foreground_mask, PoseMap};
use crate::sample::ImageBuffer;

/// A pose-map pixel counts as skeleton when any stored channel exceeds this.
pub const POSE_THRESHOLD: f32 = 0.0;

/// An image pixel counts as an edge when its internal morphological
/// gradient, on a `[0, 1]` intensity scale, exceeds this.
pub const GRADIENT_THRESHOLD: f32 = 0.15;

/// Half-width of the square neighbourhood used for the gradient. At 2, limbs
/// up to about 5 px wide are marked right through their centre line.
pub const GRADIENT_RADIUS: usize = 2;

/// Per pixel: the largest drop, over channels, from the pixel to the
/// darkest in-bounds pixel of its `(2 * GRADIENT_RADIUS + 1)²`
/// neighbourhood. Values on `[0, 1]`.
pub fn internal_gradient(image: &ImageBuffer) -> Vec<f32> {
    let stored = image.to_stored();
    let (w, h) = (image.width(), image.height());
    let mut out = vec![0.0f32; w * h];
    for c in 0..image.channels() {
        for y in 0..h {
            for x in 0..w {
                let v = stored.get(c, y, x);
                let mut lo = v;
                let r = GRADIENT_RADIUS;
                for ny in y.saturating_sub(r)..(y + r + 1).min(h) {
                    for nx in x.saturating_sub(r)..(x + r + 1).min(w) {
                        lo = lo.min(stored.get(c, ny, nx));
                    }
                }
                let g = (v - lo) / 255.0;
                out[y * w + x] = out[y * w + x].max(g);
            }
        }
    }
    out
}

/// Pixels whose internal gradient exceeds [`GRADIENT_THRESHOLD`].
pub fn edge_mask(image: &ImageBuffer) -> Vec<bool> {
    internal_gradient(image)
        .into_iter()
        .map(|g| g > GRADIENT_THRESHOLD)
        .collect()
}

/// Overlap coefficient `|A ∩ B| / min(|A|, |B|)` between the pose map's
/// skeleton pixels `A` and the image's edge pixels `B`; 0 when either set
/// is empty.
pub fn pose_alignment(image: &ImageBuffer, target: &PoseMap) -> Result<f64> {
    if !image.same_size(&target.image) {
        return Err(Error::SizeMismatch(format!(
            "image {}x{} vs pose map {}x{}",
            image.width(),
            image.height(),
            target.image.width(),
            target.image.height()
        )));
    }
    let a = foreground_mask(&target.image, POSE_THRESHOLD);
    let b = edge_mask(image);
    let (na, nb) = (a.iter().filter(|&&v| v).count(), b.iter().filter(|&&v| v).count());
    if na == 0 || nb == 0 {
        return Ok(0.0);
    }
    let both = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
    Ok(both as f64 / na.min(nb) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{render_skeleton, synth_pose};
    use crate::sample::{Category, Convention};

    fn shifted(img: &ImageBuffer, dx: isize, dy: isize) -> ImageBuffer {
        let (w, h) = (img.width(), img.height());
        let mut out = ImageBuffer::black(w, h, img.channels(), img.convention());
        for c in 0..img.channels() {
            for y in 0..h {
                for x in 0..w {
                    let (sx, sy) = (x as isize - dx, y as isize - dy);
                    if (0..w as isize).contains(&sx) && (0..h as isize).contains(&sy) {
                        out.set(c, y, x, img.get(c, sy as usize, sx as usize));
                    }
                }
            }
        }
        out
    }

    /// Set-based recomputation with an explicit neighbourhood scan.
    fn brute_force(image: &ImageBuffer, pose: &ImageBuffer) -> f64 {
        let (w, h) = (image.width() as isize, image.height() as isize);
        let mut a = std::collections::HashSet::new();
        let mut b = std::collections::HashSet::new();
        for y in 0..h {
            for x in 0..w {
                if (0..3).any(|c| pose.get(c, y as usize, x as usize) > 0.0) {
                    a.insert((x, y));
                }
                let mut best = 0.0f32;
                for c in 0..3 {
                    let v = image.get(c, y as usize, x as usize);
                    let mut lo = v;
                    let r = GRADIENT_RADIUS as isize;
                    for (ox, oy) in (-r..=r).flat_map(|i| (-r..=r).map(move |j| (i, j))) {
                        let (nx, ny) = (x + ox, y + oy);
                        if nx >= 0 && ny >= 0 && nx < w && ny < h {
                            lo = lo.min(image.get(c, ny as usize, nx as usize));
                        }
                    }
                    best = best.max((v - lo) / 255.0);
                }
                if best > GRADIENT_THRESHOLD {
                    b.insert((x, y));
                }
            }
        }
        if a.is_empty() || b.is_empty() {
            return 0.0;
        }
        a.intersection(&b).count() as f64 / a.len().min(b.len()) as f64
    }

    #[test]
    fn a_pose_map_aligns_with_itself() {
        for c in Category::ALL {
            let p = render_skeleton(&synth_pose(c, 3), 32, 32);
            assert_eq!(pose_alignment(&p.image, &p).unwrap(), 1.0);
        }
    }

    #[test]
    fn blank_image_has_zero_alignment() {
        let p = render_skeleton(&synth_pose(Category::ALL[4], 0), 32, 32);
        let blank = ImageBuffer::black(32, 32, 3, Convention::Stored);
        assert_eq!(pose_alignment(&blank, &p).unwrap(), 0.0);
    }

    #[test]
    fn shifted_copy_scores_below_one_and_matches_brute_force() {
        let p = render_skeleton(&synth_pose(Category::ALL[2], 8), 32, 32);
        let moved = shifted(&p.image, 4, 0);
        let got = pose_alignment(&moved, &p).unwrap();
        assert!(got < 1.0);
        assert_eq!(got, brute_force(&moved, &p.image));
    }

    #[test]
    fn joint_translation_leaves_alignment_unchanged() {
        let p = render_skeleton(&synth_pose(Category::ALL[0], 1), 64, 64);
        let img = shifted(&p.image, 3, -2);
        let base = pose_alignment(&img, &p).unwrap();
        let moved = PoseMap {
            image: shifted(&p.image, -2, 1),
            source_skeleton: p.source_skeleton.clone(),
        };
        let after = pose_alignment(&shifted(&img, -2, 1), &moved).unwrap();
        assert_eq!(base, after);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let p = render_skeleton(&synth_pose(Category::ALL[0], 1), 32, 32);
        let small = ImageBuffer::black(16, 16, 3, Convention::Stored);
        assert!(matches!(pose_alignment(&small, &p), Err(Error::SizeMismatch(_))));
    }
}
