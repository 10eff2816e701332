use super::skeleton::Skeleton;
use crate::sample::{Convention, ImageBuffer};

/// Per-bone colors (RGB, 0..=255), indexed like [`super::BONES`].
pub const BONE_PALETTE: [[u8; 3]; 17] = [
    [255, 0, 0],
    [255, 85, 0],
    [255, 170, 0],
    [255, 255, 0],
    [170, 255, 0],
    [85, 255, 0],
    [0, 255, 0],
    [0, 255, 85],
    [0, 255, 170],
    [0, 255, 255],
    [0, 170, 255],
    [0, 85, 255],
    [0, 0, 255],
    [85, 0, 255],
    [170, 0, 255],
    [255, 0, 255],
    [255, 0, 170],
];

/// Per-joint disc colors, indexed by [`super::Joint::index`].
pub const JOINT_PALETTE: [[u8; 3]; 18] = [
    [255, 255, 255],
    [255, 0, 85],
    [255, 128, 128],
    [255, 85, 0],
    [255, 170, 0],
    [255, 255, 0],
    [85, 255, 0],
    [0, 255, 0],
    [0, 255, 128],
    [0, 255, 255],
    [0, 170, 255],
    [0, 85, 255],
    [85, 0, 255],
    [170, 0, 255],
    [255, 0, 255],
    [255, 0, 170],
    [200, 200, 200],
    [128, 128, 255],
];

/// Stroke geometry in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseStyle {
    pub bone_half_width: f32,
    pub joint_radius: f32,
}

impl PoseStyle {
    /// Widths for a given output size: 0.75 px / 1 px at 32 px, growing
    /// linearly for larger outputs.
    pub fn for_size(width: usize, height: usize) -> Self {
        let scale = (width.min(height) as f32 / 32.0).max(1.0);
        Self {
            bone_half_width: 0.75 * scale,
            joint_radius: 1.0 * scale,
        }
    }
}

/// A rendered skeleton: bones over black, keypoint discs on top.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseMap {
    pub image: ImageBuffer,
    pub source_skeleton: Skeleton,
}

pub fn render_skeleton(skeleton: &Skeleton, width: usize, height: usize) -> PoseMap {
    render_skeleton_with(skeleton, width, height, PoseStyle::for_size(width, height))
}

pub fn render_skeleton_with(skeleton: &Skeleton, width: usize, height: usize, style: PoseStyle) -> PoseMap {
    let mut image = ImageBuffer::black(width, height, 3, Convention::Stored);
    let to_px = |x: f32, y: f32| (x * width as f32, y * height as f32);
    for (bone, a, b) in skeleton.present_bones() {
        let color = BONE_PALETTE[bone].map(f32::from);
        fill_capsule(&mut image, to_px(a.x, a.y), to_px(b.x, b.y), style.bone_half_width, &color);
    }
    for k in skeleton.keypoints() {
        let color = JOINT_PALETTE[k.joint.index()].map(f32::from);
        let p = to_px(k.x, k.y);
        fill_capsule(&mut image, p, p, style.joint_radius, &color);
    }
    PoseMap {
        image,
        source_skeleton: skeleton.clone(),
    }
}

/// Paints every pixel whose center lies within `radius` of segment `a`–`b`.
///
/// Coordinates are in pixels; pixel `(x, y)` has its center at
/// `(x + 0.5, y + 0.5)`. `color` has one entry per image channel.
pub fn fill_capsule(img: &mut ImageBuffer, a: (f32, f32), b: (f32, f32), radius: f32, color: &[f32]) {
    let (w, h) = (img.width(), img.height());
    let x_lo = ((a.0.min(b.0) - radius - 0.5).floor().max(0.0)) as usize;
    let y_lo = ((a.1.min(b.1) - radius - 0.5).floor().max(0.0)) as usize;
    let x_hi = ((a.0.max(b.0) + radius).ceil().max(0.0) as usize).min(w);
    let y_hi = ((a.1.max(b.1) + radius).ceil().max(0.0) as usize).min(h);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let r2 = radius * radius;
    for py in y_lo..y_hi {
        for px in x_lo..x_hi {
            let (cx, cy) = (px as f32 + 0.5, py as f32 + 0.5);
            let t = if len2 > 0.0 {
                (((cx - a.0) * dx + (cy - a.1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (qx, qy) = (a.0 + t * dx - cx, a.1 + t * dy - cy);
            if qx * qx + qy * qy <= r2 {
                for (c, &v) in color.iter().enumerate() {
                    img.set(c, py, px, v);
                }
            }
        }
    }
}

/// Mask of pixels with any channel above `threshold` (stored convention).
pub fn foreground_mask(img: &ImageBuffer, threshold: f32) -> Vec<bool> {
    let stored = img.to_stored();
    let plane = img.width() * img.height();
    (0..plane)
        .map(|i| (0..img.channels()).any(|c| stored.values()[c * plane + i] > threshold))
        .collect()
}
