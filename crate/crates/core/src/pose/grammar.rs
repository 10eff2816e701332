//! Category-conditioned pose sampler.
//!
//! Each class fixes where the wrists go (a box, or an arc of the steering
//! wheel) and how far the head turns; everything else is a seated upper
//! body with small jitter. Image coordinates are normalized with `y` growing
//! downwards. The camera faces the driver, so the driver's right side is on
//! the image's left.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::skeleton::{Joint, Keypoint, Skeleton};
use crate::sample::{Category, NUM_CATEGORIES};

/// Axis-aligned region in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub x0: f32,
    pub x1: f32,
    pub y0: f32,
    pub y1: f32,
}

impl Region {
    pub const fn new(x0: f32, x1: f32, y0: f32, y1: f32) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn contains(&self, x: f32, y: f32) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }
}

/// Where a wrist is placed for a class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WristTarget {
    Box(Region),
    /// Arc of the steering wheel between two angles (degrees, counter-clockwise
    /// from the positive x axis with y pointing up).
    Wheel { from_deg: f32, to_deg: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassPose {
    pub right_wrist: WristTarget,
    pub left_wrist: WristTarget,
    /// Head yaw in `[-1, 1]`; negative turns towards the image's left.
    pub head_turn: (f32, f32),
    /// Horizontal torso offset range.
    pub lean: (f32, f32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGrammar {
    pub classes: [ClassPose; NUM_CATEGORIES],
    pub wheel_center: (f32, f32),
    pub wheel_radius: f32,
}

const RIGHT_ON_WHEEL: WristTarget = WristTarget::Wheel {
    from_deg: 135.0,
    to_deg: 170.0,
};
const LEFT_ON_WHEEL: WristTarget = WristTarget::Wheel {
    from_deg: 10.0,
    to_deg: 45.0,
};
const STRAIGHT: (f32, f32) = (-0.15, 0.15);
const UPRIGHT: (f32, f32) = (-0.02, 0.02);

impl Default for PoseGrammar {
    fn default() -> Self {
        let class = |right_wrist, left_wrist| ClassPose {
            right_wrist,
            left_wrist,
            head_turn: STRAIGHT,
            lean: UPRIGHT,
        };
        let boxed = |x0, x1, y0, y1| WristTarget::Box(Region::new(x0, x1, y0, y1));
        Self {
            classes: [
                // C0 normal driving
                class(RIGHT_ON_WHEEL, LEFT_ON_WHEEL),
                // C1 texting, right hand low
                class(boxed(0.28, 0.40, 0.80, 0.92), LEFT_ON_WHEEL),
                // C2 phone at right ear
                class(boxed(0.32, 0.40, 0.22, 0.32), LEFT_ON_WHEEL),
                // C3 texting, left hand low
                class(RIGHT_ON_WHEEL, boxed(0.60, 0.72, 0.80, 0.92)),
                // C4 phone at left ear
                class(RIGHT_ON_WHEEL, boxed(0.60, 0.68, 0.22, 0.32)),
                // C5 multimedia console
                class(boxed(0.08, 0.20, 0.58, 0.70), LEFT_ON_WHEEL),
                // C6 drinking, hand at mouth
                class(boxed(0.44, 0.52, 0.34, 0.42), LEFT_ON_WHEEL),
                // C7 reaching behind
                ClassPose {
                    right_wrist: boxed(0.03, 0.14, 0.14, 0.28),
                    left_wrist: LEFT_ON_WHEEL,
                    head_turn: (-0.8, -0.4),
                    lean: (-0.07, -0.04),
                },
                // C8 makeup, hand above the eyes
                class(boxed(0.40, 0.50, 0.08, 0.16), LEFT_ON_WHEEL),
                // C9 talking to passenger, head turned
                ClassPose {
                    head_turn: (-1.0, -0.7),
                    ..class(RIGHT_ON_WHEEL, LEFT_ON_WHEEL)
                },
            ],
            wheel_center: (0.5, 0.74),
            wheel_radius: 0.2,
        }
    }
}

impl PoseGrammar {
    pub fn class(&self, c: Category) -> &ClassPose {
        &self.classes[c.id()]
    }

    fn wheel_point(&self, deg: f32) -> (f32, f32) {
        let rad = deg.to_radians();
        (
            self.wheel_center.0 + self.wheel_radius * rad.cos(),
            self.wheel_center.1 - self.wheel_radius * rad.sin(),
        )
    }

    /// Whether `(x, y)` satisfies a wrist target (within `tol` of the wheel arc).
    pub fn target_contains(&self, target: &WristTarget, x: f32, y: f32, tol: f32) -> bool {
        match target {
            WristTarget::Box(r) => r.contains(x, y),
            WristTarget::Wheel { from_deg, to_deg } => {
                let (dx, dy) = (x - self.wheel_center.0, self.wheel_center.1 - y);
                let r = (dx * dx + dy * dy).sqrt();
                let deg = dy.atan2(dx).to_degrees();
                (r - self.wheel_radius).abs() <= tol && deg >= from_deg - tol && deg <= to_deg + tol
            }
        }
    }

    fn sample_target<R: Rng>(&self, target: &WristTarget, rng: &mut R) -> (f32, f32) {
        match *target {
            WristTarget::Box(r) => (rng.gen_range(r.x0..=r.x1), rng.gen_range(r.y0..=r.y1)),
            WristTarget::Wheel { from_deg, to_deg } => self.wheel_point(rng.gen_range(from_deg..=to_deg)),
        }
    }

    /// Deterministic pose for `(category, seed)`.
    pub fn sample(&self, category: Category, seed: u64) -> Skeleton {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((category.id() as u64 + 1) << 56));
        let spec = self.class(category);
        let lean = rng.gen_range(spec.lean.0..=spec.lean.1);
        let turn = rng.gen_range(spec.head_turn.0..=spec.head_turn.1);
        let jx = rng.gen_range(-0.02f32..=0.02) + lean;
        let jy = rng.gen_range(-0.02f32..=0.02);
        let shoulder_half = rng.gen_range(0.13f32..=0.16);

        let neck = (0.5 + jx, 0.44 + jy);
        let head = (neck.0 + 0.3 * lean, neck.1 - 0.16);
        let face = turn * 0.05;
        let mut pts: Vec<(Joint, (f32, f32))> = vec![
            (Joint::Neck, neck),
            (Joint::RightShoulder, (neck.0 - shoulder_half, neck.1 + 0.04)),
            (Joint::LeftShoulder, (neck.0 + shoulder_half, neck.1 + 0.04)),
            (Joint::MidHip, (0.5 + 0.3 * jx, 0.95)),
            (Joint::RightHip, (0.5 + 0.3 * jx - 0.1, 0.95)),
            (Joint::LeftHip, (0.5 + 0.3 * jx + 0.1, 0.95)),
            (Joint::Chin, (head.0 + 0.6 * face, neck.1 - 0.06)),
            (Joint::Mouth, (head.0 + face, head.1 + 0.07)),
            (Joint::Nose, (head.0 + face, head.1 + 0.02)),
            (Joint::RightEye, (head.0 + face - 0.035, head.1 - 0.01)),
            (Joint::LeftEye, (head.0 + face + 0.035, head.1 - 0.01)),
            (Joint::RightEar, (head.0 + 0.5 * face - 0.075, head.1)),
            (Joint::LeftEar, (head.0 + 0.5 * face + 0.075, head.1)),
            (Joint::HeadTop, (head.0 + 0.3 * face, head.1 - 0.1)),
        ];

        let rw = self.sample_target(&spec.right_wrist, &mut rng);
        let lw = self.sample_target(&spec.left_wrist, &mut rng);
        let rs = pts[1].1;
        let ls = pts[2].1;
        let bend_r = rng.gen_range(0.03f32..=0.06);
        let bend_l = rng.gen_range(0.03f32..=0.06);
        pts.push((Joint::RightElbow, elbow(rs, rw, bend_r, -1.0)));
        pts.push((Joint::RightWrist, rw));
        pts.push((Joint::LeftElbow, elbow(ls, lw, bend_l, 1.0)));
        pts.push((Joint::LeftWrist, lw));

        let keypoints = pts
            .into_iter()
            .map(|(joint, (x, y))| Keypoint {
                joint,
                x: x.clamp(0.0, 1.0),
                y: y.clamp(0.0, 1.0),
                confidence: rng.gen_range(0.8f32..=1.0),
            })
            .collect();
        Skeleton::new(keypoints).expect("grammar produces valid skeletons")
    }
}

/// Elbow between shoulder and wrist, pushed outward (`side` = -1 for the
/// image-left arm) and down.
fn elbow(shoulder: (f32, f32), wrist: (f32, f32), bend: f32, side: f32) -> (f32, f32) {
    let mid = ((shoulder.0 + wrist.0) / 2.0, (shoulder.1 + wrist.1) / 2.0);
    (mid.0 + side * bend, mid.1 + 0.5 * bend)
}

/// Samples a skeleton for `category` from the default grammar.
pub fn synth_pose(category: Category, seed: u64) -> Skeleton {
    PoseGrammar::default().sample(category, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn same_seed_same_skeleton() {
        assert_eq!(synth_pose(Category::ALL[0], 7), synth_pose(Category::ALL[0], 7));
        assert_ne!(synth_pose(Category::ALL[0], 7), synth_pose(Category::ALL[0], 8));
    }

    #[test]
    fn phone_at_right_ear_keeps_wrist_in_head_box() {
        let grammar = PoseGrammar::default();
        let WristTarget::Box(region) = grammar.class(Category::ALL[2]).right_wrist else {
            panic!("C2 right wrist is a box target");
        };
        for seed in 0..200 {
            let s = grammar.sample(Category::ALL[2], seed);
            let w = s.get(Joint::RightWrist).unwrap();
            assert!(region.contains(w.x, w.y), "seed {seed}: ({}, {})", w.x, w.y);
        }
    }

    #[test]
    fn normal_driving_keeps_both_wrists_on_the_wheel() {
        let g = PoseGrammar::default();
        let spec = g.class(Category::ALL[0]);
        for seed in 0..50 {
            let s = g.sample(Category::ALL[0], seed);
            let r = s.get(Joint::RightWrist).unwrap();
            let l = s.get(Joint::LeftWrist).unwrap();
            assert!(g.target_contains(&spec.right_wrist, r.x, r.y, 1e-4));
            assert!(g.target_contains(&spec.left_wrist, l.x, l.y, 1e-4));
        }
    }

    proptest! {
        #[test]
        fn every_sample_is_a_full_valid_skeleton(cat in 0i64..10, seed in any::<u64>()) {
            let c = Category::from_id(cat).unwrap();
            let s = synth_pose(c, seed);
            prop_assert_eq!(s.keypoints().len(), 18);
            prop_assert!(Skeleton::new(s.keypoints().to_vec()).is_ok());
            for k in s.keypoints() {
                prop_assert!((0.0..=1.0).contains(&k.x) && (0.0..=1.0).contains(&k.y));
            }
            let spec = PoseGrammar::default().classes[c.id()];
            let g = PoseGrammar::default();
            let r = s.get(Joint::RightWrist).unwrap();
            let l = s.get(Joint::LeftWrist).unwrap();
            prop_assert!(g.target_contains(&spec.right_wrist, r.x, r.y, 1e-4));
            prop_assert!(g.target_contains(&spec.left_wrist, l.x, l.y, 1e-4));
        }
    }
}
