use std::fmt;

use serde::{Deserialize, Serialize};

/// The 18-point upper-body keypoint vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Joint {
    HeadTop,
    Nose,
    Neck,
    RightShoulder,
    RightElbow,
    RightWrist,
    LeftShoulder,
    LeftElbow,
    LeftWrist,
    RightHip,
    LeftHip,
    RightEye,
    LeftEye,
    RightEar,
    LeftEar,
    Mouth,
    Chin,
    MidHip,
}

impl Joint {
    pub const ALL: [Joint; 18] = [
        Joint::HeadTop,
        Joint::Nose,
        Joint::Neck,
        Joint::RightShoulder,
        Joint::RightElbow,
        Joint::RightWrist,
        Joint::LeftShoulder,
        Joint::LeftElbow,
        Joint::LeftWrist,
        Joint::RightHip,
        Joint::LeftHip,
        Joint::RightEye,
        Joint::LeftEye,
        Joint::RightEar,
        Joint::LeftEar,
        Joint::Mouth,
        Joint::Chin,
        Joint::MidHip,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Joint::HeadTop => "head_top",
            Joint::Nose => "nose",
            Joint::Neck => "neck",
            Joint::RightShoulder => "right_shoulder",
            Joint::RightElbow => "right_elbow",
            Joint::RightWrist => "right_wrist",
            Joint::LeftShoulder => "left_shoulder",
            Joint::LeftElbow => "left_elbow",
            Joint::LeftWrist => "left_wrist",
            Joint::RightHip => "right_hip",
            Joint::LeftHip => "left_hip",
            Joint::RightEye => "right_eye",
            Joint::LeftEye => "left_eye",
            Joint::RightEar => "right_ear",
            Joint::LeftEar => "left_ear",
            Joint::Mouth => "mouth",
            Joint::Chin => "chin",
            Joint::MidHip => "mid_hip",
        }
    }

    pub fn from_name(name: &str) -> Option<Joint> {
        Joint::ALL.iter().copied().find(|j| j.name() == name)
    }
}

impl fmt::Display for Joint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Limbs, in palette order.
pub const BONES: [(Joint, Joint); 17] = [
    (Joint::Neck, Joint::RightShoulder),
    (Joint::RightShoulder, Joint::RightElbow),
    (Joint::RightElbow, Joint::RightWrist),
    (Joint::Neck, Joint::LeftShoulder),
    (Joint::LeftShoulder, Joint::LeftElbow),
    (Joint::LeftElbow, Joint::LeftWrist),
    (Joint::Neck, Joint::MidHip),
    (Joint::MidHip, Joint::RightHip),
    (Joint::MidHip, Joint::LeftHip),
    (Joint::Neck, Joint::Chin),
    (Joint::Chin, Joint::Mouth),
    (Joint::Mouth, Joint::Nose),
    (Joint::Nose, Joint::RightEye),
    (Joint::Nose, Joint::LeftEye),
    (Joint::RightEye, Joint::RightEar),
    (Joint::LeftEye, Joint::LeftEar),
    (Joint::Nose, Joint::HeadTop),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub joint: Joint,
    /// Normalized horizontal position in `[0, 1]`.
    pub x: f32,
    /// Normalized vertical position in `[0, 1]`, growing downwards.
    pub y: f32,
    pub confidence: f32,
}

/// A set of keypoints over the fixed vocabulary, each joint at most once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    keypoints: Vec<Keypoint>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SkeletonError {
    #[error("keypoint {joint} has coordinate ({x}, {y}) outside [0, 1]")]
    OutOfRange { joint: Joint, x: f32, y: f32 },
    #[error("keypoint {joint} has confidence {confidence} outside [0, 1]")]
    BadConfidence { joint: Joint, confidence: f32 },
    #[error("keypoint {0} appears more than once")]
    Duplicate(Joint),
}

impl Skeleton {
    pub fn new(keypoints: Vec<Keypoint>) -> Result<Self, SkeletonError> {
        let mut seen = [false; 18];
        for k in &keypoints {
            let in_unit = |v: f32| (0.0..=1.0).contains(&v);
            if !in_unit(k.x) || !in_unit(k.y) {
                return Err(SkeletonError::OutOfRange {
                    joint: k.joint,
                    x: k.x,
                    y: k.y,
                });
            }
            if !in_unit(k.confidence) {
                return Err(SkeletonError::BadConfidence {
                    joint: k.joint,
                    confidence: k.confidence,
                });
            }
            if std::mem::replace(&mut seen[k.joint.index()], true) {
                return Err(SkeletonError::Duplicate(k.joint));
            }
        }
        Ok(Self { keypoints })
    }

    pub fn empty() -> Self {
        Self { keypoints: Vec::new() }
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.keypoints
    }

    pub fn get(&self, joint: Joint) -> Option<&Keypoint> {
        self.keypoints.iter().find(|k| k.joint == joint)
    }

    pub fn bone_list(&self) -> &'static [(Joint, Joint)] {
        &BONES
    }

    /// Bones whose endpoints are both present, with their palette index.
    pub fn present_bones(&self) -> impl Iterator<Item = (usize, &Keypoint, &Keypoint)> + '_ {
        BONES.iter().enumerate().filter_map(move |(i, (a, b))| {
            Some((i, self.get(*a)?, self.get(*b)?))
        })
    }

    /// Same skeleton with only the listed joints kept.
    pub fn restricted(&self, joints: &[Joint]) -> Self {
        Self {
            keypoints: self
                .keypoints
                .iter()
                .filter(|k| joints.contains(&k.joint))
                .copied()
                .collect(),
        }
    }
}
