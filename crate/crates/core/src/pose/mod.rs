//! Pose priors: the keypoint vocabulary, a category-conditioned pose
//! sampler, skeleton rasterization, and the adapter for external pose
//! extractors.

mod extract;
mod grammar;
mod render;
mod skeleton;

pub use extract::{extract_pose, ExtractError, PoseExtractor, RawKeypoint};
pub use grammar::{synth_pose, ClassPose, PoseGrammar, Region, WristTarget};
pub use render::{
    fill_capsule, foreground_mask, render_skeleton, render_skeleton_with, PoseMap, PoseStyle,
    BONE_PALETTE, JOINT_PALETTE,
};
pub use skeleton::{Joint, Keypoint, Skeleton, SkeletonError, BONES};
