use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::skeleton::{Joint, Keypoint, Skeleton};
use crate::sample::ImageBuffer;

/// One keypoint as reported by an external extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawKeypoint {
    pub name: String,
    pub x: f32,
    pub y: f32,
    pub confidence: f32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExtractError {
    #[error("no extractor configured")]
    NotConfigured,
    #[error("pose extractor unavailable: {0}")]
    Unavailable(String),
    #[error("extractor returned malformed keypoints: {0}")]
    Malformed(String),
}

/// Client for an external pose estimator: one image in, keypoints out.
pub trait PoseExtractor: Send + Sync {
    fn extract(&self, image: &ImageBuffer) -> Result<Vec<RawKeypoint>, ExtractError>;
}

/// Runs `extractor` and validates its answer against the skeleton schema.
/// Without an extractor this always fails with [`ExtractError::NotConfigured`].
pub fn extract_pose(image: &ImageBuffer, extractor: Option<&dyn PoseExtractor>) -> Result<Skeleton, ExtractError> {
    let extractor = extractor.ok_or(ExtractError::NotConfigured)?;
    let raw = extractor.extract(image)?;
    let keypoints = raw
        .into_iter()
        .map(|k| {
            let joint = Joint::from_name(&k.name)
                .ok_or_else(|| ExtractError::Malformed(format!("unknown keypoint name {:?}", k.name)))?;
            Ok(Keypoint {
                joint,
                x: k.x,
                y: k.y,
                confidence: k.confidence,
            })
        })
        .collect::<Result<Vec<_>, ExtractError>>()?;
    Skeleton::new(keypoints).map_err(|e| ExtractError::Malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::Convention;

    struct Fixed(Vec<RawKeypoint>);
    impl PoseExtractor for Fixed {
        fn extract(&self, _: &ImageBuffer) -> Result<Vec<RawKeypoint>, ExtractError> {
            Ok(self.0.clone())
        }
    }

    fn raw(name: &str, x: f32) -> RawKeypoint {
        RawKeypoint {
            name: name.into(),
            x,
            y: 0.5,
            confidence: 0.9,
        }
    }

    fn image() -> ImageBuffer {
        ImageBuffer::black(8, 8, 3, Convention::Stored)
    }

    #[test]
    fn default_has_no_extractor() {
        let err = extract_pose(&image(), None).unwrap_err();
        assert_eq!(err, ExtractError::NotConfigured);
        assert_eq!(err.to_string(), "no extractor configured");
    }

    #[test]
    fn mock_skeleton_passes_through_verbatim() {
        let mock = Fixed(vec![raw("neck", 0.5), raw("right_wrist", 0.25)]);
        let s = extract_pose(&image(), Some(&mock)).unwrap();
        assert_eq!(s.keypoints().len(), 2);
        assert_eq!(s.keypoints()[0].joint, Joint::Neck);
        assert_eq!(s.keypoints()[1].x, 0.25);
        assert_eq!(s.keypoints()[1].confidence, 0.9);
    }

    #[test]
    fn out_of_range_keypoint_is_malformed() {
        let mock = Fixed(vec![raw("nose", 1.3)]);
        assert!(matches!(
            extract_pose(&image(), Some(&mock)),
            Err(ExtractError::Malformed(_))
        ));
        let unknown = Fixed(vec![raw("left_knee", 0.3)]);
        assert!(matches!(
            extract_pose(&image(), Some(&unknown)),
            Err(ExtractError::Malformed(_))
        ));
    }
}
