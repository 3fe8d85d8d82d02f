//! Domain types shared by the filter, summarizer, controller and service.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of body keypoints in a [`LandmarkSet`].
pub const NUM_LANDMARKS: usize = 18;

/// Dimension of a per-frame action feature vector (indoor action classes).
pub const FEATURE_DIM: usize = 157;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("landmark {index} has invalid coordinates ({x}, {y})")]
    InvalidCoordinates { index: usize, x: f64, y: f64 },
    #[error("landmark {index} has confidence {confidence} outside [0, 1]")]
    InvalidConfidence { index: usize, confidence: f64 },
    #[error("feature vector has length {0}, expected {FEATURE_DIM}")]
    FeatureLength(usize),
    #[error("feature component {index} = {value} outside [0, 1]")]
    FeatureRange { index: usize, value: f32 },
    #[error("frame {frame_id}: dimensions must be positive, got {width}x{height}")]
    EmptyFrame { frame_id: u64, width: u32, height: u32 },
    #[error("frame {frame_id}: blur variance {value} is not a non-negative number")]
    InvalidBlurVariance { frame_id: u64, value: f64 },
    #[error("frame {frame_id}: timestamp {value} is not finite and non-negative")]
    InvalidTimestamp { frame_id: u64, value: f64 },
}

/// The 18-point body keypoint layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyPart {
    Nose = 0,
    Neck = 1,
    RShoulder = 2,
    RElbow = 3,
    RWrist = 4,
    LShoulder = 5,
    LElbow = 6,
    LWrist = 7,
    RHip = 8,
    RKnee = 9,
    RAnkle = 10,
    LHip = 11,
    LKnee = 12,
    LAnkle = 13,
    REye = 14,
    LEye = 15,
    REar = 16,
    LEar = 17,
}

impl BodyPart {
    pub const ALL: [BodyPart; NUM_LANDMARKS] = [
        BodyPart::Nose,
        BodyPart::Neck,
        BodyPart::RShoulder,
        BodyPart::RElbow,
        BodyPart::RWrist,
        BodyPart::LShoulder,
        BodyPart::LElbow,
        BodyPart::LWrist,
        BodyPart::RHip,
        BodyPart::RKnee,
        BodyPart::RAnkle,
        BodyPart::LHip,
        BodyPart::LKnee,
        BodyPart::LAnkle,
        BodyPart::REye,
        BodyPart::LEye,
        BodyPart::REar,
        BodyPart::LEar,
    ];

    /// Nose, eyes and ears.
    pub const FACIAL: [BodyPart; 5] = [
        BodyPart::Nose,
        BodyPart::REye,
        BodyPart::LEye,
        BodyPart::REar,
        BodyPart::LEar,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }
}

/// A detected keypoint in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Self { x, y, confidence }
    }
}

/// Pose landmarks of one person. Absent points carry no coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LandmarkSet {
    points: [Option<Keypoint>; NUM_LANDMARKS],
}

impl LandmarkSet {
    pub fn new(points: [Option<Keypoint>; NUM_LANDMARKS]) -> Result<Self, ModelError> {
        for (index, p) in points.iter().enumerate() {
            let Some(p) = p else { continue };
            if !(p.x.is_finite() && p.y.is_finite() && p.x >= 0.0 && p.y >= 0.0) {
                return Err(ModelError::InvalidCoordinates { index, x: p.x, y: p.y });
            }
            if !(0.0..=1.0).contains(&p.confidence) {
                return Err(ModelError::InvalidConfidence { index, confidence: p.confidence });
            }
        }
        Ok(Self { points })
    }

    /// Builds a set from `(part, keypoint)` pairs; unlisted parts are absent.
    pub fn from_parts<I>(parts: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (BodyPart, Keypoint)>,
    {
        let mut points = [None; NUM_LANDMARKS];
        for (part, kp) in parts {
            points[part.index()] = Some(kp);
        }
        Self::new(points)
    }

    pub fn points(&self) -> &[Option<Keypoint>; NUM_LANDMARKS] {
        &self.points
    }

    pub fn get(&self, part: BodyPart) -> Option<Keypoint> {
        self.points[part.index()]
    }

    pub fn nose(&self) -> Option<Keypoint> {
        self.get(BodyPart::Nose)
    }

    pub fn neck(&self) -> Option<Keypoint> {
        self.get(BodyPart::Neck)
    }

    pub fn r_hip(&self) -> Option<Keypoint> {
        self.get(BodyPart::RHip)
    }

    pub fn l_hip(&self) -> Option<Keypoint> {
        self.get(BodyPart::LHip)
    }

    pub fn r_eye(&self) -> Option<Keypoint> {
        self.get(BodyPart::REye)
    }

    pub fn l_eye(&self) -> Option<Keypoint> {
        self.get(BodyPart::LEye)
    }

    pub fn r_ear(&self) -> Option<Keypoint> {
        self.get(BodyPart::REar)
    }

    pub fn l_ear(&self) -> Option<Keypoint> {
        self.get(BodyPart::LEar)
    }

    /// Present points as `(part, keypoint)` in index order.
    pub fn present(&self) -> impl Iterator<Item = (BodyPart, Keypoint)> + '_ {
        self.points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|kp| (BodyPart::ALL[i], kp)))
    }

    /// A copy with every point below `min_confidence` removed.
    pub fn confident(&self, min_confidence: f64) -> LandmarkSet {
        let mut points = self.points;
        for p in points.iter_mut() {
            if p.is_some_and(|kp| kp.confidence < min_confidence) {
                *p = None;
            }
        }
        LandmarkSet { points }
    }

    pub fn is_empty(&self) -> bool {
        self.points.iter().all(Option::is_none)
    }

    /// Axis-aligned bounds `(min_x, min_y, max_x, max_y)` of present points.
    pub fn bounding_box(&self) -> Option<(f64, f64, f64, f64)> {
        self.present().fold(None, |acc, (_, p)| {
            Some(match acc {
                None => (p.x, p.y, p.x, p.y),
                Some((x0, y0, x1, y1)) => (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)),
            })
        })
    }
}

/// Facial points (nose, eyes, ears) that are present, in index order.
pub fn facial_landmarks_visible(lm: &LandmarkSet) -> Vec<BodyPart> {
    BodyPart::FACIAL
        .into_iter()
        .filter(|part| lm.get(*part).is_some())
        .collect()
}

/// Per-action probabilities for one frame. Components need not sum to one.
#[derive(Clone, PartialEq)]
pub struct FeatureVector(Box<[f32]>);

impl FeatureVector {
    pub fn new(values: Vec<f32>) -> Result<Self, ModelError> {
        if values.len() != FEATURE_DIM {
            return Err(ModelError::FeatureLength(values.len()));
        }
        if let Some((index, &value)) =
            values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ModelError::FeatureRange { index, value });
        }
        Ok(Self(values.into_boxed_slice()))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

impl std::ops::Deref for FeatureVector {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

impl fmt::Debug for FeatureVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (argmax, max) = self
            .0
            .iter()
            .enumerate()
            .fold((0, f32::MIN), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        write!(f, "FeatureVector(dim={}, argmax={argmax}:{max})", self.0.len())
    }
}

/// Metadata for one captured frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_id: u64,
    /// Seconds since session start.
    pub timestamp: f64,
    pub width: u32,
    pub height: u32,
    /// `None` when no person was detected.
    pub landmarks: Option<LandmarkSet>,
    pub blur_variance: Option<f64>,
    /// Row of this frame in the session's feature matrix, if any.
    pub feat_row: Option<u32>,
    pub features: Option<FeatureVector>,
}

impl FrameRecord {
    pub fn new(frame_id: u64, timestamp: f64, width: u32, height: u32) -> Self {
        Self {
            frame_id,
            timestamp,
            width,
            height,
            landmarks: None,
            blur_variance: None,
            feat_row: None,
            features: None,
        }
    }

    /// Checks the per-record invariants (landmarks are checked on construction).
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.width == 0 || self.height == 0 {
            return Err(ModelError::EmptyFrame {
                frame_id: self.frame_id,
                width: self.width,
                height: self.height,
            });
        }
        if !(self.timestamp.is_finite() && self.timestamp >= 0.0) {
            return Err(ModelError::InvalidTimestamp {
                frame_id: self.frame_id,
                value: self.timestamp,
            });
        }
        if let Some(v) = self.blur_variance {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ModelError::InvalidBlurVariance { frame_id: self.frame_id, value: v });
            }
        }
        Ok(())
    }
}

/// Drops frames whose timestamp equals their predecessor's, keeping the first.
/// Returns the number of frames dropped. Input must already be non-decreasing.
pub fn dedup_timestamps(frames: &mut Vec<FrameRecord>) -> usize {
    let before = frames.len();
    frames.dedup_by(|later, earlier| later.timestamp == earlier.timestamp);
    before - frames.len()
}

/// A temporally contiguous run of well-posed frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub index: usize,
    pub frame_ids: Vec<u64>,
    pub start_time: f64,
    pub end_time: f64,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub cluster: usize,
    pub frame_id: u64,
    pub t: f64,
    pub cluster_size: usize,
}

/// Ordered keyframe selection with cluster provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryManifest {
    pub k: usize,
    pub h_star: f64,
    pub m: usize,
    pub entries: Vec<ManifestEntry>,
    /// Set when the summary fell back from the clustering path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Why a frame was rejected by the content filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IllPosedReason {
    Blurred,
    EyesInvisible,
    PeopleAbsent,
    ForeheadCropped,
    AtCorner,
    TooSmall,
}

impl IllPosedReason {
    pub const ALL: [IllPosedReason; 6] = [
        IllPosedReason::Blurred,
        IllPosedReason::EyesInvisible,
        IllPosedReason::PeopleAbsent,
        IllPosedReason::ForeheadCropped,
        IllPosedReason::AtCorner,
        IllPosedReason::TooSmall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IllPosedReason::Blurred => "blurred",
            IllPosedReason::EyesInvisible => "eyes_invisible",
            IllPosedReason::PeopleAbsent => "people_absent",
            IllPosedReason::ForeheadCropped => "forehead_cropped",
            IllPosedReason::AtCorner => "at_corner",
            IllPosedReason::TooSmall => "too_small",
        }
    }
}

impl fmt::Display for IllPosedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kp() -> Keypoint {
        Keypoint::new(10.0, 20.0, 0.9)
    }

    #[test]
    fn named_accessors_follow_index_convention() {
        let expected = [
            (BodyPart::Nose, 0),
            (BodyPart::Neck, 1),
            (BodyPart::RShoulder, 2),
            (BodyPart::RElbow, 3),
            (BodyPart::RWrist, 4),
            (BodyPart::LShoulder, 5),
            (BodyPart::LElbow, 6),
            (BodyPart::LWrist, 7),
            (BodyPart::RHip, 8),
            (BodyPart::RKnee, 9),
            (BodyPart::RAnkle, 10),
            (BodyPart::LHip, 11),
            (BodyPart::LKnee, 12),
            (BodyPart::LAnkle, 13),
            (BodyPart::REye, 14),
            (BodyPart::LEye, 15),
            (BodyPart::REar, 16),
            (BodyPart::LEar, 17),
        ];
        for (part, index) in expected {
            assert_eq!(part.index(), index);
            assert_eq!(BodyPart::from_index(index), Some(part));
        }
        assert_eq!(BodyPart::from_index(18), None);

        let mut points = [None; NUM_LANDMARKS];
        for (i, p) in points.iter_mut().enumerate() {
            *p = Some(Keypoint::new(i as f64, 0.0, 1.0));
        }
        let lm = LandmarkSet::new(points).unwrap();
        assert_eq!(lm.nose().unwrap().x, 0.0);
        assert_eq!(lm.neck().unwrap().x, 1.0);
        assert_eq!(lm.r_hip().unwrap().x, 8.0);
        assert_eq!(lm.l_hip().unwrap().x, 11.0);
        assert_eq!(lm.r_eye().unwrap().x, 14.0);
        assert_eq!(lm.l_eye().unwrap().x, 15.0);
        assert_eq!(lm.r_ear().unwrap().x, 16.0);
        assert_eq!(lm.l_ear().unwrap().x, 17.0);
    }

    #[test]
    fn facial_landmarks_all_present() {
        let lm = LandmarkSet::new([Some(kp()); NUM_LANDMARKS]).unwrap();
        assert_eq!(
            facial_landmarks_visible(&lm),
            vec![
                BodyPart::Nose,
                BodyPart::REye,
                BodyPart::LEye,
                BodyPart::REar,
                BodyPart::LEar
            ]
        );
    }

    #[test]
    fn facial_landmarks_body_only() {
        let lm = LandmarkSet::from_parts([
            (BodyPart::Neck, kp()),
            (BodyPart::RHip, kp()),
            (BodyPart::LHip, kp()),
        ])
        .unwrap();
        assert!(facial_landmarks_visible(&lm).is_empty());
    }

    #[test]
    fn facial_landmarks_nose_and_left_ear() {
        let lm = LandmarkSet::from_parts([(BodyPart::Nose, kp()), (BodyPart::LEar, kp())]).unwrap();
        assert_eq!(facial_landmarks_visible(&lm), vec![BodyPart::Nose, BodyPart::LEar]);
    }

    #[test]
    fn landmark_validation() {
        let bad = LandmarkSet::from_parts([(BodyPart::Neck, Keypoint::new(-1.0, 0.0, 0.5))]);
        assert!(matches!(bad, Err(ModelError::InvalidCoordinates { index: 1, .. })));
        let bad = LandmarkSet::from_parts([(BodyPart::LEar, Keypoint::new(1.0, 0.0, 1.5))]);
        assert!(matches!(bad, Err(ModelError::InvalidConfidence { index: 17, .. })));
    }

    #[test]
    fn confident_drops_weak_points() {
        let lm = LandmarkSet::from_parts([
            (BodyPart::Nose, Keypoint::new(1.0, 1.0, 0.2)),
            (BodyPart::Neck, Keypoint::new(1.0, 1.0, 0.3)),
        ])
        .unwrap();
        let c = lm.confident(0.3);
        assert!(c.nose().is_none());
        assert!(c.neck().is_some());
    }

    #[test]
    fn feature_vector_contract() {
        assert!(FeatureVector::new(vec![0.5; FEATURE_DIM]).is_ok());
        assert_eq!(FeatureVector::new(vec![0.5; 10]), Err(ModelError::FeatureLength(10)));
        let mut v = vec![0.0; FEATURE_DIM];
        v[3] = 1.5;
        assert!(matches!(FeatureVector::new(v), Err(ModelError::FeatureRange { index: 3, .. })));
        let mut v = vec![0.0; FEATURE_DIM];
        v[0] = f32::NAN;
        assert!(FeatureVector::new(v).is_err());
    }

    #[test]
    fn dedup_keeps_first_of_equal_timestamps() {
        let mut frames = vec![
            FrameRecord::new(1, 0.0, 4, 4),
            FrameRecord::new(2, 1.0, 4, 4),
            FrameRecord::new(3, 1.0, 4, 4),
            FrameRecord::new(4, 2.0, 4, 4),
        ];
        assert_eq!(dedup_timestamps(&mut frames), 1);
        let ids: Vec<u64> = frames.iter().map(|f| f.frame_id).collect();
        assert_eq!(ids, vec![1, 2, 4]);
    }
}
