//! Deterministic synthetic sessions with ground-truth labels.
//!
//! A session is a fixed-rate frame stream. Inside an activity segment the
//! subject stands in a well-posed pose following `person_trajectory` and the
//! feature vector is one-hot on the segment's activity plus clipped Gaussian
//! noise. Outside every segment nobody is in view. Injection ranges replace
//! frames inside a segment with frames that break exactly one filter rule
//! (and none that takes precedence over it) under [`FilterConfig::default`].
//!
//! Randomness comes from ChaCha8 seeded with `rng_seed`, so a spec always
//! produces the same session.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{FilterConfig, GrayImage};
use crate::io::FeatureMatrix;
use crate::model::{BodyPart, FeatureVector, FrameRecord, IllPosedReason, Keypoint, LandmarkSet, FEATURE_DIM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::InvalidSpec(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivitySegment {
    pub start_s: f64,
    pub end_s: f64,
    pub activity_id: usize,
    #[serde(default)]
    pub feature_noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    pub start_s: f64,
    pub end_s: f64,
    pub reason: IllPosedReason,
}

/// Neck position and torso length (neck to hip, pixels) at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub torso_px: f64,
}

fn default_width() -> u32 {
    640
}

fn default_height() -> u32 {
    480
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub duration_s: f64,
    pub fps: f64,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
    pub activity_segments: Vec<ActivitySegment>,
    #[serde(default)]
    pub ill_posed_injections: Vec<Injection>,
    #[serde(default)]
    pub person_trajectory: Vec<Waypoint>,
    #[serde(default)]
    pub rng_seed: u64,
}

impl ScenarioSpec {
    /// Back-to-back segments of the given durations separated by `gap_s` of
    /// empty room, at 1 fps, cycling through activities 0, 13, 26, ...
    pub fn segmented(durations: &[f64], gap_s: f64, rng_seed: u64) -> Self {
        let mut segments = Vec::new();
        let mut t = 0.0;
        for (i, &d) in durations.iter().enumerate() {
            segments.push(ActivitySegment {
                start_s: t,
                end_s: t + d,
                activity_id: (i * 13) % FEATURE_DIM,
                feature_noise_sigma: 0.05,
            });
            t += d + gap_s;
        }
        Self {
            duration_s: t - gap_s,
            fps: 1.0,
            width: default_width(),
            height: default_height(),
            activity_segments: segments,
            ill_posed_injections: Vec::new(),
            person_trajectory: Vec::new(),
            rng_seed,
        }
    }
}

/// Ground truth for one generated frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub frame_id: u64,
    pub well_posed: bool,
    pub reason: Option<IllPosedReason>,
    pub segment_id: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSession {
    /// Frames with `feat_row` set and features attached.
    pub frames: Vec<FrameRecord>,
    pub features: FeatureMatrix,
    pub truth: Vec<FrameTruth>,
}

pub fn write_truth_jsonl<W: Write>(mut w: W, truth: &[FrameTruth]) -> std::io::Result<()> {
    for t in truth {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

// Skeleton offsets from the neck in units of torso length (image y down).
const SKELETON: [(BodyPart, f64, f64); 18] = [
    (BodyPart::Nose, 0.0, -0.35),
    (BodyPart::Neck, 0.0, 0.0),
    (BodyPart::RShoulder, -0.35, 0.05),
    (BodyPart::RElbow, -0.45, 0.45),
    (BodyPart::RWrist, -0.5, 0.85),
    (BodyPart::LShoulder, 0.35, 0.05),
    (BodyPart::LElbow, 0.45, 0.45),
    (BodyPart::LWrist, 0.5, 0.85),
    (BodyPart::RHip, -0.2, 1.0),
    (BodyPart::RKnee, -0.2, 1.5),
    (BodyPart::RAnkle, -0.2, 2.0),
    (BodyPart::LHip, 0.2, 1.0),
    (BodyPart::LKnee, 0.2, 1.5),
    (BodyPart::LAnkle, 0.2, 2.0),
    (BodyPart::REye, -0.08, -0.42),
    (BodyPart::LEye, 0.08, -0.42),
    (BodyPart::REar, -0.17, -0.38),
    (BodyPart::LEar, 0.17, -0.38),
];

// Envelope for trajectory waypoints, as fractions of frame size. Anything
// inside it is well-posed under the default filter config.
const X_RANGE: (f64, f64) = (0.25, 0.75);
const Y_RANGE: (f64, f64) = (0.2, 0.4);
const TORSO_RANGE: (f64, f64) = (0.1, 0.25);
const JITTER_PX: f64 = 2.0;

fn validate(spec: &ScenarioSpec) -> Result<(), ScenarioError> {
    if !(spec.duration_s.is_finite() && spec.duration_s > 0.0) {
        return invalid(format!("duration_s must be positive, got {}", spec.duration_s));
    }
    if !(spec.fps.is_finite() && spec.fps > 0.0) {
        return invalid(format!("fps must be positive, got {}", spec.fps));
    }
    if spec.width < 64 || spec.height < 64 {
        return invalid("frame must be at least 64x64");
    }
    let mut prev_end = f64::NEG_INFINITY;
    for (i, s) in spec.activity_segments.iter().enumerate() {
        if !(s.start_s >= 0.0 && s.start_s < s.end_s && s.end_s <= spec.duration_s) {
            return invalid(format!("segment {i}: need 0 <= start < end <= duration"));
        }
        if s.start_s < prev_end {
            return invalid(format!("segment {i} overlaps or precedes the previous one"));
        }
        if s.activity_id >= FEATURE_DIM {
            return invalid(format!("segment {i}: activity_id {} >= {FEATURE_DIM}", s.activity_id));
        }
        if !(s.feature_noise_sigma.is_finite() && s.feature_noise_sigma >= 0.0) {
            return invalid(format!("segment {i}: feature_noise_sigma must be >= 0"));
        }
        prev_end = s.end_s;
    }
    for (i, inj) in spec.ill_posed_injections.iter().enumerate() {
        let inside = spec
            .activity_segments
            .iter()
            .any(|s| s.start_s <= inj.start_s && inj.end_s <= s.end_s);
        if !(inj.start_s < inj.end_s) || !inside {
            return invalid(format!("injection {i} must be a non-empty range inside one segment"));
        }
    }
    let (w, h) = (f64::from(spec.width), f64::from(spec.height));
    for (i, wp) in spec.person_trajectory.iter().enumerate() {
        let ok = (X_RANGE.0 * w..=X_RANGE.1 * w).contains(&wp.x)
            && (Y_RANGE.0 * h..=Y_RANGE.1 * h).contains(&wp.y)
            && (TORSO_RANGE.0 * h..=TORSO_RANGE.1 * h).contains(&wp.torso_px);
        if !ok {
            return invalid(format!("waypoint {i} leaves the well-posed envelope"));
        }
        if i > 0 && !(wp.t > spec.person_trajectory[i - 1].t) {
            return invalid("waypoint times must be strictly increasing");
        }
    }
    Ok(())
}

fn pose_at(spec: &ScenarioSpec, t: f64) -> (f64, f64, f64) {
    let (w, h) = (f64::from(spec.width), f64::from(spec.height));
    let wps = &spec.person_trajectory;
    let Some(first) = wps.first() else {
        return (0.5 * w, 0.3 * h, 0.2 * h);
    };
    if t <= first.t {
        return (first.x, first.y, first.torso_px);
    }
    for pair in wps.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if t <= b.t {
            let u = (t - a.t) / (b.t - a.t);
            let lerp = |p: f64, q: f64| p + (q - p) * u;
            return (lerp(a.x, b.x), lerp(a.y, b.y), lerp(a.torso_px, b.torso_px));
        }
    }
    let last = wps[wps.len() - 1];
    (last.x, last.y, last.torso_px)
}

/// Places the skeleton; points falling outside the frame are dropped.
fn skeleton(
    rng: &mut ChaCha8Rng,
    neck: (f64, f64),
    torso: f64,
    size: (f64, f64),
    confidence: (f64, f64),
) -> [Option<Keypoint>; 18] {
    let mut points = [None; 18];
    for (part, dx, dy) in SKELETON {
        let x = neck.0 + dx * torso;
        let y = neck.1 + dy * torso;
        let c = rng.gen_range(confidence.0..confidence.1);
        if (0.0..=size.0).contains(&x) && (0.0..=size.1).contains(&y) {
            points[part.index()] = Some(Keypoint::new(x, y, c));
        }
    }
    points
}

fn features(rng: &mut ChaCha8Rng, seg: &ActivitySegment) -> Vec<f32> {
    let noise = Normal::new(0.0, seg.feature_noise_sigma).expect("sigma validated");
    (0..FEATURE_DIM)
        .map(|j| {
            let base = if j == seg.activity_id { 1.0 } else { 0.0 };
            (base + noise.sample(rng)).clamp(0.0, 1.0) as f32
        })
        .collect()
}

pub fn generate_session(spec: &ScenarioSpec) -> Result<GeneratedSession, ScenarioError> {
    validate(spec)?;
    let defaults = FilterConfig::default();
    let thr = defaults.blur_threshold;
    let (w, h) = (f64::from(spec.width), f64::from(spec.height));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);

    let mut frames = Vec::new();
    let mut matrix = FeatureMatrix::new();
    let mut truth = Vec::new();

    for i in 0u64.. {
        let t = i as f64 / spec.fps;
        if t >= spec.duration_s {
            break;
        }
        let mut rec = FrameRecord::new(i, t, spec.width, spec.height);
        let segment = spec.activity_segments.iter().position(|s| s.start_s <= t && t < s.end_s);
        let Some(seg_id) = segment else {
            rec.blur_variance = Some(rng.gen_range(1.5 * thr..6.0 * thr));
            frames.push(rec);
            truth.push(FrameTruth {
                frame_id: i,
                well_posed: false,
                reason: Some(IllPosedReason::PeopleAbsent),
                segment_id: None,
            });
            continue;
        };
        let seg = &spec.activity_segments[seg_id];
        let reason = spec
            .ill_posed_injections
            .iter()
            .find(|inj| inj.start_s <= t && t < inj.end_s)
            .map(|inj| inj.reason);

        let (mut nx, mut ny, mut torso) = pose_at(spec, t);
        nx += rng.gen_range(-JITTER_PX..JITTER_PX);
        ny += rng.gen_range(-JITTER_PX..JITTER_PX);
        let mut blur = rng.gen_range(1.5 * thr..6.0 * thr);
        let mut confidence = (0.6, 1.0);
        let mut drop_eyes = false;
        let mut weak_eyes = false;
        let mut no_landmarks = false;

        match reason {
            None => {}
            Some(IllPosedReason::PeopleAbsent) => {
                if rng.gen_bool(0.5) {
                    no_landmarks = true;
                } else {
                    confidence = (0.0, 0.25);
                }
            }
            Some(IllPosedReason::Blurred) => blur = rng.gen_range(0.05 * thr..0.8 * thr),
            Some(IllPosedReason::TooSmall) => torso = rng.gen_range(0.02 * h..0.05 * h),
            Some(IllPosedReason::AtCorner) => {
                nx = if rng.gen_bool(0.5) {
                    rng.gen_range(0.01 * w..0.1 * w)
                } else {
                    rng.gen_range(0.9 * w..0.99 * w)
                };
            }
            Some(IllPosedReason::ForeheadCropped) => {
                let nose_y = rng.gen_range(0.01 * h..0.06 * h);
                ny = nose_y + 0.35 * torso;
            }
            Some(IllPosedReason::EyesInvisible) => {
                if rng.gen_bool(0.5) {
                    drop_eyes = true;
                } else {
                    weak_eyes = true;
                }
            }
        }

        let mut points = skeleton(&mut rng, (nx, ny), torso, (w, h), confidence);
        for eye in [BodyPart::REye, BodyPart::LEye] {
            let slot = &mut points[eye.index()];
            if drop_eyes {
                *slot = None;
            } else if weak_eyes {
                if let Some(kp) = slot {
                    kp.confidence = rng.gen_range(0.0..0.25);
                }
            }
        }
        if !no_landmarks {
            rec.landmarks = Some(LandmarkSet::new(points).expect("generated points are in range"));
        }
        rec.blur_variance = Some(blur);

        let row = features(&mut rng, seg);
        let row_idx = matrix.push_row(&row).expect("generated features are in range");
        rec.feat_row = Some(row_idx);
        rec.features = Some(FeatureVector::new(row).expect("generated features are in range"));

        frames.push(rec);
        truth.push(FrameTruth { frame_id: i, well_posed: reason.is_none(), reason, segment_id: Some(seg_id) });
    }

    Ok(GeneratedSession { frames, features: matrix, truth })
}

/// A flat (blurry) or uniformly noisy (sharp) test image.
pub fn texture_image(width: usize, height: usize, sharp: bool, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height)
        .map(|_| if sharp { rng.gen::<u8>() } else { 128 + rng.gen_range(0..2) })
        .collect();
    GrayImage::new(width, height, data).expect("size matches")
}
