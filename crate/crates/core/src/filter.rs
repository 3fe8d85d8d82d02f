//! Content filter: rejects blurred frames and frames where the subject is
//! missing, tiny, off to the side, cropped at the forehead, or facing away.
//!
//! Rules are checked in a fixed precedence and the first match is reported:
//!
//! 1. `PeopleAbsent`: no landmarks, or none at `min_point_confidence`.
//! 2. `Blurred`: variance of Laplacian below `blur_threshold`.
//! 3. `TooSmall`: landmark bounding-box height below `min_torso_fraction * H`.
//! 4. `AtCorner`: neck x (or box center x) within `corner_margin_fraction * W`
//!    of the left or right edge.
//! 5. `ForeheadCropped`: nose y above `forehead_margin_fraction * H`.
//! 6. `EyesInvisible`: neither eye confidently detected.
//!
//! Only landmarks with confidence at or above `min_point_confidence` take
//! part in any rule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BodyPart, FrameRecord, IllPosedReason};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("image is {width}x{height}, need at least 3x3")]
    ImageTooSmall { width: usize, height: usize },
    #[error("image buffer has {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("frame {frame_id}: no blur variance and no pixels supplied")]
    MissingBlurScore { frame_id: u64 },
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, FilterError> {
        let expected = width * height;
        if data.len() != expected {
            return Err(FilterError::BufferSize { expected, actual: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }
}

/// Population variance of the 4-neighbour Laplacian over the valid interior.
///
/// Uses a two-pass mean/variance over the `(W-2) x (H-2)` responses; the
/// responses themselves are exact integers.
pub fn variance_of_laplacian(image: &GrayImage) -> Result<f64, FilterError> {
    let (w, h) = (image.width, image.height);
    if w < 3 || h < 3 {
        return Err(FilterError::ImageTooSmall { width: w, height: h });
    }
    let count = ((w - 2) * (h - 2)) as f64;

    let mut sum: i64 = 0;
    for_each_response(image, |r| sum += i64::from(r));
    let mean = sum as f64 / count;

    let mut sq = 0.0f64;
    for_each_response(image, |r| {
        let d = f64::from(r) - mean;
        sq += d * d;
    });
    Ok(sq / count)
}

fn for_each_response(image: &GrayImage, mut f: impl FnMut(i32)) {
    let w = image.width;
    let d = &image.data;
    for row in 1..image.height - 1 {
        let up = &d[(row - 1) * w..row * w];
        let mid = &d[row * w..(row + 1) * w];
        let down = &d[(row + 1) * w..(row + 2) * w];
        for col in 1..w - 1 {
            let r = i32::from(up[col]) + i32::from(down[col]) + i32::from(mid[col - 1])
                + i32::from(mid[col + 1])
                - 4 * i32::from(mid[col]);
            f(r);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Minimum Laplacian variance (0-255 grayscale) for a sharp frame.
    pub blur_threshold: f64,
    /// Minimum landmark bounding-box height as a fraction of frame height.
    pub min_torso_fraction: f64,
    pub corner_margin_fraction: f64,
    pub forehead_margin_fraction: f64,
    pub min_point_confidence: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            blur_threshold: 100.0,
            min_torso_fraction: 0.15,
            corner_margin_fraction: 0.125,
            forehead_margin_fraction: 0.08,
            min_point_confidence: 0.3,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.blur_threshold.is_finite() && self.blur_threshold >= 0.0) {
            return Err(FilterError::InvalidConfig(format!(
                "blur_threshold must be >= 0, got {}",
                self.blur_threshold
            )));
        }
        for (name, v) in [
            ("min_torso_fraction", self.min_torso_fraction),
            ("corner_margin_fraction", self.corner_margin_fraction),
            ("forehead_margin_fraction", self.forehead_margin_fraction),
        ] {
            if !(v > 0.0 && v < 0.5) {
                return Err(FilterError::InvalidConfig(format!("{name} must be in (0, 0.5), got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.min_point_confidence) {
            return Err(FilterError::InvalidConfig(format!(
                "min_point_confidence must be in [0, 1], got {}",
                self.min_point_confidence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    WellPosed,
    IllPosed(IllPosedReason),
}

impl Classification {
    pub fn is_well_posed(self) -> bool {
        self == Classification::WellPosed
    }
}

/// Classifies one frame. `pixels` is only consulted when the record carries
/// no precomputed blur variance.
pub fn classify_frame(
    rec: &FrameRecord,
    pixels: Option<&GrayImage>,
    cfg: &FilterConfig,
) -> Result<Classification, FilterError> {
    let blur = match (rec.blur_variance, pixels) {
        (Some(v), _) => v,
        (None, Some(img)) => variance_of_laplacian(img)?,
        (None, None) => return Err(FilterError::MissingBlurScore { frame_id: rec.frame_id }),
    };
    use Classification::IllPosed;

    let lm = match &rec.landmarks {
        Some(lm) => lm.confident(cfg.min_point_confidence),
        None => return Ok(IllPosed(IllPosedReason::PeopleAbsent)),
    };
    let Some((min_x, min_y, max_x, max_y)) = lm.bounding_box() else {
        return Ok(IllPosed(IllPosedReason::PeopleAbsent));
    };

    if blur < cfg.blur_threshold {
        return Ok(IllPosed(IllPosedReason::Blurred));
    }

    let w = f64::from(rec.width);
    let h = f64::from(rec.height);
    if max_y - min_y < cfg.min_torso_fraction * h {
        return Ok(IllPosed(IllPosedReason::TooSmall));
    }

    let anchor_x = lm.neck().map_or((min_x + max_x) / 2.0, |p| p.x);
    let margin = cfg.corner_margin_fraction * w;
    if anchor_x < margin || anchor_x > w - margin {
        return Ok(IllPosed(IllPosedReason::AtCorner));
    }

    if lm.nose().is_some_and(|p| p.y < cfg.forehead_margin_fraction * h) {
        return Ok(IllPosed(IllPosedReason::ForeheadCropped));
    }

    if lm.get(BodyPart::REye).is_none() && lm.get(BodyPart::LEye).is_none() {
        return Ok(IllPosed(IllPosedReason::EyesInvisible));
    }

    Ok(Classification::WellPosed)
}

/// Totals in the style of "total / well-posed" frame accounting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub total: usize,
    pub accepted: usize,
    pub rejected_by_reason: BTreeMap<IllPosedReason, usize>,
}

impl Default for FilterReport {
    fn default() -> Self {
        Self {
            total: 0,
            accepted: 0,
            rejected_by_reason: IllPosedReason::ALL.iter().map(|r| (*r, 0)).collect(),
        }
    }
}

impl FilterReport {
    pub fn record(&mut self, c: Classification) {
        self.total += 1;
        match c {
            Classification::WellPosed => self.accepted += 1,
            Classification::IllPosed(reason) => {
                *self.rejected_by_reason.entry(reason).or_insert(0) += 1
            }
        }
    }

    pub fn rejected(&self) -> usize {
        self.rejected_by_reason.values().sum()
    }

    pub fn is_balanced(&self) -> bool {
        self.accepted + self.rejected() == self.total
    }
}

/// Keeps the well-posed frames of `frames`, in input order.
pub fn filter_frames(
    frames: &[FrameRecord],
    cfg: &FilterConfig,
) -> Result<(Vec<FrameRecord>, FilterReport), FilterError> {
    cfg.validate()?;
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for rec in frames {
        let c = classify_frame(rec, None, cfg)?;
        report.record(c);
        if c.is_well_posed() {
            kept.push(rec.clone());
        }
    }
    Ok((kept, report))
}
