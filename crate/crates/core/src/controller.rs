//! Person-following state machine for the robot.
//!
//! One [`controller_step`] per observed frame. While a face is visible the
//! robot pans/tilts to bring it toward the upper center of the view and
//! walks forward until the target is about `stop_distance_m` away. When
//! only the body is visible it tilts the head up. When nobody is visible it
//! turns in fixed steps toward where the person was last seen; after one
//! fruitless revolution it sets a fixed search pitch, after a second it
//! idles until a person shows up or the idle period runs out.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{facial_landmarks_visible, BodyPart, LandmarkSet};

/// Hard limit on a single commanded rotation.
const FORWARD_MARGIN_MM: f64 = 1e-3;

pub const MAX_ROTATE_DEG: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("need the neck and at least one hip to estimate distance")]
    InsufficientLandmarks,
    #[error("no facial landmark visible")]
    NoFacialLandmarks,
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub stop_distance_m: f64,
    pub forward_step_m: f64,
    pub search_turn_deg: f64,
    pub search_pitch_deg: f64,
    pub idle_duration_s: f64,
    pub turns_per_revolution: u32,
    /// Target for the tracked face point, as fractions of (W, H).
    pub gaze_target: (f64, f64),
    pub fov_h_deg: f64,
    pub fov_v_deg: f64,
    /// Pinhole constant: distance in meters = alpha / torso length in pixels.
    /// Needs per-camera calibration.
    pub calibration_alpha_px_m: f64,
    pub face_raise_pitch_deg: f64,
    pub min_pitch_deg: f64,
    pub max_pitch_deg: f64,
    pub min_point_confidence: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            stop_distance_m: 2.0,
            forward_step_m: 0.3,
            search_turn_deg: 30.0,
            search_pitch_deg: 15.0,
            idle_duration_s: 900.0,
            turns_per_revolution: 12,
            gaze_target: (0.5, 0.25),
            fov_h_deg: 62.0,
            fov_v_deg: 38.0,
            calibration_alpha_px_m: 300.0,
            face_raise_pitch_deg: 10.0,
            min_pitch_deg: -15.0,
            max_pitch_deg: 45.0,
            min_point_confidence: 0.3,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let positive = [
            ("stop_distance_m", self.stop_distance_m),
            ("forward_step_m", self.forward_step_m),
            ("search_turn_deg", self.search_turn_deg),
            ("search_pitch_deg", self.search_pitch_deg),
            ("idle_duration_s", self.idle_duration_s),
            ("fov_h_deg", self.fov_h_deg),
            ("fov_v_deg", self.fov_v_deg),
            ("calibration_alpha_px_m", self.calibration_alpha_px_m),
            ("face_raise_pitch_deg", self.face_raise_pitch_deg),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ControllerError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.turns_per_revolution == 0
            || f64::from(self.turns_per_revolution) * self.search_turn_deg != 360.0
        {
            return Err(ControllerError::InvalidConfig(format!(
                "turns_per_revolution x search_turn_deg must be 360, got {} x {}",
                self.turns_per_revolution, self.search_turn_deg
            )));
        }
        if self.search_turn_deg > MAX_ROTATE_DEG {
            return Err(ControllerError::InvalidConfig(format!(
                "search_turn_deg must not exceed {MAX_ROTATE_DEG}"
            )));
        }
        if !(self.min_pitch_deg < self.max_pitch_deg) {
            return Err(ControllerError::InvalidConfig("min_pitch_deg must be below max_pitch_deg".into()));
        }
        if !(0.0..=1.0).contains(&self.min_point_confidence) {
            return Err(ControllerError::InvalidConfig("min_point_confidence must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnDirection {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Following,
    Searching { turns_done: u32, pitch_raised: bool, direction: TurnDirection },
    Idle { until: f64 },
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Following => "following",
            Mode::Searching { .. } => "searching",
            Mode::Idle { .. } => "idle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    pub mode: Mode,
    pub last_seen_side: Side,
    pub current_pitch: f64,
}

impl Default for ControllerState {
    fn default() -> Self {
        Self { mode: Mode::Following, last_seen_side: Side::Unknown, current_pitch: 0.0 }
    }
}

/// Face shown on the robot's screen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expression {
    DefaultStill,
    Expecting,
    Active,
    AwareLeft,
    AwareRight,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionCommand {
    /// Degrees, positive turns right.
    pub rotate_deg: f64,
    /// Absolute neck pitch target, if it changes.
    pub pitch_deg: Option<f64>,
    pub forward_m: f64,
    pub expression: Expression,
    pub new_mode: Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub timestamp: f64,
    pub width: u32,
    pub height: u32,
    pub landmarks: Option<LandmarkSet>,
}

/// Camera-to-person distance from the mean neck-to-hip pixel length.
pub fn estimate_distance_m(lm: &LandmarkSet, cfg: &ControllerConfig) -> Result<f64, ControllerError> {
    let neck = lm.neck().ok_or(ControllerError::InsufficientLandmarks)?;
    let lengths: Vec<f64> = [lm.r_hip(), lm.l_hip()]
        .into_iter()
        .flatten()
        .map(|hip| (hip.x - neck.x).hypot(hip.y - neck.y))
        .collect();
    if lengths.is_empty() {
        return Err(ControllerError::InsufficientLandmarks);
    }
    let torso_px = lengths.iter().sum::<f64>() / lengths.len() as f64;
    Ok(cfg.calibration_alpha_px_m / torso_px)
}

/// The face point the gaze controller tracks: the nose, else the centroid of
/// the visible facial points.
fn face_point(lm: &LandmarkSet) -> Option<(f64, f64)> {
    if let Some(nose) = lm.nose() {
        return Some((nose.x, nose.y));
    }
    let pts: Vec<_> = facial_landmarks_visible(lm).into_iter().filter_map(|p| lm.get(p)).collect();
    if pts.is_empty() {
        return None;
    }
    let n = pts.len() as f64;
    Some((pts.iter().map(|p| p.x).sum::<f64>() / n, pts.iter().map(|p| p.y).sum::<f64>() / n))
}

/// Forward motion toward a person estimated `distance_m` away, in whole
/// millimetres and rounded down so the stop distance is never overshot by
/// estimator rounding.
pub fn forward_command(distance_m: f64, cfg: &ControllerConfig) -> f64 {
    let ahead_mm = ((distance_m - cfg.stop_distance_m) * 1000.0 - FORWARD_MARGIN_MM).floor().max(0.0);
    (ahead_mm / 1000.0).min(cfg.forward_step_m)
}

/// Pan (positive right) and pitch change (positive up) that would move the
/// face point onto the gaze target.
pub fn gaze_adjustment(
    lm: &LandmarkSet,
    width: u32,
    height: u32,
    cfg: &ControllerConfig,
) -> Result<(f64, f64), ControllerError> {
    let (x, y) = face_point(lm).ok_or(ControllerError::NoFacialLandmarks)?;
    let pan = (x / f64::from(width) - cfg.gaze_target.0) * cfg.fov_h_deg;
    let pitch = (cfg.gaze_target.1 - y / f64::from(height)) * cfg.fov_v_deg;
    Ok((pan, pitch))
}

fn has_eye(lm: &LandmarkSet) -> bool {
    lm.get(BodyPart::REye).is_some() || lm.get(BodyPart::LEye).is_some()
}

fn person(obs: &Observation, cfg: &ControllerConfig) -> Option<LandmarkSet> {
    obs.landmarks
        .as_ref()
        .map(|lm| lm.confident(cfg.min_point_confidence))
        .filter(|lm| !lm.is_empty())
}

/// Expression for the current situation: `Active` when an eye is visible,
/// `Expecting` for any other visible person, the aware faces while a search
/// turn is pending, `DefaultStill` otherwise.
pub fn select_expression(state: &ControllerState, obs: &Observation, cfg: &ControllerConfig) -> Expression {
    if let Some(lm) = person(obs, cfg) {
        return if has_eye(&lm) { Expression::Active } else { Expression::Expecting };
    }
    match state.mode {
        Mode::Searching { direction, .. } => aware(direction),
        _ => Expression::DefaultStill,
    }
}

fn aware(direction: TurnDirection) -> Expression {
    match direction {
        TurnDirection::Left => Expression::AwareLeft,
        TurnDirection::Right => Expression::AwareRight,
    }
}

fn clamp_pitch(p: f64, cfg: &ControllerConfig) -> f64 {
    p.clamp(cfg.min_pitch_deg, cfg.max_pitch_deg)
}

/// Advances the state machine by one observation.
pub fn controller_step(
    state: &ControllerState,
    obs: &Observation,
    cfg: &ControllerConfig,
) -> (ControllerState, ActionCommand) {
    let seen = person(obs, cfg);

    if let Some(lm) = seen {
        return follow(state, obs, &lm, cfg);
    }

    match state.mode {
        Mode::Idle { until } if obs.timestamp < until => {
            let action = ActionCommand {
                rotate_deg: 0.0,
                pitch_deg: None,
                forward_m: 0.0,
                expression: Expression::DefaultStill,
                new_mode: state.mode,
            };
            (*state, action)
        }
        Mode::Searching { turns_done, pitch_raised, direction } => {
            search(state, turns_done, pitch_raised, direction, obs, cfg)
        }
        Mode::Following | Mode::Idle { .. } => {
            let direction = match state.last_seen_side {
                Side::Left => TurnDirection::Left,
                Side::Right | Side::Unknown => TurnDirection::Right,
            };
            search(state, 0, false, direction, obs, cfg)
        }
    }
}

fn follow(
    state: &ControllerState,
    obs: &Observation,
    lm: &LandmarkSet,
    cfg: &ControllerConfig,
) -> (ControllerState, ActionCommand) {
    let w = f64::from(obs.width);
    let anchor_x = face_point(lm)
        .map(|(x, _)| x)
        .or_else(|| lm.neck().map(|p| p.x))
        .or_else(|| lm.bounding_box().map(|(x0, _, x1, _)| (x0 + x1) / 2.0));
    let last_seen_side = match anchor_x {
        Some(x) if x < w / 2.0 => Side::Left,
        Some(_) => Side::Right,
        None => state.last_seen_side,
    };

    let forward_m = estimate_distance_m(lm, cfg).map(|d| forward_command(d, cfg)).unwrap_or(0.0);

    let (rotate_deg, pitch_deg, expression) = match gaze_adjustment(lm, obs.width, obs.height, cfg) {
        Ok((pan, tilt)) => {
            let expression = if has_eye(lm) { Expression::Active } else { Expression::Expecting };
            (
                pan.clamp(-MAX_ROTATE_DEG, MAX_ROTATE_DEG),
                Some(clamp_pitch(state.current_pitch + tilt, cfg)),
                expression,
            )
        }
        Err(_) if lm.neck().is_some() => (
            0.0,
            Some(clamp_pitch(state.current_pitch + cfg.face_raise_pitch_deg, cfg)),
            Expression::Expecting,
        ),
        Err(_) => (0.0, None, Expression::Expecting),
    };

    let next = ControllerState {
        mode: Mode::Following,
        last_seen_side,
        current_pitch: pitch_deg.unwrap_or(state.current_pitch),
    };
    let action = ActionCommand { rotate_deg, pitch_deg, forward_m, expression, new_mode: next.mode };
    (next, action)
}

fn search(
    state: &ControllerState,
    turns_done: u32,
    pitch_raised: bool,
    direction: TurnDirection,
    obs: &Observation,
    cfg: &ControllerConfig,
) -> (ControllerState, ActionCommand) {
    let revolution = cfg.turns_per_revolution;
    if turns_done >= 2 * revolution {
        let mode = Mode::Idle { until: obs.timestamp + cfg.idle_duration_s };
        let next = ControllerState { mode, ..*state };
        let action = ActionCommand {
            rotate_deg: 0.0,
            pitch_deg: None,
            forward_m: 0.0,
            expression: Expression::DefaultStill,
            new_mode: mode,
        };
        return (next, action);
    }

    let raise = turns_done >= revolution && !pitch_raised;
    let pitch_deg = raise.then_some(cfg.search_pitch_deg);
    let rotate_deg = match direction {
        TurnDirection::Left => -cfg.search_turn_deg,
        TurnDirection::Right => cfg.search_turn_deg,
    };
    let mode = Mode::Searching { turns_done: turns_done + 1, pitch_raised: pitch_raised || raise, direction };
    let next = ControllerState {
        mode,
        last_seen_side: state.last_seen_side,
        current_pitch: pitch_deg.unwrap_or(state.current_pitch),
    };
    let action = ActionCommand { rotate_deg, pitch_deg, forward_m: 0.0, expression: aware(direction), new_mode: mode };
    (next, action)
}

/// Owns the state for one session.
#[derive(Debug, Clone)]
pub struct Controller {
    cfg: ControllerConfig,
    state: ControllerState,
}

impl Controller {
    pub fn new(cfg: ControllerConfig) -> Result<Self, ControllerError> {
        cfg.validate()?;
        Ok(Self { cfg, state: ControllerState::default() })
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn step(&mut self, obs: &Observation) -> ActionCommand {
        let (next, action) = controller_step(&self.state, obs, &self.cfg);
        self.state = next;
        action
    }
}
