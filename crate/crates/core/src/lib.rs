//! Activity summaries from a person-following robot camera.
//!
//! The crate covers the whole offline and online path:
//!
//! - [`filter`] drops blurred and ill-posed frames (no person, too small, at
//!   the edge, forehead cropped, eyes not visible).
//! - [`summarizer`] clusters the remaining frames by temporal gaps with an
//!   adaptive threshold and picks one representative keyframe per cluster.
//! - [`controller`] is the follow/search/idle state machine that steers the
//!   robot toward well-posed views.
//! - [`service`] puts filter and controller behind a line-delimited JSON TCP
//!   protocol and summarizes at the end of each session.
//! - [`scenario`] generates labeled synthetic sessions; [`io`] holds the
//!   on-disk formats.
//!
//! Pose landmarks and per-frame action features are inputs; nothing here
//! runs a neural network.

pub mod config;
pub mod controller;
pub mod filter;
pub mod io;
pub mod model;
pub mod scenario;
pub mod service;
pub mod summarizer;

pub use config::PipelineConfig;
pub use controller::{ActionCommand, Controller, ControllerConfig, ControllerState, Expression, Observation};
pub use filter::{Classification, FilterConfig, FilterReport, GrayImage};
pub use model::{
    BodyPart, Cluster, FeatureVector, FrameRecord, IllPosedReason, Keypoint, LandmarkSet, ManifestEntry,
    SummaryManifest, FEATURE_DIM, NUM_LANDMARKS,
};
pub use summarizer::SummarizerConfig;
