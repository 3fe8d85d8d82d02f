//! Fixtures shared by the benchmarks.

use robosumm_core::filter::filter_frames;
use robosumm_core::scenario::{generate_session, ScenarioSpec};
use robosumm_core::{FilterConfig, FrameRecord};

/// Well-posed frames of a day-long synthetic session: eight activities with
/// hour-scale gaps, `frames` in total.
pub fn wellposed_session(frames: usize, seed: u64) -> Vec<FrameRecord> {
    let per_segment = (frames / 8) as f64;
    let spec = ScenarioSpec::segmented(&[per_segment; 8], 3600.0, seed);
    let session = generate_session(&spec).expect("valid scenario");
    let (kept, _) = filter_frames(&session.frames, &FilterConfig::default()).expect("blur scores present");
    kept
}

/// Timestamps only, for the clustering kernels.
pub fn timestamps(frames: &[FrameRecord]) -> Vec<f64> {
    frames.iter().map(|f| f.timestamp).collect()
}
