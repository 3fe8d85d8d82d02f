//! Keyframe summarization by temporal gap clustering.
//!
//! Well-posed frames are split wherever the gap to the previous frame reaches
//! a threshold `h`. The threshold walks the lattice `h0 * 2^z` (doubling while
//! there are at least `k` clusters, halving otherwise) until `m(h) >= k` and
//! `m(2h) < k`. The `k` largest clusters are kept and each contributes the
//! frame closest (Euclidean) to its mean feature vector.
//!
//! Two baselines live here as well: evenly spaced frames and k-means over the
//! feature vectors.

use std::ops::Range;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Cluster, FrameRecord, ManifestEntry, SummaryManifest};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SummarizeError {
    #[error("no frames to summarize")]
    EmptyInput,
    #[error("gap threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error("keyframe count must be at least 1")]
    InvalidK,
    #[error("timestamps must be strictly increasing (position {position})")]
    UnorderedTimestamps { position: usize },
    #[error("cannot form {k} clusters from {n} frames")]
    InfeasibleK { n: usize, k: usize },
    #[error("threshold search did not converge after {iters} iterations (last h = {last_h})")]
    NonTermination { iters: u32, last_h: f64 },
    #[error("need at least {k} clusters, have {m}")]
    TooFewClusters { m: usize, k: usize },
    #[error("cluster has no frames")]
    EmptyCluster,
    #[error("feature vectors have inconsistent lengths ({expected} vs {actual})")]
    DimMismatch { expected: usize, actual: usize },
    #[error("frame {frame_id} has no feature vector")]
    MissingFeatures { frame_id: u64 },
    #[error("k-means needs at least {k} frames, have {n}")]
    InsufficientFrames { n: usize, k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummarizerConfig {
    pub k: usize,
    /// Initial gap threshold, seconds.
    pub h0: f64,
    pub max_adapt_iters: u32,
}

impl Default for SummarizerConfig {
    fn default() -> Self {
        Self { k: 8, h0: 60.0, max_adapt_iters: 64 }
    }
}

impl SummarizerConfig {
    pub fn validate(&self) -> Result<(), SummarizeError> {
        if self.k == 0 {
            return Err(SummarizeError::InvalidK);
        }
        check_threshold(self.h0)
    }
}

fn check_threshold(h: f64) -> Result<(), SummarizeError> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(SummarizeError::InvalidThreshold(h))
    }
}

fn gaps(timestamps: &[f64]) -> Result<Vec<f64>, SummarizeError> {
    if let Some(i) = timestamps.iter().position(|t| !t.is_finite()) {
        return Err(SummarizeError::UnorderedTimestamps { position: i });
    }
    timestamps
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            if w[1] > w[0] {
                Ok(w[1] - w[0])
            } else {
                Err(SummarizeError::UnorderedTimestamps { position: i + 1 })
            }
        })
        .collect()
}

fn count_from_gaps(gaps: &[f64], h: f64) -> usize {
    1 + gaps.iter().filter(|&&g| g >= h).count()
}

fn spans_from_gaps(gaps: &[f64], h: f64) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut start = 0;
    for (i, &g) in gaps.iter().enumerate() {
        if g >= h {
            spans.push(start..i + 1);
            start = i + 1;
        }
    }
    spans.push(start..gaps.len() + 1);
    spans
}

/// Splits strictly increasing timestamps into contiguous index spans: a frame
/// stays with its predecessor iff the gap between them is below `h`.
pub fn assign_clusters(timestamps: &[f64], h: f64) -> Result<Vec<Range<usize>>, SummarizeError> {
    if timestamps.is_empty() {
        return Err(SummarizeError::EmptyInput);
    }
    check_threshold(h)?;
    Ok(spans_from_gaps(&gaps(timestamps)?, h))
}

/// `m(h)`: the number of clusters [`assign_clusters`] would produce.
pub fn cluster_count(timestamps: &[f64], h: f64) -> Result<usize, SummarizeError> {
    if timestamps.is_empty() {
        return Err(SummarizeError::EmptyInput);
    }
    check_threshold(h)?;
    Ok(count_from_gaps(&gaps(timestamps)?, h))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedThreshold {
    pub h_star: f64,
    pub spans: Vec<Range<usize>>,
    pub iterations: u32,
}

/// Searches the lattice `h0 * 2^z` for `h*` with `m(h*) >= k` and
/// `m(2h*) < k`, checking the predicate before every update.
///
/// For `k == 1` the second condition cannot hold; the result is the first
/// lattice value at or above `h0` that yields a single cluster.
pub fn adapt_threshold(
    timestamps: &[f64],
    k: usize,
    h0: f64,
    max_iters: u32,
) -> Result<AdaptedThreshold, SummarizeError> {
    if timestamps.is_empty() {
        return Err(SummarizeError::EmptyInput);
    }
    if k == 0 {
        return Err(SummarizeError::InvalidK);
    }
    check_threshold(h0)?;
    let gaps = gaps(timestamps)?;
    let n = timestamps.len();
    if n < k {
        return Err(SummarizeError::InfeasibleK { n, k });
    }

    let mut h = h0;
    for iter in 0..max_iters {
        let m = count_from_gaps(&gaps, h);
        let done = if k == 1 { m == 1 } else { m >= k && count_from_gaps(&gaps, 2.0 * h) < k };
        if done {
            return Ok(AdaptedThreshold { h_star: h, spans: spans_from_gaps(&gaps, h), iterations: iter });
        }
        h = if m >= k { 2.0 * h } else { h / 2.0 };
    }
    Err(SummarizeError::NonTermination { iters: max_iters, last_h: h })
}

/// Materializes index spans over `frames` as [`Cluster`]s numbered from 0.
pub fn build_clusters(frames: &[FrameRecord], spans: &[Range<usize>]) -> Vec<Cluster> {
    spans
        .iter()
        .enumerate()
        .map(|(index, span)| {
            let members = &frames[span.clone()];
            Cluster {
                index,
                frame_ids: members.iter().map(|f| f.frame_id).collect(),
                start_time: members[0].timestamp,
                end_time: members[members.len() - 1].timestamp,
            }
        })
        .collect()
}

/// Keeps the `k` largest clusters (earlier start wins ties at the cut),
/// returned in temporal order.
pub fn select_top_k_clusters(clusters: &[Cluster], k: usize) -> Result<Vec<Cluster>, SummarizeError> {
    if clusters.len() < k {
        return Err(SummarizeError::TooFewClusters { m: clusters.len(), k });
    }
    let mut order: Vec<&Cluster> = clusters.iter().collect();
    order.sort_by(|a, b| b.len().cmp(&a.len()).then(a.start_time.total_cmp(&b.start_time)));
    let mut kept: Vec<Cluster> = order.into_iter().take(k).cloned().collect();
    kept.sort_by(|a, b| a.start_time.total_cmp(&b.start_time));
    Ok(kept)
}

/// Component-wise arithmetic mean, accumulated in f64.
pub fn cluster_mean(features: &[&[f32]]) -> Result<Vec<f64>, SummarizeError> {
    let first = features.first().ok_or(SummarizeError::EmptyCluster)?;
    let dim = first.len();
    let mut sum = vec![0.0f64; dim];
    for f in features {
        if f.len() != dim {
            return Err(SummarizeError::DimMismatch { expected: dim, actual: f.len() });
        }
        for (s, &v) in sum.iter_mut().zip(f.iter()) {
            *s += f64::from(v);
        }
    }
    let n = features.len() as f64;
    for s in &mut sum {
        *s /= n;
    }
    Ok(sum)
}

/// A frame offered to [`select_keyframe`].
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub frame_id: u64,
    pub timestamp: f64,
    pub features: Option<&'a [f32]>,
}

impl<'a> From<&'a FrameRecord> for Candidate<'a> {
    fn from(f: &'a FrameRecord) -> Self {
        Candidate { frame_id: f.frame_id, timestamp: f.timestamp, features: f.features.as_deref() }
    }
}

fn squared_distance(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &m)| {
            let d = f64::from(x) - m;
            d * d
        })
        .sum()
}

/// The member nearest to the cluster's mean feature vector; ties go to the
/// earliest timestamp.
pub fn select_keyframe(members: &[Candidate<'_>]) -> Result<u64, SummarizeError> {
    let feats = members
        .iter()
        .map(|c| c.features.ok_or(SummarizeError::MissingFeatures { frame_id: c.frame_id }))
        .collect::<Result<Vec<_>, _>>()?;
    let mean = cluster_mean(&feats)?;

    let mut best: Option<(f64, f64, u64)> = None;
    for (c, f) in members.iter().zip(&feats) {
        let d = squared_distance(f, &mean);
        let better = match best {
            None => true,
            Some((bd, bt, _)) => d < bd || (d == bd && c.timestamp < bt),
        };
        if better {
            best = Some((d, c.timestamp, c.frame_id));
        }
    }
    Ok(best.map(|(_, _, id)| id).expect("non-empty cluster"))
}

/// Largest lattice value `h0 * 2^z` that does not exceed `min_gap`.
fn singleton_threshold(h0: f64, min_gap: f64, max_iters: u32) -> Result<f64, SummarizeError> {
    let mut h = h0;
    for _ in 0..max_iters {
        if h > min_gap {
            h /= 2.0;
        } else if 2.0 * h <= min_gap {
            h *= 2.0;
        } else {
            return Ok(h);
        }
    }
    Err(SummarizeError::NonTermination { iters: max_iters, last_h: h })
}

/// Full pipeline: threshold search, top-k clusters, one keyframe per cluster.
///
/// With fewer frames than `k`, every frame becomes its own keyframe and the
/// manifest carries a warning.
pub fn summarize(frames: &[FrameRecord], cfg: &SummarizerConfig) -> Result<SummaryManifest, SummarizeError> {
    cfg.validate()?;
    let k = cfg.k;
    if frames.is_empty() {
        return Ok(SummaryManifest { k, h_star: cfg.h0, m: 0, entries: Vec::new(), warning: None });
    }
    let mut dim = None;
    for f in frames {
        let feat = f.features.as_ref().ok_or(SummarizeError::MissingFeatures { frame_id: f.frame_id })?;
        match dim {
            None => dim = Some(feat.len()),
            Some(d) if d != feat.len() => {
                return Err(SummarizeError::DimMismatch { expected: d, actual: feat.len() })
            }
            _ => {}
        }
    }
    let timestamps: Vec<f64> = frames.iter().map(|f| f.timestamp).collect();

    if frames.len() < k {
        let gaps = gaps(&timestamps)?;
        let h_star = match gaps.iter().copied().reduce(f64::min) {
            Some(min_gap) => singleton_threshold(cfg.h0, min_gap, cfg.max_adapt_iters)?,
            None => cfg.h0,
        };
        let entries = frames
            .iter()
            .enumerate()
            .map(|(i, f)| ManifestEntry { cluster: i, frame_id: f.frame_id, t: f.timestamp, cluster_size: 1 })
            .collect();
        return Ok(SummaryManifest {
            k,
            h_star,
            m: frames.len(),
            entries,
            warning: Some(format!(
                "only {} well-posed frames for k = {k}; every frame is a keyframe",
                frames.len()
            )),
        });
    }

    let adapted = adapt_threshold(&timestamps, k, cfg.h0, cfg.max_adapt_iters)?;
    let clusters = build_clusters(frames, &adapted.spans);
    let kept = select_top_k_clusters(&clusters, k)?;

    let mut entries = Vec::with_capacity(kept.len());
    for cluster in &kept {
        let span = adapted.spans[cluster.index].clone();
        let members: Vec<Candidate<'_>> = frames[span.clone()].iter().map(Candidate::from).collect();
        let frame_id = select_keyframe(&members)?;
        let t = members.iter().find(|c| c.frame_id == frame_id).map(|c| c.timestamp).unwrap();
        entries.push(ManifestEntry { cluster: cluster.index, frame_id, t, cluster_size: cluster.len() });
    }
    Ok(SummaryManifest { k, h_star: adapted.h_star, m: clusters.len(), entries, warning: None })
}

/// Indices `round(i * (n - 1) / (k - 1))`, or the middle frame for `k == 1`.
pub fn uniform_indices(n: usize, k: usize) -> Vec<usize> {
    if n == 0 || k == 0 {
        return Vec::new();
    }
    if k >= n {
        return (0..n).collect();
    }
    if k == 1 {
        return vec![(n - 1) / 2];
    }
    let mut out: Vec<usize> = (0..k)
        .map(|i| (2 * i * (n - 1) + (k - 1)) / (2 * (k - 1)))
        .collect();
    out.dedup();
    out
}

/// Baseline: evenly spaced frames by index, ignoring time and content.
pub fn uniform_keyframes(frames: &[FrameRecord], k: usize) -> Result<SummaryManifest, SummarizeError> {
    if frames.is_empty() {
        return Err(SummarizeError::EmptyInput);
    }
    if k == 0 {
        return Err(SummarizeError::InvalidK);
    }
    let entries: Vec<ManifestEntry> = uniform_indices(frames.len(), k)
        .into_iter()
        .enumerate()
        .map(|(i, idx)| ManifestEntry {
            cluster: i,
            frame_id: frames[idx].frame_id,
            t: frames[idx].timestamp,
            cluster_size: 1,
        })
        .collect();
    Ok(SummaryManifest { k, h_star: 0.0, m: entries.len(), entries, warning: None })
}

const KMEANS_MAX_ITERS: usize = 100;
const KMEANS_TOLERANCE: f64 = 1e-6;

fn nearest(point: &[f32], centroids: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.0 {
            best = (d, j);
        }
    }
    best.1
}

/// Baseline: Lloyd's k-means on feature vectors with seeded initialization.
///
/// Each centroid, in index order, emits the closest frame not already taken,
/// so exactly `k` distinct frames come out. Output is temporally sorted.
pub fn kmeans_keyframes(frames: &[FrameRecord], k: usize, seed: u64) -> Result<SummaryManifest, SummarizeError> {
    if k == 0 {
        return Err(SummarizeError::InvalidK);
    }
    if frames.len() < k {
        return Err(SummarizeError::InsufficientFrames { n: frames.len(), k });
    }
    let feats = frames
        .iter()
        .map(|f| f.features.as_deref().ok_or(SummarizeError::MissingFeatures { frame_id: f.frame_id }))
        .collect::<Result<Vec<&[f32]>, _>>()?;
    let dim = feats[0].len();
    if let Some(bad) = feats.iter().find(|f| f.len() != dim) {
        return Err(SummarizeError::DimMismatch { expected: dim, actual: bad.len() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = sample(&mut rng, frames.len(), k).into_vec();
    init.sort_unstable();
    let mut centroids: Vec<Vec<f64>> =
        init.iter().map(|&i| feats[i].iter().map(|&v| f64::from(v)).collect()).collect();

    let mut assignment = vec![0usize; frames.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        for (a, f) in assignment.iter_mut().zip(&feats) {
            *a = nearest(f, &centroids);
        }
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, f) in assignment.iter().zip(&feats) {
            counts[a] += 1;
            for (s, &v) in sums[a].iter_mut().zip(f.iter()) {
                *s += f64::from(v);
            }
        }
        let mut movement = 0.0f64;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let n = counts[j] as f64;
            let next: Vec<f64> = sums[j].iter().map(|s| s / n).collect();
            let shift = next.iter().zip(&centroids[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            movement = movement.max(shift);
            centroids[j] = next;
        }
        if movement < KMEANS_TOLERANCE {
            break;
        }
    }
    for (a, f) in assignment.iter_mut().zip(&feats) {
        *a = nearest(f, &centroids);
    }

    let mut taken = vec![false; frames.len()];
    let mut entries = Vec::with_capacity(k);
    for (j, c) in centroids.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for (i, f) in feats.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = squared_distance(f, c);
            let better = match best {
                None => true,
                Some((bd, bi)) => d < bd || (d == bd && frames[i].timestamp < frames[bi].timestamp),
            };
            if better {
                best = Some((d, i));
            }
        }
        let (_, i) = best.expect("n >= k leaves a free frame");
        taken[i] = true;
        entries.push(ManifestEntry {
            cluster: j,
            frame_id: frames[i].frame_id,
            t: frames[i].timestamp,
            cluster_size: assignment.iter().filter(|&&a| a == j).count(),
        });
    }
    entries.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(SummaryManifest { k, h_star: 0.0, m: k, entries, warning: None })
}
