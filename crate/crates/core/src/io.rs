//! File formats: JSONL frame metadata, the binary feature matrix, and JSON
//! summary manifests and filter reports.
//!
//! Feature file layout (little-endian throughout):
//!
//! ```text
//! b"FEAT" | n: u32 | dim: u32 (= 157) | n * dim f32, row-major
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    dedup_timestamps, FeatureVector, FrameRecord, Keypoint, LandmarkSet, ModelError, SummaryManifest,
    FEATURE_DIM, NUM_LANDMARKS,
};

pub const FEATURE_MAGIC: &[u8; 4] = b"FEAT";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("frame {frame_id}: timestamp goes backwards")]
    Order { frame_id: u64 },
    #[error("frame {frame_id}: duplicate frame_id")]
    DuplicateFrameId { frame_id: u64 },
    #[error("feature file does not start with FEAT")]
    BadMagic,
    #[error("feature dimension is {found}, expected {FEATURE_DIM}")]
    DimMismatch { found: u32 },
    #[error("feature value at row {row}, column {col} is outside [0, 1]")]
    RangeViolation { row: usize, col: usize },
    #[error("feature file truncated: expected {expected} bytes of data, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("feature file has trailing bytes after {rows} rows")]
    TrailingBytes { rows: usize },
    #[error("frame {frame_id}: feature row {row} out of range (matrix has {rows} rows)")]
    FeatureRowOutOfRange { frame_id: u64, row: u32, rows: usize },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One line of a frames JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecordWire {
    pub frame_id: u64,
    pub t: f64,
    pub w: u32,
    pub h: u32,
    pub landmarks: Option<[Option<[f64; 3]>; NUM_LANDMARKS]>,
    pub blur_var: Option<f64>,
    pub feat_row: Option<u32>,
}

impl From<&FrameRecord> for FrameRecordWire {
    fn from(f: &FrameRecord) -> Self {
        Self {
            frame_id: f.frame_id,
            t: f.timestamp,
            w: f.width,
            h: f.height,
            landmarks: f.landmarks.as_ref().map(landmarks_to_wire),
            blur_var: f.blur_variance,
            feat_row: f.feat_row,
        }
    }
}

pub fn landmarks_to_wire(lm: &LandmarkSet) -> [Option<[f64; 3]>; NUM_LANDMARKS] {
    lm.points().map(|p| p.map(|k| [k.x, k.y, k.confidence]))
}

pub fn landmarks_from_wire(points: &[Option<[f64; 3]>; NUM_LANDMARKS]) -> Result<LandmarkSet, ModelError> {
    LandmarkSet::new(points.map(|p| p.map(|[x, y, c]| Keypoint::new(x, y, c))))
}

impl FrameRecordWire {
    /// Validated conversion; features are left unresolved.
    pub fn into_record(self) -> Result<FrameRecord, ModelError> {
        let landmarks = self.landmarks.as_ref().map(landmarks_from_wire).transpose()?;
        let rec = FrameRecord {
            frame_id: self.frame_id,
            timestamp: self.t,
            width: self.w,
            height: self.h,
            landmarks,
            blur_variance: self.blur_var,
            feat_row: self.feat_row,
            features: None,
        };
        rec.validate()?;
        Ok(rec)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedFrames {
    pub frames: Vec<FrameRecord>,
    /// Frames dropped for repeating their predecessor's timestamp.
    pub duplicates_dropped: usize,
}

/// Strict JSONL parse. Blank lines are skipped; frames sharing a timestamp
/// keep only the first occurrence.
pub fn parse_frames_jsonl<R: BufRead>(reader: R) -> Result<ParsedFrames, IngestError> {
    let mut frames: Vec<FrameRecord> = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let wire: FrameRecordWire = serde_json::from_str(&line)
            .map_err(|e| IngestError::Parse { line: line_no, msg: e.to_string() })?;
        let rec = wire
            .into_record()
            .map_err(|e| IngestError::Parse { line: line_no, msg: e.to_string() })?;
        if !ids.insert(rec.frame_id) {
            return Err(IngestError::DuplicateFrameId { frame_id: rec.frame_id });
        }
        if frames.last().is_some_and(|prev| rec.timestamp < prev.timestamp) {
            return Err(IngestError::Order { frame_id: rec.frame_id });
        }
        frames.push(rec);
    }
    let duplicates_dropped = dedup_timestamps(&mut frames);
    Ok(ParsedFrames { frames, duplicates_dropped })
}

pub fn read_frames_file(path: impl AsRef<Path>) -> Result<ParsedFrames, IngestError> {
    parse_frames_jsonl(BufReader::new(File::open(path)?))
}

pub fn write_frames_jsonl<W: Write>(mut writer: W, frames: &[FrameRecord]) -> Result<(), IngestError> {
    for f in frames {
        serde_json::to_writer(&mut writer, &FrameRecordWire::from(f)).map_err(io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_frames_file(path: impl AsRef<Path>, frames: &[FrameRecord]) -> Result<(), IngestError> {
    write_frames_jsonl(BufWriter::new(File::create(path)?), frames)
}

/// Row-major `rows x FEATURE_DIM` matrix of per-frame action probabilities.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    rows: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_data(data: Vec<f32>) -> Result<Self, IngestError> {
        if !data.len().is_multiple_of(FEATURE_DIM) {
            return Err(IngestError::Truncated {
                expected: data.len().next_multiple_of(FEATURE_DIM) * 4,
                actual: data.len() * 4,
            });
        }
        let rows = data.len() / FEATURE_DIM;
        check_range(&data)?;
        Ok(Self { rows, data })
    }

    pub fn push_row(&mut self, row: &[f32]) -> Result<u32, IngestError> {
        if row.len() != FEATURE_DIM {
            return Err(IngestError::DimMismatch { found: row.len() as u32 });
        }
        if let Some(col) = row.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(IngestError::RangeViolation { row: self.rows, col });
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok((self.rows - 1) as u32)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> Option<&[f32]> {
        (i < self.rows).then(|| &self.data[i * FEATURE_DIM..(i + 1) * FEATURE_DIM])
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

fn check_range(data: &[f32]) -> Result<(), IngestError> {
    match data.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(i) => Err(IngestError::RangeViolation { row: i / FEATURE_DIM, col: i % FEATURE_DIM }),
        None => Ok(()),
    }
}

pub fn read_features<R: Read>(mut reader: R) -> Result<FeatureMatrix, IngestError> {
    let mut header = [0u8; 12];
    let mut got = 0;
    while got < header.len() {
        let n = reader.read(&mut header[got..])?;
        if n == 0 {
            break;
        }
        got += n;
    }
    if got < 4 || &header[..4] != FEATURE_MAGIC {
        return Err(IngestError::BadMagic);
    }
    if got < 12 {
        return Err(IngestError::Truncated { expected: 12, actual: got });
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if dim as usize != FEATURE_DIM {
        return Err(IngestError::DimMismatch { found: dim });
    }

    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let expected = rows * FEATURE_DIM * 4;
    if bytes.len() < expected {
        return Err(IngestError::Truncated { expected, actual: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(IngestError::TrailingBytes { rows });
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    check_range(&data)?;
    Ok(FeatureMatrix { rows, data })
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix, IngestError> {
    read_features(BufReader::new(File::open(path)?))
}

pub fn write_features<W: Write>(mut writer: W, matrix: &FeatureMatrix) -> Result<(), IngestError> {
    writer.write_all(FEATURE_MAGIC)?;
    writer.write_all(&(matrix.rows as u32).to_le_bytes())?;
    writer.write_all(&(FEATURE_DIM as u32).to_le_bytes())?;
    for v in &matrix.data {
        writer.write_all(&v.to_le_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_features(path: impl AsRef<Path>, matrix: &FeatureMatrix) -> Result<(), IngestError> {
    write_features(BufWriter::new(File::create(path)?), matrix)
}

/// Resolves each frame's `feat_row` against `matrix`.
pub fn attach_features(frames: &mut [FrameRecord], matrix: &FeatureMatrix) -> Result<(), IngestError> {
    for f in frames {
        let Some(row) = f.feat_row else { continue };
        let values = matrix.row(row as usize).ok_or(IngestError::FeatureRowOutOfRange {
            frame_id: f.frame_id,
            row,
            rows: matrix.rows(),
        })?;
        f.features = Some(FeatureVector::new(values.to_vec()).expect("matrix rows are validated"));
    }
    Ok(())
}

pub fn manifest_to_string(manifest: &SummaryManifest) -> String {
    serde_json::to_string_pretty(manifest).expect("manifest serializes")
}

pub fn write_summary_manifest(manifest: &SummaryManifest, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(manifest_to_string(manifest).as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_summary_manifest(path: impl AsRef<Path>) -> Result<SummaryManifest, IngestError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| IngestError::Manifest(e.to_string()))
}
