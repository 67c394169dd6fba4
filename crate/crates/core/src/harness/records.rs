//! Line-delimited JSON grounding records.
//!
//! One record per line, one line per video. A record carries an optional
//! tube (`segment` plus frame-indexed `boxes`), optional clip scores and
//! optional raw detections. Fields this crate does not know are kept in
//! `extra` and written back unchanged.
//!
//! ```text
//! {"video_id":"v001","query":"the man in red","segment":[3,5],"boxes":{"3":[0,0,10,10],"4":[1,0,11,10],"5":[2,0,12,10]}}
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::geometry::BBox;
use crate::linking::Detection;
use crate::moments::{flatten_rows, MomentError, MomentMap, TemporalDistributions};
use crate::tubes::{validate_tube, Coverage, Frame, FusionMeta, Segment, Tube, Violation};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: malformed record")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: video {video_id}: invalid tube: {}", join(violations))]
    InvalidTube {
        line: usize,
        video_id: String,
        violations: Vec<Violation>,
    },
    #[error("line {line}: video {video_id}: inconsistent clip scores")]
    InvalidScores {
        line: usize,
        video_id: String,
        #[source]
        source: MomentError,
    },
    #[error(transparent)]
    Serialize(#[from] serde_json::Error),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Contrastive scores, either flat in candidate order or as triangular rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContrastiveScores {
    Flat(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

/// Per-clip model outputs for one candidate tube or video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipScores {
    pub n_clips: usize,
    /// Upper-triangular rows: row `i` covers spans `(i, i..n)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_iou: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contrastive: Option<ContrastiveScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_start: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_end: Option<Vec<f64>>,
    /// Fixed clip duration in frames. Without it, the record's segment is
    /// split evenly into `n_clips`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_length_frames: Option<u32>,
    /// First frame of clip 0 when `clip_length_frames` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_frame: Option<Frame>,
}

impl ClipScores {
    pub fn moment_map(&self) -> Result<Option<MomentMap>, MomentError> {
        let (Some(iou), Some(contrastive)) = (&self.predicted_iou, &self.contrastive) else {
            return Ok(None);
        };
        let iou = flatten_rows(self.n_clips, iou)?;
        let contrastive = match contrastive {
            ContrastiveScores::Flat(v) => v.clone(),
            ContrastiveScores::Rows(rows) => flatten_rows(self.n_clips, rows)?,
        };
        MomentMap::new(self.n_clips, iou, contrastive).map(Some)
    }

    pub fn distributions(&self) -> Result<Option<TemporalDistributions>, MomentError> {
        let (Some(s), Some(e)) = (&self.p_start, &self.p_end) else {
            return Ok(None);
        };
        if s.len() != self.n_clips {
            return Err(MomentError::ShapeMismatch {
                expected: self.n_clips,
                actual: s.len(),
            });
        }
        TemporalDistributions::new(s.clone(), e.clone()).map(Some)
    }

    pub fn validate(&self) -> Result<(), MomentError> {
        if self.predicted_iou.is_some() != self.contrastive.is_some() {
            return Err(MomentError::BadDistribution {
                name: "moment map",
                reason: "predicted_iou and contrastive must be given together".into(),
            });
        }
        if self.p_start.is_some() != self.p_end.is_some() {
            return Err(MomentError::BadDistribution {
                name: "start/end",
                reason: "p_start and p_end must be given together".into(),
            });
        }
        self.moment_map()?;
        self.distributions()?;
        Ok(())
    }
}

mod frame_boxes {
    use super::*;
    use serde::de::Error as _;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(boxes: &BTreeMap<Frame, BBox>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(boxes.iter().map(|(f, b)| (f.to_string(), b)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Frame, BBox>, D::Error> {
        let raw = BTreeMap::<String, BBox>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, b)| {
                k.parse::<Frame>()
                    .map(|f| (f, b))
                    .map_err(|_| D::Error::custom(format!("box key {k:?} is not a frame index")))
            })
            .collect()
    }
}

/// One line of a record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingRecord {
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<Segment>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty", with = "frame_boxes")]
    pub boxes: BTreeMap<Frame, BBox>,
    /// Omitted when it can be inferred: full with boxes, degenerate without.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<Coverage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion: Option<FusionMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<ClipScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<Vec<Detection>>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl GroundingRecord {
    pub fn new(video_id: impl Into<String>) -> Self {
        GroundingRecord {
            video_id: video_id.into(),
            query: None,
            source: None,
            segment: None,
            boxes: BTreeMap::new(),
            coverage: None,
            fusion: None,
            scores: None,
            detections: None,
            extra: Map::new(),
        }
    }

    pub fn from_tube(t: &Tube) -> Self {
        let inferred = if t.boxes.is_empty() {
            Coverage::Degenerate
        } else {
            Coverage::Full
        };
        GroundingRecord {
            query: t.query.clone(),
            source: t.source.clone(),
            segment: Some(t.segment),
            boxes: t.boxes.clone(),
            coverage: (t.coverage != inferred).then_some(t.coverage),
            fusion: t.fusion.clone(),
            ..GroundingRecord::new(t.video_id.clone())
        }
    }

    /// The record's tube, if it has a segment. Not validated.
    pub fn tube(&self) -> Option<Tube> {
        let segment = self.segment?;
        let coverage = self.coverage.unwrap_or(if self.boxes.is_empty() {
            Coverage::Degenerate
        } else {
            Coverage::Full
        });
        Some(Tube {
            video_id: self.video_id.clone(),
            query: self.query.clone(),
            source: self.source.clone(),
            segment,
            boxes: self.boxes.clone(),
            coverage,
            fusion: self.fusion.clone(),
        })
    }

    fn check(&self, line: usize) -> Result<(), RecordError> {
        if let Some(t) = self.tube() {
            validate_tube(&t).map_err(|violations| RecordError::InvalidTube {
                line,
                video_id: self.video_id.clone(),
                violations,
            })?;
        } else if !self.boxes.is_empty() {
            return Err(RecordError::InvalidTube {
                line,
                video_id: self.video_id.clone(),
                violations: self.boxes.keys().map(|&f| Violation::ExtraFrame(f)).collect(),
            });
        }
        if let Some(scores) = &self.scores {
            scores.validate().map_err(|source| RecordError::InvalidScores {
                line,
                video_id: self.video_id.clone(),
                source,
            })?;
        }
        Ok(())
    }
}

/// Parses and validates records from a reader. Blank lines are skipped;
/// line numbers in errors are 1-based.
pub fn parse_records<R: Read>(reader: R) -> Result<Vec<GroundingRecord>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let rec: GroundingRecord =
            serde_json::from_str(trimmed).map_err(|source| RecordError::Parse { line: i + 1, source })?;
        rec.check(i + 1)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<GroundingRecord>, RecordError> {
    parse_records(File::open(path)?)
}

/// Tubes of every record that has a segment.
pub fn read_tubes(path: impl AsRef<Path>) -> Result<Vec<Tube>, RecordError> {
    Ok(read_records(path)?.iter().filter_map(GroundingRecord::tube).collect())
}

pub fn emit_records<W: Write>(writer: W, records: &[GroundingRecord]) -> Result<(), RecordError> {
    let mut w = BufWriter::new(writer);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records(records: &[GroundingRecord], path: impl AsRef<Path>) -> Result<(), RecordError> {
    emit_records(File::create(path)?, records)
}

pub fn write_tubes(tubes: &[Tube], path: impl AsRef<Path>) -> Result<(), RecordError> {
    let records: Vec<GroundingRecord> = tubes.iter().map(GroundingRecord::from_tube).collect();
    write_records(&records, path)
}
