//! Temporal segments, spatio-temporal tubes and clip partitioning.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, GeometryError};

pub type Frame = u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TubeError {
    #[error("segment start {start} is after end {end}")]
    InvertedSegment { start: Frame, end: Frame },
    #[error("cannot split into zero clips")]
    ZeroClips,
    #[error("clip length must be at least one frame")]
    ZeroClipLength,
    #[error("a tube needs at least one box")]
    NoBoxes,
}

/// Inclusive frame interval `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[Frame; 2]", into = "[Frame; 2]")]
pub struct Segment {
    start: Frame,
    end: Frame,
}

impl TryFrom<[Frame; 2]> for Segment {
    type Error = TubeError;

    fn try_from(v: [Frame; 2]) -> Result<Self, Self::Error> {
        Segment::new(v[0], v[1])
    }
}

impl From<Segment> for [Frame; 2] {
    fn from(s: Segment) -> Self {
        [s.start, s.end]
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

impl Segment {
    pub fn new(start: Frame, end: Frame) -> Result<Self, TubeError> {
        if start > end {
            return Err(TubeError::InvertedSegment { start, end });
        }
        Ok(Segment { start, end })
    }

    pub fn start(&self) -> Frame {
        self.start
    }

    pub fn end(&self) -> Frame {
        self.end
    }

    /// Number of frames, `end - start + 1`.
    pub fn frame_count(&self) -> u64 {
        u64::from(self.end - self.start) + 1
    }

    pub fn contains(&self, frame: Frame) -> bool {
        self.start <= frame && frame <= self.end
    }

    pub fn frames(&self) -> impl Iterator<Item = Frame> {
        self.start..=self.end
    }

    pub fn intersection(&self, other: &Segment) -> Option<Segment> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start <= end).then_some(Segment { start, end })
    }
}

pub fn segment_frame_count(seg: &Segment) -> u64 {
    seg.frame_count()
}

/// How completely a tube's boxes cover its segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coverage {
    /// One box on every frame of the segment.
    #[default]
    Full,
    /// Some frames have no box; they score zero in vIoU.
    Partial,
    /// No boxes at all; the tube only carries a temporal extent.
    Degenerate,
}

impl Coverage {
    pub fn is_full(&self) -> bool {
        matches!(self, Coverage::Full)
    }
}

/// Audit trail attached to a fused tube.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionMeta {
    pub temporal_source: Option<String>,
    pub spatial_source: Option<String>,
    pub policy: crate::fusion::GapPolicy,
}

/// A segment plus per-frame boxes for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct Tube {
    pub video_id: String,
    pub query: Option<String>,
    /// Name of the model or process that produced the tube.
    pub source: Option<String>,
    pub segment: Segment,
    pub boxes: BTreeMap<Frame, BBox>,
    pub coverage: Coverage,
    pub fusion: Option<FusionMeta>,
}

impl Tube {
    /// A fully covered tube built from consecutive boxes starting at `start`.
    pub fn from_boxes(
        video_id: impl Into<String>,
        start: Frame,
        boxes: impl IntoIterator<Item = BBox>,
    ) -> Result<Self, TubeError> {
        let boxes: BTreeMap<Frame, BBox> = boxes
            .into_iter()
            .enumerate()
            .map(|(i, b)| (start + i as Frame, b))
            .collect();
        let end = *boxes.keys().next_back().ok_or(TubeError::NoBoxes)?;
        let segment = Segment::new(start, end)?;
        Ok(Tube {
            video_id: video_id.into(),
            query: None,
            source: None,
            segment,
            boxes,
            coverage: Coverage::Full,
            fusion: None,
        })
    }

    /// A tube on `segment` with the same box on every frame.
    pub fn constant(video_id: impl Into<String>, segment: Segment, bbox: BBox) -> Self {
        Tube {
            video_id: video_id.into(),
            query: None,
            source: None,
            segment,
            boxes: segment.frames().map(|f| (f, bbox)).collect(),
            coverage: Coverage::Full,
            fusion: None,
        }
    }

    /// A tube that only carries a temporal extent.
    pub fn temporal_only(video_id: impl Into<String>, segment: Segment) -> Self {
        Tube {
            video_id: video_id.into(),
            query: None,
            source: None,
            segment,
            boxes: BTreeMap::new(),
            coverage: Coverage::Degenerate,
            fusion: None,
        }
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self
    }

    pub fn box_at(&self, frame: Frame) -> Option<&BBox> {
        self.boxes.get(&frame)
    }

    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        validate_tube(self)
    }
}

/// One reason a tube is malformed.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("missing box for frame {0}")]
    MissingFrame(Frame),
    #[error("box on frame {0} lies outside the segment")]
    ExtraFrame(Frame),
    #[error("bad box on frame {frame}: {error}")]
    BadBox { frame: Frame, error: GeometryError },
    #[error("tube is flagged {flag:?} but has {boxes} boxes")]
    CoverageMismatch { flag: Coverage, boxes: usize },
}

/// Checks a tube against its invariants, collecting every violation.
///
/// Fully covered tubes need exactly one box per segment frame. Partial tubes
/// may skip frames; degenerate tubes must carry no boxes.
pub fn validate_tube(t: &Tube) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    for (&frame, bbox) in &t.boxes {
        if !t.segment.contains(frame) {
            violations.push(Violation::ExtraFrame(frame));
        }
        if let Err(error) = bbox.validate() {
            violations.push(Violation::BadBox { frame, error });
        }
    }
    match t.coverage {
        Coverage::Full => {
            violations.extend(
                t.segment
                    .frames()
                    .filter(|f| !t.boxes.contains_key(f))
                    .map(Violation::MissingFrame),
            );
        }
        Coverage::Partial => {}
        Coverage::Degenerate => {
            if !t.boxes.is_empty() {
                violations.push(Violation::CoverageMismatch {
                    flag: t.coverage,
                    boxes: t.boxes.len(),
                });
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Index of a clip inside a clip partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClipSpan {
    pub first_clip: usize,
    pub last_clip: usize,
}

impl ClipSpan {
    pub fn new(first_clip: usize, last_clip: usize) -> Self {
        ClipSpan { first_clip, last_clip }
    }

    pub fn clip_count(&self) -> usize {
        self.last_clip - self.first_clip + 1
    }

    pub fn contains(&self, clip: usize) -> bool {
        self.first_clip <= clip && clip <= self.last_clip
    }

    pub fn fits(&self, n_clips: usize) -> bool {
        self.first_clip <= self.last_clip && self.last_clip < n_clips
    }
}

/// Frames belonging to one clip. `frames` is `None` for the empty trailing
/// clips produced when a segment is shorter than the clip count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRange {
    pub clip: usize,
    pub frames: Option<Segment>,
}

impl ClipRange {
    pub fn is_empty(&self) -> bool {
        self.frames.is_none()
    }
}

/// Partitions `seg` into `n_clips` contiguous ranges whose lengths differ by
/// at most one; the earliest clips take the remainder. When the segment has
/// fewer frames than clips, the trailing clips are empty.
pub fn split_into_clips(seg: &Segment, n_clips: usize) -> Result<Vec<ClipRange>, TubeError> {
    if n_clips == 0 {
        return Err(TubeError::ZeroClips);
    }
    let total = seg.frame_count();
    let n = n_clips as u64;
    let base = total / n;
    let remainder = total % n;
    let mut next = u64::from(seg.start());
    let mut clips = Vec::with_capacity(n_clips);
    for clip in 0..n_clips {
        let len = base + u64::from((clip as u64) < remainder);
        let frames = if len == 0 {
            None
        } else {
            let start = next as Frame;
            let end = (next + len - 1) as Frame;
            next += len;
            Some(Segment { start, end })
        };
        clips.push(ClipRange { clip, frames });
    }
    Ok(clips)
}

/// Fixed-duration clips: clip `k` covers `origin + k*len .. origin + (k+1)*len - 1`.
pub fn fixed_length_clips(origin: Frame, n_clips: usize, clip_length_frames: u32) -> Result<Vec<ClipRange>, TubeError> {
    if n_clips == 0 {
        return Err(TubeError::ZeroClips);
    }
    if clip_length_frames == 0 {
        return Err(TubeError::ZeroClipLength);
    }
    Ok((0..n_clips)
        .map(|clip| {
            let start = origin + clip as Frame * clip_length_frames;
            ClipRange {
                clip,
                frames: Some(Segment {
                    start,
                    end: start + clip_length_frames - 1,
                }),
            }
        })
        .collect())
}
