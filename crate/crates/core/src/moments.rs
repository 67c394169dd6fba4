//! Temporal moment selection.
//!
//! Two decoders live here. The moment-map decoder scores every sub-span
//! `(i, j), i <= j` of `n` clips and keeps the one with the largest product
//! of predicted IoU and (squashed) contrastive score. The start/end decoder
//! takes independent start and end distributions and picks the feasible pair
//! with the largest joint probability.
//!
//! Candidate lists are always in lexicographic order: `(0,0), (0,1), ...,
//! (0,n-1), (1,1), ...`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tubes::{ClipRange, ClipSpan, Segment};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MomentError {
    #[error("moment map needs at least one clip")]
    ZeroClips,
    #[error("span ({first}, {last}) does not fit in {n_clips} clips")]
    SpanOutOfRange { first: usize, last: usize, n_clips: usize },
    #[error("expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("feature dimension mismatch at clip {clip}: expected {expected}, got {actual}")]
    DimensionMismatch {
        clip: usize,
        expected: usize,
        actual: usize,
    },
    #[error("span touches empty clip {0}")]
    EmptyClip(usize),
    #[error("{name} is not a probability distribution: {reason}")]
    BadDistribution { name: &'static str, reason: String },
    #[error("predicted IoU {0} is outside [0, 1]")]
    BadIou(f64),
    #[error("non-finite contrastive score {0}")]
    BadScore(f64),
}

/// Number of valid candidates over `n` clips, `n(n+1)/2`.
pub fn candidate_count(n_clips: usize) -> usize {
    n_clips * (n_clips + 1) / 2
}

/// Position of `(i, j)` in the lexicographic candidate list.
fn flat_index(n_clips: usize, i: usize, j: usize) -> usize {
    // rows 0..i hold n, n-1, ..., n-i+1 entries
    i * n_clips - i * i.saturating_sub(1) / 2 + (j - i)
}

pub fn enumerate_candidates(n_clips: usize) -> Result<Vec<ClipSpan>, MomentError> {
    if n_clips == 0 {
        return Err(MomentError::ZeroClips);
    }
    Ok((0..n_clips)
        .flat_map(|i| (i..n_clips).map(move |j| ClipSpan::new(i, j)))
        .collect())
}

/// How contrastive scores are mapped before multiplying with predicted IoU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveNorm {
    /// Logistic squashing into (0, 1).
    #[default]
    Sigmoid,
    /// Use the scores as given.
    Raw,
}

impl ContrastiveNorm {
    pub fn apply(self, score: f64) -> f64 {
        match self {
            ContrastiveNorm::Sigmoid => sigmoid(score),
            ContrastiveNorm::Raw => score,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-candidate scores over a triangular map of `n_clips` clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentMap {
    n_clips: usize,
    predicted_iou: Vec<f64>,
    contrastive: Vec<f64>,
}

impl MomentMap {
    /// Builds a map from flat candidate-ordered score vectors.
    pub fn new(n_clips: usize, predicted_iou: Vec<f64>, contrastive: Vec<f64>) -> Result<Self, MomentError> {
        if n_clips == 0 {
            return Err(MomentError::ZeroClips);
        }
        let expected = candidate_count(n_clips);
        for len in [predicted_iou.len(), contrastive.len()] {
            if len != expected {
                return Err(MomentError::ShapeMismatch { expected, actual: len });
            }
        }
        if let Some(&p) = predicted_iou.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(MomentError::BadIou(p));
        }
        if let Some(&c) = contrastive.iter().find(|c| !c.is_finite()) {
            return Err(MomentError::BadScore(c));
        }
        Ok(MomentMap {
            n_clips,
            predicted_iou,
            contrastive,
        })
    }

    /// Builds a map from upper-triangular rows: row `i` holds the scores of
    /// `(i, i), (i, i+1), ..., (i, n-1)`.
    pub fn from_rows(predicted_iou: &[Vec<f64>], contrastive: &[Vec<f64>]) -> Result<Self, MomentError> {
        let n = predicted_iou.len();
        Self::new(n, flatten_rows(n, predicted_iou)?, flatten_rows(n, contrastive)?)
    }

    pub fn n_clips(&self) -> usize {
        self.n_clips
    }

    pub fn predicted_iou(&self, span: ClipSpan) -> Option<f64> {
        self.index(span).map(|k| self.predicted_iou[k])
    }

    pub fn contrastive(&self, span: ClipSpan) -> Option<f64> {
        self.index(span).map(|k| self.contrastive[k])
    }

    fn index(&self, span: ClipSpan) -> Option<usize> {
        span.fits(self.n_clips)
            .then(|| flat_index(self.n_clips, span.first_clip, span.last_clip))
    }
}

/// Flattens upper-triangular rows into candidate order.
pub fn flatten_rows(n_clips: usize, rows: &[Vec<f64>]) -> Result<Vec<f64>, MomentError> {
    if rows.len() != n_clips {
        return Err(MomentError::ShapeMismatch {
            expected: n_clips,
            actual: rows.len(),
        });
    }
    let mut out = Vec::with_capacity(candidate_count(n_clips));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n_clips - i {
            return Err(MomentError::ShapeMismatch {
                expected: n_clips - i,
                actual: row.len(),
            });
        }
        out.extend_from_slice(row);
    }
    Ok(out)
}

/// Temporal IoU between every candidate and `gt_span`, counting clips
/// inclusively.
pub fn moment_iou_targets(n_clips: usize, gt_span: ClipSpan) -> Result<Vec<f64>, MomentError> {
    if !gt_span.fits(n_clips) {
        return Err(MomentError::SpanOutOfRange {
            first: gt_span.first_clip,
            last: gt_span.last_clip,
            n_clips,
        });
    }
    Ok(enumerate_candidates(n_clips)?
        .into_iter()
        .map(|c| span_iou(c, gt_span))
        .collect())
}

fn span_iou(a: ClipSpan, b: ClipSpan) -> f64 {
    let lo = a.first_clip.max(b.first_clip);
    let hi = a.last_clip.min(b.last_clip);
    let inter = if lo <= hi { hi - lo + 1 } else { 0 };
    let union = a.clip_count() + b.clip_count() - inter;
    inter as f64 / union as f64
}

/// Elementwise maximum of the feature vectors of clips `i..=j`.
pub fn maxpool_span(clip_features: &[Vec<f64>], span: ClipSpan) -> Result<Vec<f64>, MomentError> {
    if !span.fits(clip_features.len()) {
        return Err(MomentError::SpanOutOfRange {
            first: span.first_clip,
            last: span.last_clip,
            n_clips: clip_features.len(),
        });
    }
    let dim = clip_features[span.first_clip].len();
    let mut pooled = vec![f64::NEG_INFINITY; dim];
    let pool = &clip_features[span.first_clip..=span.last_clip];
    for (clip, v) in (span.first_clip..).zip(pool) {
        if v.len() != dim {
            return Err(MomentError::DimensionMismatch {
                clip,
                expected: dim,
                actual: v.len(),
            });
        }
        for (p, x) in pooled.iter_mut().zip(v) {
            *p = p.max(*x);
        }
    }
    Ok(pooled)
}

/// The candidate maximizing `predicted_iou * norm(contrastive)`.
///
/// Ties go to the earlier start, then the shorter span; both follow from
/// scanning in candidate order and only replacing on a strict improvement.
pub fn select_moment(map: &MomentMap, norm: ContrastiveNorm) -> Result<(ClipSpan, f64), MomentError> {
    let candidates = enumerate_candidates(map.n_clips)?;
    let mut best: Option<(ClipSpan, f64)> = None;
    for (k, span) in candidates.into_iter().enumerate() {
        let score = map.predicted_iou[k] * norm.apply(map.contrastive[k]);
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((span, score));
        }
    }
    best.ok_or(MomentError::ZeroClips)
}

/// Frames from the first frame of clip `i` to the last frame of clip `j`.
pub fn span_to_segment(span: ClipSpan, clip_ranges: &[ClipRange]) -> Result<Segment, MomentError> {
    if !span.fits(clip_ranges.len()) {
        return Err(MomentError::SpanOutOfRange {
            first: span.first_clip,
            last: span.last_clip,
            n_clips: clip_ranges.len(),
        });
    }
    let first = clip_ranges[span.first_clip]
        .frames
        .ok_or(MomentError::EmptyClip(span.first_clip))?;
    let last = clip_ranges[span.last_clip]
        .frames
        .ok_or(MomentError::EmptyClip(span.last_clip))?;
    Ok(Segment::new(first.start(), last.end()).expect("clip ranges ascend"))
}

/// Independent start and end probabilities over the same clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistributions")]
pub struct TemporalDistributions {
    p_start: Vec<f64>,
    p_end: Vec<f64>,
}

#[derive(Deserialize)]
struct RawDistributions {
    p_start: Vec<f64>,
    p_end: Vec<f64>,
}

impl TryFrom<RawDistributions> for TemporalDistributions {
    type Error = MomentError;

    fn try_from(raw: RawDistributions) -> Result<Self, Self::Error> {
        TemporalDistributions::new(raw.p_start, raw.p_end)
    }
}

pub const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

pub fn check_distribution(name: &'static str, p: &[f64]) -> Result<(), MomentError> {
    let bad = |reason: String| MomentError::BadDistribution { name, reason };
    if p.is_empty() {
        return Err(bad("empty".into()));
    }
    if let Some(x) = p.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(bad(format!("entry {x} is negative or not finite")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(bad(format!("sums to {sum}")));
    }
    Ok(())
}

impl TemporalDistributions {
    pub fn new(p_start: Vec<f64>, p_end: Vec<f64>) -> Result<Self, MomentError> {
        check_distribution("p_start", &p_start)?;
        check_distribution("p_end", &p_end)?;
        if p_start.len() != p_end.len() {
            return Err(MomentError::ShapeMismatch {
                expected: p_start.len(),
                actual: p_end.len(),
            });
        }
        Ok(TemporalDistributions { p_start, p_end })
    }

    pub fn n_clips(&self) -> usize {
        self.p_start.len()
    }

    pub fn p_start(&self) -> &[f64] {
        &self.p_start
    }

    pub fn p_end(&self) -> &[f64] {
        &self.p_end
    }
}

/// Which scoring rule produced a start/end decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeRule {
    /// `p_start[s] * p_end[e]`
    Product,
    /// `p_start[s] + p_end[e]`, used when every feasible product is zero.
    Additive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub span: ClipSpan,
    pub score: f64,
    pub rule: DecodeRule,
}

/// Best feasible `(s, e)` with `s <= e`.
///
/// When the independent distributions put all their mass on infeasible
/// pairs (every product is zero), the additive score is used instead so the
/// decoder still returns the most plausible ordered span.
pub fn decode_start_end(dists: &TemporalDistributions) -> Decoded {
    let product = best_pair(dists, |s, e| s * e);
    if product.1 > 0.0 {
        return Decoded {
            span: product.0,
            score: product.1,
            rule: DecodeRule::Product,
        };
    }
    let additive = best_pair(dists, |s, e| s + e);
    Decoded {
        span: additive.0,
        score: additive.1,
        rule: DecodeRule::Additive,
    }
}

fn best_pair(dists: &TemporalDistributions, score: impl Fn(f64, f64) -> f64) -> (ClipSpan, f64) {
    let n = dists.n_clips();
    let mut best = (ClipSpan::new(0, 0), f64::NEG_INFINITY);
    for s in 0..n {
        for e in s..n {
            let v = score(dists.p_start[s], dists.p_end[e]);
            if v > best.1 {
                best = (ClipSpan::new(s, e), v);
            }
        }
    }
    best
}
