//! tIoU, vIoU and vIoU@R, plus dataset-level aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::box_iou;
use crate::tubes::{Segment, Tube};

pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.3, 0.5];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("video id mismatch: prediction {pred} vs groundtruth {gt}")]
    VideoMismatch { pred: String, gt: String },
    #[error("cannot compute vIoU@R over an empty list")]
    Empty,
    #[error("threshold {0} is outside (0, 1)")]
    BadThreshold(f64),
    #[error("duplicate prediction for video {0}")]
    DuplicatePrediction(String),
    #[error("duplicate groundtruth for video {0}")]
    DuplicateGroundtruth(String),
    #[error("no groundtruth records to evaluate")]
    NoGroundtruth,
}

/// Number of frames shared by two inclusive segments.
fn shared_frames(a: &Segment, b: &Segment) -> u64 {
    a.intersection(b).map_or(0, |s| s.frame_count())
}

fn union_frames(a: &Segment, b: &Segment) -> u64 {
    a.frame_count() + b.frame_count() - shared_frames(a, b)
}

/// Temporal IoU over inclusive frame sets: `|S_i| / |S_u|`.
pub fn tiou(pred: &Segment, gt: &Segment) -> f64 {
    shared_frames(pred, gt) as f64 / union_frames(pred, gt) as f64
}

/// vIoU: per-frame box IoU summed over shared frames, divided by `|S_u|`.
///
/// A shared frame on which either tube has no box (partial coverage)
/// contributes zero but stays in the union.
pub fn viou(pred: &Tube, gt: &Tube) -> Result<f64, MetricsError> {
    if pred.video_id != gt.video_id {
        return Err(MetricsError::VideoMismatch {
            pred: pred.video_id.clone(),
            gt: gt.video_id.clone(),
        });
    }
    Ok(viou_unchecked(pred, gt))
}

fn viou_unchecked(pred: &Tube, gt: &Tube) -> f64 {
    let union = union_frames(&pred.segment, &gt.segment) as f64;
    let Some(shared) = pred.segment.intersection(&gt.segment) else {
        return 0.0;
    };
    let sum: f64 = shared
        .frames()
        .filter_map(|f| Some(box_iou(pred.box_at(f)?, gt.box_at(f)?)))
        .sum();
    sum / union
}

/// How a per-video vIoU is compared against R.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// `viou > R`
    #[default]
    Strict,
    /// `viou >= R`
    Inclusive,
}

impl Comparison {
    fn passes(self, value: f64, r: f64) -> bool {
        match self {
            Comparison::Strict => value > r,
            Comparison::Inclusive => value >= r,
        }
    }
}

/// Fraction of samples whose vIoU clears `r`.
pub fn viou_at_r(per_video: &[f64], r: f64, cmp: Comparison) -> Result<f64, MetricsError> {
    if per_video.is_empty() {
        return Err(MetricsError::Empty);
    }
    check_threshold(r)?;
    let hits = per_video.iter().filter(|&&v| cmp.passes(v, r)).count();
    Ok(hits as f64 / per_video.len() as f64)
}

fn check_threshold(r: f64) -> Result<(), MetricsError> {
    if r.is_finite() && r > 0.0 && r < 1.0 {
        Ok(())
    } else {
        Err(MetricsError::BadThreshold(r))
    }
}

/// What to do with a groundtruth record that has no prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPrediction {
    #[default]
    ScoreZero,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub comparison: Comparison,
    pub missing: MissingPrediction,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            comparison: Comparison::Strict,
            missing: MissingPrediction::ScoreZero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_id: String,
    pub viou: f64,
    pub tiou: f64,
    /// True when no prediction was found for this video.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub missing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScore {
    pub r: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mean_viou: f64,
    pub mean_tiou: f64,
    pub viou_at: Vec<ThresholdScore>,
    pub comparison: Comparison,
    pub evaluated: usize,
    pub missing_predictions: usize,
    /// Predictions whose video id has no groundtruth; they are not scored.
    pub unmatched_predictions: usize,
    pub per_video: Vec<VideoScore>,
}

impl MetricReport {
    pub fn fraction_at(&self, r: f64) -> Option<f64> {
        self.viou_at.iter().find(|t| t.r == r).map(|t| t.fraction)
    }

    /// A plain-text table with one row, columns vIoU, tIoU, vIoU@R...
    pub fn to_table(&self, method: &str) -> String {
        let width = method.len().max("Method".len());
        let mut out = String::new();
        let _ = write!(out, "{:<width$} | {:>6} | {:>6}", "Method", "vIoU", "tIoU");
        for t in &self.viou_at {
            let _ = write!(out, " | {:>9}", format!("vIoU@{}", t.r));
        }
        out.push('\n');
        let _ = write!(
            out,
            "{:<width$} | {:>6.3} | {:>6.3}",
            method, self.mean_viou, self.mean_tiou
        );
        for t in &self.viou_at {
            let _ = write!(out, " | {:>9.3}", t.fraction);
        }
        out.push('\n');
        out
    }
}

/// Scores every groundtruth tube against its prediction.
///
/// Per-video scores are computed in parallel and then summed in `video_id`
/// order, so the report does not depend on thread scheduling.
pub fn evaluate_dataset(preds: &[Tube], gts: &[Tube], config: &EvalConfig) -> Result<MetricReport, MetricsError> {
    for &r in &config.thresholds {
        check_threshold(r)?;
    }
    let mut gt_by_id: BTreeMap<&str, &Tube> = BTreeMap::new();
    for gt in gts {
        if gt_by_id.insert(&gt.video_id, gt).is_some() {
            return Err(MetricsError::DuplicateGroundtruth(gt.video_id.clone()));
        }
    }
    if gt_by_id.is_empty() {
        return Err(MetricsError::NoGroundtruth);
    }
    let mut pred_by_id: BTreeMap<&str, &Tube> = BTreeMap::new();
    for p in preds {
        if pred_by_id.insert(&p.video_id, p).is_some() {
            return Err(MetricsError::DuplicatePrediction(p.video_id.clone()));
        }
    }
    let unmatched_predictions = pred_by_id.keys().filter(|id| !gt_by_id.contains_key(*id)).count();

    let pairs: Vec<(&str, &Tube, Option<&Tube>)> = gt_by_id
        .iter()
        .map(|(id, gt)| (*id, *gt, pred_by_id.get(id).copied()))
        .collect();
    let scored: Vec<VideoScore> = pairs
        .par_iter()
        .map(|(id, gt, pred)| match pred {
            Some(p) => VideoScore {
                video_id: id.to_string(),
                viou: viou_unchecked(p, gt),
                tiou: tiou(&p.segment, &gt.segment),
                missing: false,
            },
            None => VideoScore {
                video_id: id.to_string(),
                viou: 0.0,
                tiou: 0.0,
                missing: true,
            },
        })
        .collect();

    let missing_predictions = scored.iter().filter(|s| s.missing).count();
    let per_video: Vec<VideoScore> = match config.missing {
        MissingPrediction::ScoreZero => scored,
        MissingPrediction::Skip => scored.into_iter().filter(|s| !s.missing).collect(),
    };
    if per_video.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = per_video.len() as f64;
    let mean_viou = per_video.iter().map(|s| s.viou).sum::<f64>() / n;
    let mean_tiou = per_video.iter().map(|s| s.tiou).sum::<f64>() / n;
    let vious: Vec<f64> = per_video.iter().map(|s| s.viou).collect();
    let viou_at = config
        .thresholds
        .iter()
        .map(|&r| {
            Ok(ThresholdScore {
                r,
                fraction: viou_at_r(&vious, r, config.comparison)?,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;

    Ok(MetricReport {
        mean_viou,
        mean_tiou,
        viou_at,
        comparison: config.comparison,
        evaluated: per_video.len(),
        missing_predictions,
        unmatched_predictions,
        per_video,
    })
}
