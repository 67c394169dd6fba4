//! Greedy score-and-overlap linking of per-frame person detections into
//! candidate tubes.
//!
//! Seeds are taken from the earliest frame that still has an unused
//! detection. A tube grows one frame at a time, choosing the unused
//! detection that maximizes `score + score_weight * IoU(last, candidate)`
//! among those overlapping the last box by at least the continuity
//! threshold. Up to `max_gap_frames` frames may be skipped; skipped frames
//! get linearly interpolated boxes.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{box_iou, BBox, GeometryError};
use crate::tubes::{Coverage, Frame, Segment, Tube};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("detection {index} has an invalid box: {error}")]
    BadBox { index: usize, error: GeometryError },
    #[error("detection {index} has score {score}, expected a value in [0, 1]")]
    BadScore { index: usize, score: f64 },
    #[error("invalid link parameter: {0}")]
    BadParams(&'static str),
    #[error("cannot score a tube without detections")]
    NoDetections,
    #[error("detection on frame {0} does not belong to the tube")]
    ForeignDetection(Frame),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: Frame,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(frame: Frame, bbox: BBox, score: f64) -> Self {
        Detection { frame, bbox, score }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkParams {
    pub iou_continuity_threshold: f64,
    pub score_weight: f64,
    pub max_gap_frames: u32,
    pub min_tube_length: u32,
    pub max_tubes: usize,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            iou_continuity_threshold: 0.5,
            score_weight: 1.0,
            max_gap_frames: 1,
            min_tube_length: 5,
            max_tubes: 10,
        }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<(), LinkError> {
        if !(0.0..=1.0).contains(&self.iou_continuity_threshold) {
            return Err(LinkError::BadParams("iou_continuity_threshold must lie in [0, 1]"));
        }
        if !(self.score_weight.is_finite() && self.score_weight >= 0.0) {
            return Err(LinkError::BadParams("score_weight must be finite and >= 0"));
        }
        if self.min_tube_length == 0 {
            return Err(LinkError::BadParams("min_tube_length must be >= 1"));
        }
        if self.max_tubes == 0 {
            return Err(LinkError::BadParams("max_tubes must be >= 1"));
        }
        Ok(())
    }
}

/// A linked tube with the detections it consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkedTube {
    pub tube: Tube,
    pub mean_score: f64,
    pub detections: Vec<Detection>,
    /// Frames whose boxes were interpolated across a gap.
    pub interpolated: Vec<Frame>,
}

/// Links `dets` into at most `params.max_tubes` tubes.
///
/// Detections may arrive in any order; within a frame, input order breaks
/// ties. Each detection ends up in at most one tube. Tubes shorter than
/// `min_tube_length` are discarded, but their detections stay consumed.
pub fn link_detections(video_id: &str, dets: &[Detection], params: &LinkParams) -> Result<Vec<LinkedTube>, LinkError> {
    params.validate()?;
    for (index, d) in dets.iter().enumerate() {
        d.bbox.validate().map_err(|error| LinkError::BadBox { index, error })?;
        if !(d.score.is_finite() && (0.0..=1.0).contains(&d.score)) {
            return Err(LinkError::BadScore { index, score: d.score });
        }
    }

    let mut by_frame: BTreeMap<Frame, Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        by_frame.entry(d.frame).or_default().push(i);
    }
    let mut used = vec![false; dets.len()];
    let mut tubes = Vec::new();

    while tubes.len() < params.max_tubes {
        let Some(seed) = pick_seed(dets, &by_frame, &used) else {
            break;
        };
        used[seed] = true;
        let mut chain = vec![seed];
        loop {
            let last = &dets[*chain.last().expect("chain starts with the seed")];
            let Some(next) = extend(dets, &by_frame, &used, last, params) else {
                break;
            };
            used[next] = true;
            chain.push(next);
        }
        let linked = build_tube(video_id, dets, &chain);
        if linked.tube.segment.frame_count() >= u64::from(params.min_tube_length) {
            tubes.push(linked);
        }
    }
    Ok(tubes)
}

/// Highest-score unused detection on the earliest frame that has one.
fn pick_seed(dets: &[Detection], by_frame: &BTreeMap<Frame, Vec<usize>>, used: &[bool]) -> Option<usize> {
    by_frame.values().find_map(|idxs| {
        idxs.iter()
            .copied()
            .filter(|&i| !used[i])
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dets[b].score >= dets[i].score => Some(b),
                _ => Some(i),
            })
    })
}

fn extend(
    dets: &[Detection],
    by_frame: &BTreeMap<Frame, Vec<usize>>,
    used: &[bool],
    last: &Detection,
    params: &LinkParams,
) -> Option<usize> {
    let first = last.frame.checked_add(1)?;
    let stop = first.saturating_add(params.max_gap_frames);
    for (_, idxs) in by_frame.range(first..=stop) {
        let mut best: Option<(usize, f64)> = None;
        for &i in idxs {
            if used[i] {
                continue;
            }
            let overlap = box_iou(&last.bbox, &dets[i].bbox);
            if overlap < params.iou_continuity_threshold {
                continue;
            }
            let objective = dets[i].score + params.score_weight * overlap;
            let better = match best {
                None => true,
                Some((b, bo)) => objective > bo || (objective == bo && dets[i].score > dets[b].score),
            };
            if better {
                best = Some((i, objective));
            }
        }
        if let Some((i, _)) = best {
            return Some(i);
        }
    }
    None
}

fn build_tube(video_id: &str, dets: &[Detection], chain: &[usize]) -> LinkedTube {
    let mut boxes = BTreeMap::new();
    let mut interpolated = Vec::new();
    for pair in chain.windows(2) {
        let (a, b) = (&dets[pair[0]], &dets[pair[1]]);
        let span = f64::from(b.frame - a.frame);
        for f in a.frame + 1..b.frame {
            let t = f64::from(f - a.frame) / span;
            boxes.insert(f, a.bbox.lerp(&b.bbox, t));
            interpolated.push(f);
        }
    }
    let used: Vec<Detection> = chain.iter().map(|&i| dets[i]).collect();
    for d in &used {
        boxes.insert(d.frame, d.bbox);
    }
    let start = used[0].frame;
    let end = used[used.len() - 1].frame;
    let tube = Tube {
        video_id: video_id.to_string(),
        query: None,
        source: Some("linked".to_string()),
        segment: Segment::new(start, end).expect("chain frames ascend"),
        boxes,
        coverage: Coverage::Full,
        fusion: None,
    };
    let mean_score = used.iter().map(|d| d.score).sum::<f64>() / used.len() as f64;
    LinkedTube {
        tube,
        mean_score,
        detections: used,
        interpolated,
    }
}

/// Mean score of the detections linked into `tube`. Interpolated frames have
/// no detection and do not count.
pub fn tube_score(tube: &Tube, dets_used: &[Detection]) -> Result<f64, LinkError> {
    if dets_used.is_empty() {
        return Err(LinkError::NoDetections);
    }
    if let Some(d) = dets_used.iter().find(|d| !tube.segment.contains(d.frame)) {
        return Err(LinkError::ForeignDetection(d.frame));
    }
    Ok(dets_used.iter().map(|d| d.score).sum::<f64>() / dets_used.len() as f64)
}

/// Links several videos in parallel. Output order follows input order.
pub fn link_videos(
    videos: &[(String, Vec<Detection>)],
    params: &LinkParams,
) -> Vec<Result<Vec<LinkedTube>, LinkError>> {
    videos
        .par_iter()
        .map(|(id, dets)| link_detections(id, dets, params))
        .collect()
}
