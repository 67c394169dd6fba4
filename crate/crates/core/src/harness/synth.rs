//! Seeded synthetic datasets standing in for two grounding models.
//!
//! Every video has one target person and, optionally, one distractor, each
//! following a smooth random walk on its own half of the frame. The
//! groundtruth tube is the target on a random sub-segment. Two model outputs
//! are derived from it:
//!
//! * model A gets the temporal extent nearly right but its boxes are jittered
//!   and sometimes follow the distractor;
//! * model B has tight boxes on the target but its segment is shifted,
//!   truncated or stretched.
//!
//! Fusing A's segment with B's boxes should therefore beat both.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::records::{write_records, GroundingRecord, RecordError};
use crate::geometry::BBox;
use crate::linking::Detection;
use crate::tubes::{Frame, Segment, Tube};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthesis parameter: {0}")]
    BadParams(String),
    #[error(transparent)]
    Records(#[from] RecordError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Temporal error patterns of model B.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapPattern {
    /// Whole segment moved earlier or later.
    Shift,
    /// One end cut short.
    Truncate,
    /// Both ends pushed outwards.
    Extend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub n_videos: usize,
    pub frames_per_video: u32,
    pub frame_width: f64,
    pub frame_height: f64,
    /// Groundtruth length as a fraction of the video, drawn uniformly.
    pub min_gt_fraction: f64,
    pub max_gt_fraction: f64,
    /// Std-dev of the per-frame random-walk step, pixels.
    pub walk_step: f64,
    pub distractor: bool,
    /// Std-dev of model A's endpoint error, as a fraction of the gt length.
    pub temporal_noise_a: f64,
    /// Std-dev of model A's corner jitter, as a fraction of box size.
    pub box_jitter_a: f64,
    /// Probability that model A tracks the distractor instead.
    pub wrong_person_rate_a: f64,
    /// Magnitude of model B's temporal error, as a fraction of the gt length.
    pub temporal_noise_b: f64,
    pub box_jitter_b: f64,
    pub gap_patterns: Vec<GapPattern>,
    pub detection_jitter: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_videos: 200,
            frames_per_video: 100,
            frame_width: 640.0,
            frame_height: 360.0,
            min_gt_fraction: 0.3,
            max_gt_fraction: 0.7,
            walk_step: 1.5,
            distractor: true,
            temporal_noise_a: 0.05,
            box_jitter_a: 0.2,
            wrong_person_rate_a: 0.25,
            temporal_noise_b: 0.5,
            box_jitter_b: 0.03,
            gap_patterns: vec![GapPattern::Shift, GapPattern::Truncate, GapPattern::Extend],
            detection_jitter: 0.02,
        }
    }
}

impl SynthParams {
    /// Both models reproduce the groundtruth exactly.
    pub fn noiseless() -> Self {
        SynthParams {
            temporal_noise_a: 0.0,
            box_jitter_a: 0.0,
            wrong_person_rate_a: 0.0,
            temporal_noise_b: 0.0,
            box_jitter_b: 0.0,
            detection_jitter: 0.0,
            ..SynthParams::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::BadParams(m.to_string()));
        if self.frames_per_video < 2 {
            return bad("frames_per_video must be at least 2");
        }
        if !(self.frame_width > 0.0 && self.frame_height > 0.0) {
            return bad("frame size must be positive");
        }
        if !(0.0 < self.min_gt_fraction && self.min_gt_fraction <= self.max_gt_fraction && self.max_gt_fraction <= 1.0)
        {
            return bad("gt fractions must satisfy 0 < min <= max <= 1");
        }
        for (name, v) in [
            ("walk_step", self.walk_step),
            ("temporal_noise_a", self.temporal_noise_a),
            ("box_jitter_a", self.box_jitter_a),
            ("temporal_noise_b", self.temporal_noise_b),
            ("box_jitter_b", self.box_jitter_b),
            ("detection_jitter", self.detection_jitter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be finite and >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.wrong_person_rate_a) {
            return bad("wrong_person_rate_a must lie in [0, 1]");
        }
        if self.temporal_noise_b > 0.0 && self.gap_patterns.is_empty() {
            return bad("gap_patterns is empty but temporal_noise_b > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub gts: Vec<Tube>,
    pub model_a: Vec<Tube>,
    pub model_b: Vec<Tube>,
    pub detections: Vec<(String, Vec<Detection>)>,
}

fn normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * sigma
}

/// Box trajectory over every frame of a video, confined to `[x_lo, x_hi]`.
fn random_walk(rng: &mut ChaCha8Rng, p: &SynthParams, x_lo: f64, x_hi: f64) -> Vec<BBox> {
    let half_w = rng.random_range(0.08..0.14) * p.frame_width / 2.0;
    let half_h = rng.random_range(0.25..0.4) * p.frame_height;
    let (min_cx, max_cx) = (x_lo + half_w, (x_hi - half_w).max(x_lo + half_w));
    let (min_cy, max_cy) = (half_h, (p.frame_height - half_h).max(half_h));
    let mut cx = rng.random_range(min_cx..=max_cx);
    let mut cy = rng.random_range(min_cy..=max_cy);
    (0..p.frames_per_video)
        .map(|_| {
            let b = BBox::from_center(cx, cy, 2.0 * half_w, 2.0 * half_h);
            cx = (cx + normal(rng, p.walk_step)).clamp(min_cx, max_cx);
            cy = (cy + normal(rng, p.walk_step * 0.5)).clamp(min_cy, max_cy);
            b
        })
        .collect()
}

fn jitter(rng: &mut ChaCha8Rng, b: &BBox, scale: f64) -> BBox {
    let (sw, sh) = (b.width() * scale, b.height() * scale);
    let x1 = b.x1 + normal(rng, sw);
    let y1 = b.y1 + normal(rng, sh);
    let x2 = b.x2 + normal(rng, sw);
    let y2 = b.y2 + normal(rng, sh);
    BBox::new(x1.min(x2), y1.min(y2), x1.max(x2), y1.max(y2))
}

fn clamp_segment(start: i64, end: i64, last: Frame) -> Segment {
    let last = i64::from(last);
    let s = start.clamp(0, last);
    let e = end.clamp(s, last);
    Segment::new(s as Frame, e as Frame).expect("clamped")
}

fn tube_on(video_id: &str, seg: Segment, track: &[BBox], source: &str) -> Tube {
    let mut t = Tube::constant(video_id, seg, BBox::new(0.0, 0.0, 0.0, 0.0));
    for (f, b) in t.boxes.iter_mut() {
        *b = track[*f as usize];
    }
    t.source = Some(source.to_string());
    t
}

/// Generates a dataset. The same seed and parameters always give
/// bit-identical output.
pub fn synth_dataset(seed: u64, p: &SynthParams) -> Result<SynthDataset, SynthError> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = p.frames_per_video - 1;
    let mut out = SynthDataset {
        gts: Vec::with_capacity(p.n_videos),
        model_a: Vec::with_capacity(p.n_videos),
        model_b: Vec::with_capacity(p.n_videos),
        detections: Vec::with_capacity(p.n_videos),
    };

    for index in 0..p.n_videos {
        let video_id = format!("v{index:05}");
        let half = p.frame_width / 2.0;
        let target_left = rng.random_bool(0.5);
        let (t_lo, d_lo) = if target_left { (0.0, half) } else { (half, 0.0) };
        let target = random_walk(&mut rng, p, t_lo, t_lo + half);
        let distractor = random_walk(&mut rng, p, d_lo, d_lo + half);

        let frames = f64::from(p.frames_per_video);
        let frac = rng.random_range(p.min_gt_fraction..=p.max_gt_fraction);
        let len = ((frac * frames).round() as u32).clamp(1, p.frames_per_video);
        let start = rng.random_range(0..=p.frames_per_video - len);
        let gt_seg = Segment::new(start, start + len - 1).expect("len >= 1");
        let mut gt = tube_on(&video_id, gt_seg, &target, "groundtruth");
        gt.query = Some(format!(
            "the person on the {} side",
            if target_left { "left" } else { "right" }
        ));
        let len_f = f64::from(len);

        // model A: close temporal extent, noisy boxes
        let a_start = i64::from(start) + normal(&mut rng, p.temporal_noise_a * len_f).round() as i64;
        let a_end = i64::from(gt_seg.end()) + normal(&mut rng, p.temporal_noise_a * len_f).round() as i64;
        let a_seg = clamp_segment(a_start, a_end, last);
        let wrong = p.distractor && rng.random_bool(p.wrong_person_rate_a);
        let followed = if wrong { &distractor } else { &target };
        let mut a = tube_on(&video_id, a_seg, followed, "model_a");
        for b in a.boxes.values_mut() {
            *b = jitter(&mut rng, b, p.box_jitter_a);
        }

        // model B: tight boxes, wrong temporal extent
        let pattern_pick = rng.random_range(0..p.gap_patterns.len().max(1));
        let magnitude = (rng.random_range(0.5..=1.0) * p.temporal_noise_b * len_f).round() as i64;
        let forward = rng.random_bool(0.5);
        let (gs, ge) = (i64::from(gt_seg.start()), i64::from(gt_seg.end()));
        let b_seg = match p.gap_patterns.get(pattern_pick) {
            None => gt_seg,
            Some(GapPattern::Shift) => {
                let d = if forward { magnitude } else { -magnitude };
                clamp_segment(gs + d, ge + d, last)
            }
            Some(GapPattern::Truncate) => {
                let m = magnitude.min(ge - gs);
                if forward {
                    clamp_segment(gs + m, ge, last)
                } else {
                    clamp_segment(gs, ge - m, last)
                }
            }
            Some(GapPattern::Extend) => clamp_segment(gs - magnitude, ge + magnitude, last),
        };
        let mut b = tube_on(&video_id, b_seg, &target, "model_b");
        for bx in b.boxes.values_mut() {
            *bx = jitter(&mut rng, bx, p.box_jitter_b);
        }

        let mut dets = Vec::new();
        for f in 0..p.frames_per_video {
            let tb = jitter(&mut rng, &target[f as usize], p.detection_jitter);
            dets.push(Detection::new(f, tb, rng.random_range(0.7..1.0)));
            if p.distractor {
                let db = jitter(&mut rng, &distractor[f as usize], p.detection_jitter);
                dets.push(Detection::new(f, db, rng.random_range(0.5..0.9)));
            }
        }

        out.gts.push(gt);
        out.model_a.push(a);
        out.model_b.push(b);
        out.detections.push((video_id, dets));
    }
    Ok(out)
}

impl SynthDataset {
    /// Writes `gt.jsonl`, `model_a.jsonl`, `model_b.jsonl` and
    /// `detections.jsonl` into `dir`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<(), SynthError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let to_records = |ts: &[Tube]| ts.iter().map(GroundingRecord::from_tube).collect::<Vec<_>>();
        write_records(&to_records(&self.gts), dir.join("gt.jsonl"))?;
        write_records(&to_records(&self.model_a), dir.join("model_a.jsonl"))?;
        write_records(&to_records(&self.model_b), dir.join("model_b.jsonl"))?;
        let dets: Vec<GroundingRecord> = self
            .detections
            .iter()
            .map(|(id, d)| GroundingRecord {
                detections: Some(d.clone()),
                ..GroundingRecord::new(id.clone())
            })
            .collect();
        write_records(&dets, dir.join("detections.jsonl"))?;
        Ok(())
    }
}

/// Writes one `<split>.jsonl` of synthetic groundtruth per entry of `counts`.
pub fn write_split_files(
    seed: u64,
    counts: &BTreeMap<String, u64>,
    params: &SynthParams,
    dir: impl AsRef<Path>,
) -> Result<(), SynthError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (k, (split, &n)) in counts.iter().enumerate() {
        let p = SynthParams {
            n_videos: n as usize,
            ..params.clone()
        };
        let data = synth_dataset(seed.wrapping_add(k as u64), &p)?;
        let records: Vec<GroundingRecord> = data
            .gts
            .iter()
            .map(|t| {
                let mut r = GroundingRecord::from_tube(t);
                r.video_id = format!("{split}_{}", t.video_id);
                r
            })
            .collect();
        write_records(&records, dir.join(format!("{split}.jsonl")))?;
    }
    Ok(())
}
