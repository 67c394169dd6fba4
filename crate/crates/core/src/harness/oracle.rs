//! Brute-force reference implementations.
//!
//! These deliberately avoid the fast paths they check: metrics enumerate
//! frame sets instead of doing interval arithmetic, moment selection sorts
//! every candidate, and link checks re-verify every adjacent pair.

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::geometry::BBox;
use crate::linking::{Detection, LinkParams, LinkedTube};
use crate::moments::{ContrastiveNorm, MomentMap};
use crate::tubes::{ClipSpan, Segment, Tube};

fn frame_set(s: &Segment) -> HashSet<u32> {
    let mut set = HashSet::new();
    let mut f = s.start();
    loop {
        set.insert(f);
        if f == s.end() {
            break;
        }
        f += 1;
    }
    set
}

/// IoU by explicit corner comparison.
pub fn oracle_box_iou(a: &BBox, b: &BBox) -> f64 {
    let left = if a.x1 > b.x1 { a.x1 } else { b.x1 };
    let right = if a.x2 < b.x2 { a.x2 } else { b.x2 };
    let top = if a.y1 > b.y1 { a.y1 } else { b.y1 };
    let bottom = if a.y2 < b.y2 { a.y2 } else { b.y2 };
    let inter = if right > left && bottom > top {
        (right - left) * (bottom - top)
    } else {
        0.0
    };
    let area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
    let area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
    let union = area_a + area_b - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

pub fn oracle_tiou(pred: &Segment, gt: &Segment) -> f64 {
    let p = frame_set(pred);
    let g = frame_set(gt);
    let inter = p.intersection(&g).count();
    let union = p.union(&g).count();
    inter as f64 / union as f64
}

pub fn oracle_viou(pred: &Tube, gt: &Tube) -> f64 {
    let p = frame_set(&pred.segment);
    let g = frame_set(&gt.segment);
    let union = p.union(&g).count();
    let shared: BTreeSet<u32> = p.intersection(&g).copied().collect();
    let mut sum = 0.0;
    for f in shared {
        if let (Some(a), Some(b)) = (pred.boxes.get(&f), gt.boxes.get(&f)) {
            sum += oracle_box_iou(a, b);
        }
    }
    sum / union as f64
}

/// Exhaustive moment selection: score every `(i, j)`, then sort by score
/// descending, start ascending, length ascending.
pub fn oracle_select_moment(map: &MomentMap, norm: ContrastiveNorm) -> Option<(ClipSpan, f64)> {
    let n = map.n_clips();
    let mut all = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if j < i {
                continue;
            }
            let span = ClipSpan::new(i, j);
            let iou = map.predicted_iou(span)?;
            let c = map.contrastive(span)?;
            let squashed = match norm {
                ContrastiveNorm::Sigmoid => 1.0 / (1.0 + (-c).exp()),
                ContrastiveNorm::Raw => c,
            };
            all.push((span, iou * squashed));
        }
    }
    all.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite scores")
            .then(a.0.first_clip.cmp(&b.0.first_clip))
            .then((a.0.last_clip - a.0.first_clip).cmp(&(b.0.last_clip - b.0.first_clip)))
    });
    all.into_iter().next()
}

/// Verifies a linking result: valid tubes, the continuity threshold between
/// consecutive linked detections, each detection used once and consistent
/// mean scores. Returns a description of the first problem found.
pub fn oracle_link_check(tubes: &[LinkedTube], dets: &[Detection], params: &LinkParams) -> Result<(), String> {
    let mut uses: HashMap<(u32, [u64; 4], u64), usize> = HashMap::new();
    let key = |d: &Detection| (d.frame, d.bbox.to_array().map(f64::to_bits), d.score.to_bits());
    for d in dets {
        *uses.entry(key(d)).or_default() += 1;
    }
    if tubes.len() > params.max_tubes {
        return Err(format!("{} tubes exceed max_tubes {}", tubes.len(), params.max_tubes));
    }
    for (k, lt) in tubes.iter().enumerate() {
        let t = &lt.tube;
        if let Err(v) = t.validate() {
            return Err(format!("tube {k} invalid: {v:?}"));
        }
        if t.segment.frame_count() < u64::from(params.min_tube_length) {
            return Err(format!("tube {k} is shorter than min_tube_length"));
        }
        for pair in lt.detections.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.frame <= a.frame {
                return Err(format!("tube {k}: detections out of order"));
            }
            if b.frame - a.frame - 1 > params.max_gap_frames {
                return Err(format!("tube {k}: gap {}..{} too long", a.frame, b.frame));
            }
            if oracle_box_iou(&a.bbox, &b.bbox) < params.iou_continuity_threshold {
                return Err(format!("tube {k}: continuity broken at frame {}", b.frame));
            }
        }
        for d in &lt.detections {
            if t.boxes.get(&d.frame) != Some(&d.bbox) {
                return Err(format!(
                    "tube {k}: box on frame {} is not the linked detection",
                    d.frame
                ));
            }
            let left = uses.get_mut(&key(d)).ok_or(format!("tube {k}: unknown detection"))?;
            if *left == 0 {
                return Err(format!("tube {k}: detection on frame {} used twice", d.frame));
            }
            *left -= 1;
        }
        let mean = lt.detections.iter().map(|d| d.score).sum::<f64>() / lt.detections.len() as f64;
        if (mean - lt.mean_score).abs() > 1e-12 {
            return Err(format!("tube {k}: mean score {} != {}", lt.mean_score, mean));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiou_enumeration() {
        let s = |a, b| Segment::new(a, b).unwrap();
        assert_eq!(oracle_tiou(&s(15, 25), &s(10, 20)), 0.375);
        assert_eq!(oracle_tiou(&s(0, 4), &s(10, 14)), 0.0);
    }

    #[test]
    fn box_iou_reference() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        let b = BBox::new(1.0, 1.0, 3.0, 3.0);
        assert!((oracle_box_iou(&a, &b) - 1.0 / 7.0).abs() < 1e-15);
    }
}
