//! Combining the temporal extent of one prediction with the boxes of another.
//!
//! The fused tube always takes its segment from the temporal source. Boxes
//! come from the spatial source on every frame it covers. Frames of the fused
//! segment that the spatial source does not cover are filled according to a
//! [`GapPolicy`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::tubes::{Coverage, Frame, FusionMeta, Tube};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FusionError {
    #[error("video id mismatch: temporal source {temporal} vs spatial source {spatial}")]
    VideoMismatch { temporal: String, spatial: String },
    #[error("spatial source has no box for frame {frame} of video {video_id}")]
    Gap { video_id: String, frame: Frame },
    #[error("spatial source for video {0} has no boxes to extend")]
    EmptySpatialSource(String),
    #[error("unknown gap policy {0:?} (expected nearest, interpolate, drop or fail)")]
    UnknownPolicy(String),
}

/// How to fill fused frames the spatial source does not cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    /// Copy the box of the closest covered frame (earlier frame on ties).
    #[default]
    Nearest,
    /// Linear interpolation between the covered frames on either side;
    /// nearest outside the covered range.
    Interpolate,
    /// Leave the frame without a box. It stays in the temporal union and
    /// scores zero.
    Drop,
    /// Refuse to fuse.
    Fail,
}

impl GapPolicy {
    pub const ALL: [GapPolicy; 4] = [
        GapPolicy::Nearest,
        GapPolicy::Interpolate,
        GapPolicy::Drop,
        GapPolicy::Fail,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            GapPolicy::Nearest => "nearest",
            GapPolicy::Interpolate => "interpolate",
            GapPolicy::Drop => "drop",
            GapPolicy::Fail => "fail",
        }
    }
}

impl fmt::Display for GapPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GapPolicy {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GapPolicy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| FusionError::UnknownPolicy(s.to_string()))
    }
}

/// Keeps `temporal_src`'s segment and replaces its boxes with `spatial_src`'s.
pub fn fuse(temporal_src: &Tube, spatial_src: &Tube, policy: GapPolicy) -> Result<Tube, FusionError> {
    if temporal_src.video_id != spatial_src.video_id {
        return Err(FusionError::VideoMismatch {
            temporal: temporal_src.video_id.clone(),
            spatial: spatial_src.video_id.clone(),
        });
    }
    let covered = &spatial_src.boxes;
    let fills_gaps = matches!(policy, GapPolicy::Nearest | GapPolicy::Interpolate);
    if fills_gaps && covered.is_empty() {
        return Err(FusionError::EmptySpatialSource(spatial_src.video_id.clone()));
    }

    let mut boxes = std::collections::BTreeMap::new();
    for frame in temporal_src.segment.frames() {
        if let Some(b) = covered.get(&frame) {
            boxes.insert(frame, *b);
            continue;
        }
        let before = covered.range(..frame).next_back();
        let after = covered.range(frame..).next();
        let filled = match policy {
            GapPolicy::Fail => {
                return Err(FusionError::Gap {
                    video_id: temporal_src.video_id.clone(),
                    frame,
                })
            }
            GapPolicy::Drop => None,
            GapPolicy::Nearest => nearest(frame, before, after),
            GapPolicy::Interpolate => match (before, after) {
                (Some((&f0, b0)), Some((&f1, b1))) => {
                    let t = f64::from(frame - f0) / f64::from(f1 - f0);
                    Some(b0.lerp(b1, t))
                }
                _ => nearest(frame, before, after),
            },
        };
        if let Some(b) = filled {
            boxes.insert(frame, b);
        }
    }

    let coverage = if boxes.is_empty() {
        Coverage::Degenerate
    } else if boxes.len() as u64 == temporal_src.segment.frame_count() {
        Coverage::Full
    } else {
        Coverage::Partial
    };
    let source = match (&temporal_src.source, &spatial_src.source) {
        (Some(t), Some(s)) => Some(format!("{t}+{s}")),
        _ => None,
    };
    Ok(Tube {
        video_id: temporal_src.video_id.clone(),
        query: temporal_src.query.clone().or_else(|| spatial_src.query.clone()),
        source,
        segment: temporal_src.segment,
        boxes,
        coverage,
        fusion: Some(FusionMeta {
            temporal_source: temporal_src.source.clone(),
            spatial_source: spatial_src.source.clone(),
            policy,
        }),
    })
}

/// The same contract as [`fuse`], named for the ablation where the roles of
/// the two models are swapped relative to the usual combination.
pub fn fuse_reverse(temporal_src: &Tube, spatial_src: &Tube, policy: GapPolicy) -> Result<Tube, FusionError> {
    fuse(temporal_src, spatial_src, policy)
}

fn nearest(
    frame: Frame,
    before: Option<(&Frame, &crate::geometry::BBox)>,
    after: Option<(&Frame, &crate::geometry::BBox)>,
) -> Option<BBox> {
    match (before, after) {
        (Some((&f0, b0)), Some((&f1, b1))) => {
            if frame - f0 <= f1 - frame {
                Some(*b0)
            } else {
                Some(*b1)
            }
        }
        (Some((_, b)), None) | (None, Some((_, b))) => Some(*b),
        (None, None) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{tiou, viou};
    use crate::tubes::{validate_tube, Segment};

    fn seg(a: u32, b: u32) -> Segment {
        Segment::new(a, b).unwrap()
    }

    fn moving(video: &str, s: Segment) -> Tube {
        let mut t = Tube::constant(video, s, BBox::new(0.0, 0.0, 1.0, 1.0));
        for (f, b) in t.boxes.iter_mut() {
            let x = f64::from(*f);
            *b = BBox::new(x, 0.0, x + 10.0, 10.0);
        }
        t
    }

    #[test]
    fn full_coverage_copies_spatial_boxes() {
        let temporal = Tube::constant("v", seg(5, 9), BBox::new(50.0, 50.0, 60.0, 60.0));
        let spatial = moving("v", seg(5, 9));
        for policy in GapPolicy::ALL {
            let fused = fuse(&temporal, &spatial, policy).unwrap();
            assert_eq!(fused.boxes, spatial.boxes);
            assert_eq!(fused.coverage, Coverage::Full);
            let gt = seg(3, 7);
            assert_eq!(tiou(&fused.segment, &gt), tiou(&temporal.segment, &gt));
        }
    }

    #[test]
    fn nearest_extends_edge_boxes() {
        let b = BBox::new(1.0, 2.0, 3.0, 4.0);
        let temporal = Tube::constant("v", seg(0, 5), BBox::new(0.0, 0.0, 9.0, 9.0));
        let spatial = Tube::constant("v", seg(3, 8), b);
        let fused = fuse(&temporal, &spatial, GapPolicy::Nearest).unwrap();
        assert_eq!(fused.segment, seg(0, 5));
        assert!(fused.boxes.values().all(|x| *x == b));
        assert_eq!(fused.boxes.len(), 6);
        assert_eq!(validate_tube(&fused), Ok(()));
    }

    #[test]
    fn nearest_prefers_earlier_frame_on_ties() {
        let mut spatial = moving("v", seg(0, 4));
        spatial.boxes.remove(&2);
        spatial.coverage = Coverage::Partial;
        let temporal = Tube::constant("v", seg(0, 4), BBox::new(0.0, 0.0, 1.0, 1.0));
        let fused = fuse(&temporal, &spatial, GapPolicy::Nearest).unwrap();
        assert_eq!(fused.boxes[&2], spatial.boxes[&1]);
    }

    #[test]
    fn interpolate_between_covered_frames() {
        let mut spatial = moving("v", seg(0, 4));
        spatial.boxes.remove(&1);
        spatial.boxes.remove(&2);
        spatial.coverage = Coverage::Partial;
        let temporal = Tube::constant("v", seg(0, 6), BBox::new(0.0, 0.0, 1.0, 1.0));
        let fused = fuse(&temporal, &spatial, GapPolicy::Interpolate).unwrap();
        // frames 0 and 3 bracket the gap
        assert_eq!(fused.boxes[&1], BBox::new(1.0, 0.0, 11.0, 10.0));
        assert_eq!(fused.boxes[&2], BBox::new(2.0, 0.0, 12.0, 10.0));
        // past the end falls back to nearest
        assert_eq!(fused.boxes[&6], spatial.boxes[&4]);
        assert_eq!(validate_tube(&fused), Ok(()));
    }

    #[test]
    fn drop_leaves_partial_tube() {
        let temporal = Tube::constant("v", seg(0, 5), BBox::new(0.0, 0.0, 9.0, 9.0));
        let spatial = moving("v", seg(3, 8));
        let fused = fuse(&temporal, &spatial, GapPolicy::Drop).unwrap();
        assert_eq!(fused.coverage, Coverage::Partial);
        assert_eq!(fused.boxes.keys().copied().collect::<Vec<_>>(), vec![3, 4, 5]);
        for (f, b) in &fused.boxes {
            assert_eq!(spatial.boxes[f], *b);
        }
        assert_eq!(validate_tube(&fused), Ok(()));
    }

    #[test]
    fn drop_with_disjoint_sources_is_degenerate() {
        let temporal = Tube::constant("v", seg(0, 5), BBox::new(0.0, 0.0, 9.0, 9.0));
        let spatial = moving("v", seg(20, 30));
        let fused = fuse_reverse(&temporal, &spatial, GapPolicy::Drop).unwrap();
        assert_eq!(fused.coverage, Coverage::Degenerate);
        assert!(fused.boxes.is_empty());
        let gt = Tube::constant("v", seg(2, 4), BBox::new(0.0, 0.0, 9.0, 9.0));
        assert_eq!(viou(&fused, &gt).unwrap(), 0.0);
        assert!(tiou(&fused.segment, &gt.segment) > 0.0);
    }

    #[test]
    fn fail_policy_reports_first_gap() {
        let temporal = Tube::constant("v", seg(0, 5), BBox::new(0.0, 0.0, 9.0, 9.0));
        let spatial = moving("v", seg(3, 8));
        assert_eq!(
            fuse(&temporal, &spatial, GapPolicy::Fail),
            Err(FusionError::Gap {
                video_id: "v".into(),
                frame: 0
            })
        );
    }

    #[test]
    fn mismatched_videos_rejected() {
        let a = moving("a", seg(0, 3));
        let b = moving("b", seg(0, 3));
        assert!(matches!(
            fuse(&a, &b, GapPolicy::Nearest),
            Err(FusionError::VideoMismatch { .. })
        ));
    }

    #[test]
    fn filling_from_an_empty_source_is_an_error() {
        let temporal = moving("v", seg(0, 3));
        let spatial = Tube::temporal_only("v", seg(0, 3));
        assert!(matches!(
            fuse(&temporal, &spatial, GapPolicy::Nearest),
            Err(FusionError::EmptySpatialSource(_))
        ));
        let dropped = fuse(&temporal, &spatial, GapPolicy::Drop).unwrap();
        assert_eq!(dropped.coverage, Coverage::Degenerate);
    }

    #[test]
    fn metadata_records_sources_and_policy() {
        let temporal = moving("v", seg(0, 3)).with_source("mmn");
        let spatial = moving("v", seg(0, 3)).with_source("tubedetr");
        let fused = fuse(&temporal, &spatial, GapPolicy::Interpolate).unwrap();
        assert_eq!(fused.source.as_deref(), Some("mmn+tubedetr"));
        let meta = fused.fusion.unwrap();
        assert_eq!(meta.temporal_source.as_deref(), Some("mmn"));
        assert_eq!(meta.spatial_source.as_deref(), Some("tubedetr"));
        assert_eq!(meta.policy, GapPolicy::Interpolate);
    }

    #[test]
    fn half_covered_drop_scores_below_nearest() {
        // spatial source covers only the second half of the fused segment,
        // groundtruth boxes sit right on the spatial boxes
        let gt = Tube::constant("v", seg(0, 19), BBox::new(10.0, 10.0, 50.0, 90.0));
        let temporal = Tube::constant("v", seg(0, 19), BBox::new(200.0, 10.0, 240.0, 90.0));
        let spatial = Tube::constant("v", seg(10, 30), BBox::new(11.0, 10.0, 51.0, 90.0));
        let dropped = fuse(&temporal, &spatial, GapPolicy::Drop).unwrap();
        let nearest = fuse(&temporal, &spatial, GapPolicy::Nearest).unwrap();
        let v_drop = viou(&dropped, &gt).unwrap();
        let v_near = viou(&nearest, &gt).unwrap();
        // oracle: each covered frame has IoU 39*80/(41*80) = 39/41
        let per_frame = 39.0 / 41.0;
        assert!((v_drop - 10.0 * per_frame / 20.0).abs() < 1e-12);
        assert!((v_near - per_frame).abs() < 1e-12);
        assert!(v_drop < v_near);
    }

    #[test]
    fn policy_parses_from_str() {
        for p in GapPolicy::ALL {
            assert_eq!(p.as_str().parse::<GapPolicy>().unwrap(), p);
        }
        assert!("closest".parse::<GapPolicy>().is_err());
    }
}
