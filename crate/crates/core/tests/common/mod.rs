#![allow(dead_code)]

use proptest::prelude::*;
use stvg_core::geometry::BBox;
use stvg_core::tubes::{Segment, Tube};

pub fn bbox() -> impl Strategy<Value = BBox> {
    (-50.0..50.0f64, -50.0..50.0f64, 0.1..40.0f64, 0.1..40.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
}

pub fn segment(max_start: u32, max_len: u32) -> impl Strategy<Value = Segment> {
    (0..=max_start, 1..=max_len).prop_map(|(s, l)| Segment::new(s, s + l - 1).unwrap())
}

/// A fully covered tube whose boxes stay close to a drifting base box, so
/// that two such tubes overlap a fair amount.
pub fn tube(video_id: &'static str) -> impl Strategy<Value = Tube> {
    (segment(40, 30), bbox()).prop_flat_map(move |(seg, base)| {
        let n = seg.frame_count() as usize;
        proptest::collection::vec((-3.0..3.0f64, -3.0..3.0f64), n).prop_map(move |offsets| {
            let boxes = offsets.into_iter().map(|(dx, dy)| base.translate(dx, dy));
            Tube::from_boxes(video_id, seg.start(), boxes).unwrap()
        })
    })
}
