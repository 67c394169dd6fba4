//! Computational core of human-centric spatio-temporal video grounding.
//!
//! * [`geometry`]: box IoU, GIoU and L1.
//! * [`tubes`]: frame segments, tubes and clip partitions.
//! * [`metrics`]: tIoU, vIoU, vIoU@R and dataset reports.
//! * [`fusion`]: temporal extent from one prediction, boxes from another.
//! * [`linking`]: greedy detection-to-tube linking.
//! * [`moments`]: moment-map selection and start/end decoding.
//! * [`losses`]: the training objectives as plain functions.
//! * [`harness`]: record files, manifests, synthetic data and oracles.

pub mod fusion;
pub mod geometry;
pub mod harness;
pub mod linking;
pub mod losses;
pub mod metrics;
pub mod moments;
pub mod tubes;

pub use fusion::{fuse, fuse_reverse, GapPolicy};
pub use geometry::BBox;
pub use metrics::{evaluate_dataset, tiou, viou, MetricReport};
pub use tubes::{Segment, Tube};
