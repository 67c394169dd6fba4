//! Training objectives of the two grounding models, as plain numeric
//! functions.
//!
//! Every logarithm is natural and its argument is clamped below at
//! [`LOG_EPS`], so `log(0)` never occurs and exact predictions still give
//! an exact zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{box_l1, enclosing_box, intersection_area, BBox, GeometryError};
use crate::moments::{MomentError, TemporalDistributions};

pub const LOG_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("loss needs at least one element")]
    Empty,
    #[error("similarity matrix is not square: row {row} has {len} entries, expected {n}")]
    NotSquare { row: usize, len: usize, n: usize },
    #[error("{name}: predicted mass {pred} at index {index} where the target is zero")]
    SupportViolation {
        name: &'static str,
        index: usize,
        pred: f64,
    },
    #[error("endpoint {endpoint} is outside {n} clips")]
    EndpointOutOfRange { endpoint: usize, n: usize },
    #[error("smoothing {0} must lie in [0, 1]")]
    BadSmoothing(f64),
    #[error("invalid value {value} for {name}")]
    BadValue { name: &'static str, value: f64 },
    #[error("attention segment [{start}, {end}] is invalid (1-indexed, start <= end)")]
    BadSegment { start: usize, end: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Distribution(#[from] MomentError),
}

fn clamped_ln(x: f64) -> f64 {
    x.max(LOG_EPS).ln()
}

/// Weights of the two total losses. Defaults are neutral choices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_mmn: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub theta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_mmn: 0.1,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            theta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, value) in [
            ("lambda_mmn", self.lambda_mmn),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("theta", self.theta),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(LossError::BadValue { name, value });
            }
        }
        Ok(())
    }
}

/// Binary cross-entropy between predicted and target IoU, averaged over the
/// `C` candidates.
pub fn mmn_iou_loss(p: &[f64], y: &[f64]) -> Result<f64, LossError> {
    if p.len() != y.len() {
        return Err(LossError::LengthMismatch {
            left: p.len(),
            right: y.len(),
        });
    }
    if p.is_empty() {
        return Err(LossError::Empty);
    }
    for &v in p {
        if !(0.0..=1.0).contains(&v) {
            return Err(LossError::BadValue { name: "p", value: v });
        }
    }
    for &v in y {
        if !(0.0..=1.0).contains(&v) {
            return Err(LossError::BadValue { name: "y", value: v });
        }
    }
    let sum: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| y * clamped_ln(p) + (1.0 - y) * clamped_ln(1.0 - p))
        .sum();
    Ok(-sum / p.len() as f64)
}

/// Square similarity matrix between moments (rows) and sentences (columns);
/// entry `(i, i)` is a matched pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SimilarityMatrix {
    rows: Vec<Vec<f64>>,
}

impl TryFrom<Vec<Vec<f64>>> for SimilarityMatrix {
    type Error = LossError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        SimilarityMatrix::new(rows)
    }
}

impl From<SimilarityMatrix> for Vec<Vec<f64>> {
    fn from(m: SimilarityMatrix) -> Self {
        m.rows
    }
}

impl SimilarityMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, LossError> {
        let n = rows.len();
        if n == 0 {
            return Err(LossError::Empty);
        }
        for (row, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(LossError::NotSquare { row, len: r.len(), n });
            }
            if let Some(&value) = r.iter().find(|v| !v.is_finite()) {
                return Err(LossError::BadValue {
                    name: "similarity",
                    value,
                });
            }
        }
        Ok(SimilarityMatrix { rows })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.rows[row][col]
    }
}

fn log_softmax_at(values: impl Iterator<Item = f64> + Clone, target: f64) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + values.map(|v| (v - max).exp()).sum::<f64>().ln();
    target - lse
}

/// `(video_loss, sentence_loss)`.
///
/// The video side normalizes each column (all moments against sentence `i`);
/// the sentence side normalizes each row (all sentences against moment `i`).
pub fn contrastive_losses(s: &SimilarityMatrix) -> (f64, f64) {
    let n = s.n();
    let mut video = 0.0;
    let mut sentence = 0.0;
    for i in 0..n {
        video -= log_softmax_at((0..n).map(|r| s.get(r, i)), s.get(i, i));
        sentence -= log_softmax_at(s.rows[i].iter().copied(), s.get(i, i));
    }
    (video, sentence)
}

pub fn mmn_total(iou_l: f64, vid_l: f64, sen_l: f64, w: &LossWeights) -> f64 {
    iou_l + w.lambda_mmn * (vid_l + sen_l)
}

/// `(l1_loss, giou_loss)` averaged over aligned box pairs.
pub fn box_losses(pred: &[BBox], gt: &[BBox]) -> Result<(f64, f64), LossError> {
    if pred.len() != gt.len() {
        return Err(LossError::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    if pred.is_empty() {
        return Err(LossError::Empty);
    }
    let mut l1 = 0.0;
    let mut giou = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        p.validate()?;
        g.validate()?;
        l1 += box_l1(p, g);
        giou += giou_loss_term(p, g)?;
    }
    let n = pred.len() as f64;
    Ok((l1 / n, giou / n))
}

/// `1 - I/U + (A_c - U)/A_c` for one pair.
pub fn giou_loss_term(pred: &BBox, gt: &BBox) -> Result<f64, LossError> {
    let inter = intersection_area(pred, gt);
    let union = pred.area() + gt.area() - inter;
    if union <= 0.0 {
        return Err(GeometryError::DegenerateGiou.into());
    }
    let enclosing = enclosing_box(pred, gt).area();
    Ok(1.0 - inter / union + (enclosing - union) / enclosing)
}

fn kl_divergence(name: &'static str, pred: &[f64], target: &[f64]) -> Result<f64, LossError> {
    let mut total = 0.0;
    for (index, (&p, &t)) in pred.iter().zip(target).enumerate() {
        if p == 0.0 {
            continue;
        }
        if t <= 0.0 {
            return Err(LossError::SupportViolation { name, index, pred: p });
        }
        total += p * (p / t).ln();
    }
    Ok(total)
}

/// `KL(pred_start || target_start) + KL(pred_end || target_end)`.
pub fn kl_temporal_loss(pred: &TemporalDistributions, target: &TemporalDistributions) -> Result<f64, LossError> {
    if pred.n_clips() != target.n_clips() {
        return Err(LossError::LengthMismatch {
            left: pred.n_clips(),
            right: target.n_clips(),
        });
    }
    Ok(kl_divergence("start", pred.p_start(), target.p_start())? + kl_divergence("end", pred.p_end(), target.p_end())?)
}

/// One-hot target at `endpoint`, with `smoothing` spread evenly over the
/// other clips.
pub fn make_target_distribution(endpoint: usize, n: usize, smoothing: f64) -> Result<Vec<f64>, LossError> {
    if endpoint >= n {
        return Err(LossError::EndpointOutOfRange { endpoint, n });
    }
    if !(0.0..=1.0).contains(&smoothing) {
        return Err(LossError::BadSmoothing(smoothing));
    }
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let rest = smoothing / (n - 1) as f64;
    Ok((0..n)
        .map(|k| if k == endpoint { 1.0 - smoothing } else { rest })
        .collect())
}

/// Attention weights over `n` positions together with the groundtruth
/// segment, in 1-indexed inclusive positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    pub values: Vec<f64>,
    pub start: usize,
    pub end: usize,
}

/// `-sum log(1 - a_i)` over positions outside `[start, end]`.
pub fn guided_attention_loss(row: &AttentionRow) -> Result<f64, LossError> {
    if row.start == 0 || row.start > row.end {
        return Err(LossError::BadSegment {
            start: row.start,
            end: row.end,
        });
    }
    let mut loss = 0.0;
    for (k, &a) in row.values.iter().enumerate() {
        if !(0.0..=1.0).contains(&a) {
            return Err(LossError::BadValue {
                name: "attention",
                value: a,
            });
        }
        let position = k + 1;
        if (row.start..=row.end).contains(&position) {
            continue;
        }
        loss -= clamped_ln(1.0 - a);
    }
    Ok(loss)
}

pub fn tubedetr_total(box_l: f64, giou_l: f64, kl_l: f64, att_l: f64, w: &LossWeights) -> f64 {
    w.alpha * box_l + w.beta * giou_l + w.gamma * kl_l + w.theta * att_l
}
