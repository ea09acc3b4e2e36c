//! Forward-only training objectives and the Hungarian query assignment.
//!
//! Everything here is a pure formula evaluation: there are no gradients.
//! Probabilities are clamped to [1e-7, 1 - 1e-7] before logarithms so
//! saturated predictions keep losses finite.

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::Tensor;

/// Clamp bound applied to probabilities before logarithms.
pub const PROB_EPS: f64 = 1e-7;
/// Default focal-loss parameters.
pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
/// Hard-pixel ratio for bootstrapped cross entropy.
pub const BOOTSTRAP_HARD_RATIO: f64 = 0.15;

/// Loss-term weights; defaults are (dice, L1, focal, GIoU, ce) = (5, 5, 2, 2, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub dice: f64,
    pub l1: f64,
    pub focal: f64,
    pub giou: f64,
    pub ce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            dice: 5.0,
            l1: 5.0,
            focal: 2.0,
            giou: 2.0,
            ce: 1.0,
        }
    }
}

/// Axis-aligned box with x1 <= x2 and y1 <= y2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxXYXY {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoxXYXY {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(Error::NonFinite(0));
        }
        if x1 > x2 || y1 > y2 {
            return Err(Error::Malformed(format!(
                "box corners out of order: ({x1},{y1})-({x2},{y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

fn check_same_shape(pred: &Mask, gt: &Mask) -> Result<()> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} vs {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

/// Dice loss with smoothing 1: `1 - (2 Σ p g + 1) / (Σ p + Σ g + 1)`.
///
/// Zero for an exact binary match, including the both-empty case.
pub fn dice_loss(pred: &Mask, gt: &Mask) -> Result<f64> {
    check_same_shape(pred, gt)?;
    let mut inter = 0.0f64;
    let mut psum = 0.0f64;
    let mut gsum = 0.0f64;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        inter += f64::from(p) * f64::from(g);
        psum += f64::from(p);
        gsum += f64::from(g);
    }
    Ok(1.0 - (2.0 * inter + 1.0) / (psum + gsum + 1.0))
}

/// Focal term for a single probability against a binary target.
///
/// `-alpha_t (1 - p_t)^gamma ln(p_t)` with the alpha weight swapped to
/// `1 - alpha` for negatives.
pub fn focal_term(prob: f64, positive: bool, alpha: f64, gamma: f64) -> f64 {
    let p = prob.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let (pt, at) = if positive {
        (p, alpha)
    } else {
        (1.0 - p, 1.0 - alpha)
    };
    -at * (1.0 - pt).powf(gamma) * pt.ln()
}

/// Mean focal loss over all pixels.
pub fn focal_loss(pred: &Mask, gt: &Mask, alpha: f64, gamma: f64) -> Result<f64> {
    check_same_shape(pred, gt)?;
    let mut acc = 0.0f64;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        acc += focal_term(f64::from(p), g > 0.5, alpha, gamma);
    }
    Ok(acc / pred.data().len() as f64)
}

/// L1 and GIoU losses for a box pair.
///
/// L1 is the mean absolute coordinate difference. The GIoU loss is
/// `1 - (IoU - |C \ (A ∪ B)| / |C|)` with C the tightest enclosing box;
/// zero-area boxes get IoU 0 and a degenerate enclosing box contributes no
/// slack.
pub fn box_losses(pred: &BoxXYXY, gt: &BoxXYXY) -> (f64, f64) {
    let l1 = ((pred.x1 - gt.x1).abs()
        + (pred.y1 - gt.y1).abs()
        + (pred.x2 - gt.x2).abs()
        + (pred.y2 - gt.y2).abs())
        / 4.0;

    let iw = (pred.x2.min(gt.x2) - pred.x1.max(gt.x1)).max(0.0);
    let ih = (pred.y2.min(gt.y2) - pred.y1.max(gt.y1)).max(0.0);
    let inter = iw * ih;
    let union = pred.area() + gt.area() - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };

    let cw = pred.x2.max(gt.x2) - pred.x1.min(gt.x1);
    let ch = pred.y2.max(gt.y2) - pred.y1.min(gt.y1);
    let c_area = cw * ch;
    let slack = if c_area > 0.0 {
        (c_area - union) / c_area
    } else {
        0.0
    };
    (l1, 1.0 - (iou - slack))
}

/// Mean of the top `ceil(hard_ratio * n)` per-pixel cross-entropy values.
pub fn bootstrapped_ce(pred: &Mask, gt: &Mask, hard_ratio: f64) -> Result<f64> {
    check_same_shape(pred, gt)?;
    if !(hard_ratio > 0.0 && hard_ratio <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "hard ratio must be in (0, 1], got {hard_ratio}"
        )));
    }
    let mut ce: Vec<f64> = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| {
            let p = f64::from(p).clamp(PROB_EPS, 1.0 - PROB_EPS);
            if g > 0.5 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .collect();
    let n = ce.len();
    let keep = ((hard_ratio * n as f64).ceil() as usize).clamp(1, n);
    ce.sort_by(|a, b| b.partial_cmp(a).expect("finite CE values"));
    Ok(ce[..keep].iter().sum::<f64>() / keep as f64)
}

/// Minimum-cost assignment of a square cost matrix.
///
/// Returns `perm` with `perm[i]` the column assigned to row `i`; the total
/// cost is optimal. O(N^3) augmenting-path method with row/column
/// potentials.
pub fn hungarian_match(cost: &Tensor) -> Result<Vec<usize>> {
    if cost.rank() != 2 || cost.rows() != cost.cols() {
        return Err(Error::ShapeMismatch(format!(
            "cost matrix must be square, got {:?}",
            cost.dims()
        )));
    }
    let n = cost.rows();
    let at = |i: usize, j: usize| f64::from(cost.get2(i, j));

    // 1-based potentials; column 0 is the virtual unmatched column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[matched[j] - 1] = j - 1;
    }
    Ok(perm)
}

/// Per-frame predictions of one object query.
#[derive(Debug, Clone)]
pub struct QueryPrediction {
    pub masks: Vec<Mask>,
    pub boxes: Vec<BoxXYXY>,
    pub scores: Vec<f64>,
}

/// Ground truth for one video.
#[derive(Debug, Clone)]
pub struct VideoGroundTruth {
    pub masks: Vec<Mask>,
    pub boxes: Vec<BoxXYXY>,
}

fn check_prediction(pred: &QueryPrediction, gt: &VideoGroundTruth) -> Result<usize> {
    let t = gt.masks.len();
    if t == 0 {
        return Err(Error::EmptyInput("ground truth has no frames"));
    }
    if gt.boxes.len() != t
        || pred.masks.len() != t
        || pred.boxes.len() != t
        || pred.scores.len() != t
    {
        return Err(Error::ShapeMismatch(format!(
            "query prediction frame counts {}/{}/{} vs ground truth {}",
            pred.masks.len(),
            pred.boxes.len(),
            pred.scores.len(),
            t
        )));
    }
    Ok(t)
}

/// The weighted mask-and-box cost of one query, averaged over frames:
/// `mean_j(dice_w * dice + focal_w * focal + giou_w * giou + l1_w * l1)`.
///
/// This same quantity both ranks queries for the optimal assignment and is
/// the matched query's contribution to [`refer_loss`].
pub fn matched_cost(
    pred: &QueryPrediction,
    gt: &VideoGroundTruth,
    weights: &LossWeights,
) -> Result<f64> {
    let t = check_prediction(pred, gt)?;
    let mut acc = 0.0f64;
    for j in 0..t {
        let dice = dice_loss(&pred.masks[j], &gt.masks[j])?;
        let focal = focal_loss(&pred.masks[j], &gt.masks[j], FOCAL_ALPHA, FOCAL_GAMMA)?;
        let (l1, giou) = box_losses(&pred.boxes[j], &gt.boxes[j]);
        acc += weights.dice * dice + weights.focal * focal + weights.giou * giou + weights.l1 * l1;
    }
    Ok(acc / t as f64)
}

/// Matched costs for every query, in query order.
pub fn matched_costs(
    preds: &[QueryPrediction],
    gt: &VideoGroundTruth,
    weights: &LossWeights,
) -> Result<Vec<f64>> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("no query predictions"));
    }
    preds.iter().map(|p| matched_cost(p, gt, weights)).collect()
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Score loss of one query: mean focal term of its per-frame scores against
/// the binary optimal-query indicator.
pub fn score_loss(pred: &QueryPrediction, positive: bool) -> f64 {
    let acc: f64 = pred
        .scores
        .iter()
        .map(|&s| focal_term(s, positive, FOCAL_ALPHA, FOCAL_GAMMA))
        .sum();
    acc / pred.scores.len() as f64
}

/// Selective-segmentation loss over all queries.
///
/// Every query contributes `ce_w * score_loss`; only the optimal query (the
/// one with the minimal matched cost, ties to the lowest index) additionally
/// contributes its mask-and-box cost.
pub fn refer_loss(
    preds: &[QueryPrediction],
    gt: &VideoGroundTruth,
    weights: &LossWeights,
) -> Result<f64> {
    let costs = matched_costs(preds, gt, weights)?;
    let optimal = argmin(&costs);
    let mut total = costs[optimal];
    for (i, pred) in preds.iter().enumerate() {
        total += weights.ce * score_loss(pred, i == optimal);
    }
    Ok(total)
}

/// Propagation supervision: bootstrapped cross entropy plus dice, equally
/// weighted, averaged over frames.
pub fn propagation_loss(preds: &[Mask], gts: &[Mask], hard_ratio: f64) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("no propagated masks"));
    }
    if preds.len() != gts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} ground-truth masks",
            preds.len(),
            gts.len()
        )));
    }
    let mut acc = 0.0f64;
    for (p, g) in preds.iter().zip(gts) {
        acc += bootstrapped_ce(p, g, hard_ratio)? + dice_loss(p, g)?;
    }
    Ok(acc / preds.len() as f64)
}

/// Total objective: selective-segmentation loss plus propagation loss.
pub fn training_loss(refer: f64, propagation: f64) -> f64 {
    refer + propagation
}
