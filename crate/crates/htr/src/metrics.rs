//! Evaluation metrics: region overlap J, boundary accuracy F, their average
//! J&F, the mask consistency score MCS, and the sample-IoU precision suite.
//!
//! MCS counts a video as consistent only when the overlap of *every* frame
//! strictly exceeds the threshold, using the same strict step function as
//! the memory aggregation. Evaluation toolkits commonly use >=; this one is
//! deliberately strict.

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::memory::heaviside;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Per-video ordered masks with their frame indices.
#[derive(Debug, Clone)]
pub struct MaskSequence {
    pub video_id: String,
    pub frame_indices: Vec<usize>,
    pub masks: Vec<Mask>,
}

impl MaskSequence {
    pub fn new(video_id: String, frame_indices: Vec<usize>, masks: Vec<Mask>) -> Result<Self> {
        if masks.is_empty() {
            return Err(Error::EmptyInput("mask sequence has no frames"));
        }
        if frame_indices.len() != masks.len() {
            return Err(Error::FrameMismatch(format!(
                "{} indices vs {} masks",
                frame_indices.len(),
                masks.len()
            )));
        }
        if frame_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::FrameMismatch(
                "frame indices must be strictly increasing".into(),
            ));
        }
        let (h, w) = (masks[0].height(), masks[0].width());
        if masks.iter().any(|m| m.height() != h || m.width() != w) {
            return Err(Error::ShapeMismatch(
                "all masks in a video must share one resolution".into(),
            ));
        }
        Ok(Self {
            video_id,
            frame_indices,
            masks,
        })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Per-video rows of per-frame Jaccard values, all in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct JTable {
    rows: Vec<Vec<f64>>,
}

impl JTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for row in &rows {
            if row.is_empty() {
                return Err(Error::EmptyInput("video with no frames in JTable"));
            }
            if row
                .iter()
                .any(|v| !v.is_finite() || !(0.0..=1.0).contains(v))
            {
                return Err(Error::Malformed("JTable values must lie in [0, 1]".into()));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn videos(&self) -> usize {
        self.rows.len()
    }
}

fn binarized(mask: &Mask) -> impl Iterator<Item = bool> + '_ {
    mask.data().iter().map(|&v| v > 0.5)
}

fn check_shapes(pred: &Mask, gt: &Mask) -> Result<()> {
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

/// Pixel counts of the intersection and union of two binary masks.
pub fn intersection_union(pred: &Mask, gt: &Mask) -> Result<(u64, u64)> {
    check_shapes(pred, gt)?;
    let mut inter = 0u64;
    let mut union = 0u64;
    for (p, g) in binarized(pred).zip(binarized(gt)) {
        if p && g {
            inter += 1;
        }
        if p || g {
            union += 1;
        }
    }
    Ok((inter, union))
}

/// Intersection over union of two binary masks; 1 when both are empty.
pub fn jaccard(pred: &Mask, gt: &Mask) -> Result<f64> {
    let (inter, union) = intersection_union(pred, gt)?;
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Boundary pixels: any in-bounds 4-neighbor with a different binary value.
fn boundary(mask: &Mask) -> Vec<(usize, usize)> {
    let (h, w) = (mask.height(), mask.width());
    let bin: Vec<bool> = binarized(mask).collect();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = bin[y * w + x];
            let differs = (y > 0 && bin[(y - 1) * w + x] != v)
                || (y + 1 < h && bin[(y + 1) * w + x] != v)
                || (x > 0 && bin[y * w + x - 1] != v)
                || (x + 1 < w && bin[y * w + x + 1] != v);
            if differs {
                out.push((y, x));
            }
        }
    }
    out
}

/// Default boundary tolerance: ceil(0.008 * image diagonal).
pub fn default_boundary_tolerance(height: usize, width: usize) -> f64 {
    let diag = ((height * height + width * width) as f64).sqrt();
    (0.008 * diag).ceil()
}

/// Fraction of `from` pixels within Euclidean distance `tol` of some `to`
/// pixel, computed by dilating `to` with a disk of radius `tol`.
fn matched_fraction(
    from: &[(usize, usize)],
    to: &[(usize, usize)],
    h: usize,
    w: usize,
    tol: f64,
) -> f64 {
    if from.is_empty() {
        return 0.0;
    }
    let r = tol.floor() as i64;
    let tol2 = tol * tol;
    let mut dilated = vec![false; h * w];
    for &(y, x) in to {
        for dy in -r..=r {
            for dx in -r..=r {
                if (dy * dy + dx * dx) as f64 > tol2 {
                    continue;
                }
                let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                    dilated[ny as usize * w + nx as usize] = true;
                }
            }
        }
    }
    let hits = from.iter().filter(|&&(y, x)| dilated[y * w + x]).count();
    hits as f64 / from.len() as f64
}

/// Boundary F-measure: harmonic mean of boundary precision and recall with
/// matching within a spatial tolerance.
///
/// `tolerance` of `None` uses [`default_boundary_tolerance`]. Returns 1 when
/// both boundaries are empty and 0 when precision and recall are both 0.
pub fn boundary_f(pred: &Mask, gt: &Mask, tolerance: Option<f64>) -> Result<f64> {
    check_shapes(pred, gt)?;
    let (h, w) = (pred.height(), pred.width());
    let tol = tolerance.unwrap_or_else(|| default_boundary_tolerance(h, w));
    if tol < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "boundary tolerance must be nonnegative, got {tol}"
        )));
    }
    let pb = boundary(pred);
    let gb = boundary(gt);
    if pb.is_empty() && gb.is_empty() {
        return Ok(1.0);
    }
    let precision = matched_fraction(&pb, &gb, h, w, tol);
    let recall = matched_fraction(&gb, &pb, h, w, tol);
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

/// Per-frame J and F averaged over a video, plus their mean J&F.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VideoMetrics {
    pub j: f64,
    pub f: f64,
    pub jf: f64,
}

/// Frame-aligned J/F means for one video.
///
/// Also returns the per-frame Jaccard values so callers can assemble a
/// [`JTable`] for MCS.
pub fn video_metrics(
    pred: &MaskSequence,
    gt: &MaskSequence,
    tolerance: Option<f64>,
) -> Result<(VideoMetrics, Vec<f64>)> {
    if pred.len() != gt.len() {
        return Err(Error::FrameMismatch(format!(
            "video {}: {} predicted frames vs {} ground-truth frames",
            pred.video_id,
            pred.len(),
            gt.len()
        )));
    }
    if pred.frame_indices != gt.frame_indices {
        return Err(Error::FrameMismatch(format!(
            "video {}: frame indices differ",
            pred.video_id
        )));
    }
    let mut js = Vec::with_capacity(pred.len());
    let mut fsum = 0.0f64;
    for (p, g) in pred.masks.iter().zip(&gt.masks) {
        js.push(jaccard(p, g)?);
        fsum += boundary_f(p, g, tolerance)?;
    }
    let j = js.iter().sum::<f64>() / js.len() as f64;
    let f = fsum / pred.len() as f64;
    Ok((
        VideoMetrics {
            j,
            f,
            jf: (j + f) / 2.0,
        },
        js,
    ))
}

/// Mask consistency score at threshold `tau`: the fraction of videos whose
/// every per-frame Jaccard value strictly exceeds `tau`.
pub fn mcs(table: &JTable, tau: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidConfig(format!(
            "MCS threshold must be in [0, 1], got {tau}"
        )));
    }
    if table.videos() == 0 {
        return Err(Error::EmptyInput("JTable has no videos"));
    }
    let consistent: f64 = table
        .rows()
        .iter()
        .map(|row| row.iter().map(|&j| heaviside(j - tau)).product::<f64>())
        .sum();
    Ok(consistent / table.videos() as f64)
}

/// Precision/IoU metrics over per-sample IoU values.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct A2dMetrics {
    /// P@K for K in {0.5, 0.6, 0.7, 0.8, 0.9}: fraction of samples with
    /// IoU strictly above K.
    pub precision_at: BTreeMap<String, f64>,
    /// Sum of intersections over sum of unions.
    pub overall_iou: f64,
    /// Mean of per-sample IoU values.
    pub mean_iou: f64,
    /// Mean of the threshold precisions over 0.50:0.05:0.95.
    pub map: f64,
}

/// Computes the precision suite from aligned per-sample IoUs,
/// intersections, and unions.
pub fn a2d_metrics(ious: &[f64], intersections: &[f64], unions: &[f64]) -> Result<A2dMetrics> {
    if ious.is_empty() {
        return Err(Error::EmptyInput("no IoU samples"));
    }
    if ious.len() != intersections.len() || ious.len() != unions.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} IoUs vs {} intersections vs {} unions",
            ious.len(),
            intersections.len(),
            unions.len()
        )));
    }
    let n = ious.len() as f64;
    let precision_above = |k: f64| ious.iter().filter(|&&v| v > k).count() as f64 / n;

    let mut precision_at = BTreeMap::new();
    for k in [0.5, 0.6, 0.7, 0.8, 0.9] {
        precision_at.insert(format!("{k}"), precision_above(k));
    }
    let map = (0..10)
        .map(|i| precision_above((50 + 5 * i) as f64 / 100.0))
        .sum::<f64>()
        / 10.0;
    let isum: f64 = intersections.iter().sum();
    let usum: f64 = unions.iter().sum();
    Ok(A2dMetrics {
        precision_at,
        overall_iou: if usum > 0.0 { isum / usum } else { 1.0 },
        mean_iou: ious.iter().sum::<f64>() / n,
        map,
    })
}

/// One JSON line per evaluated video.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video: String,
    pub frames: usize,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
}

/// Final JSON line aggregating all videos.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub aggregate: bool,
    pub videos: usize,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    /// MCS keyed by threshold, e.g. "0.5".
    pub mcs: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a2d: Option<A2dMetrics>,
}
