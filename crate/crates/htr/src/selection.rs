//! Score supervision targets, score-ranked reference-frame selection, and
//! the inter-frame collaboration pipeline.
//!
//! Collaboration segments the top-scored frames with their conditional
//! kernels (or accepts externally supplied masks), memorizes them, and
//! propagates the memory onto every remaining frame. Ties are always broken
//! toward the lower index so runs are deterministic across platforms.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fusion::{apply_conditional_kernel, ConditionalKernel};
use crate::mask::Mask;
use crate::memory::{build_memory, hybrid_propagate, FeatureMap, MemoryWeights, STRIDE};
use crate::metrics::MaskSequence;
use rayon::prelude::*;

/// One frame's score, with the optional segmentation inputs collaboration
/// may use when the frame is selected as a reference.
#[derive(Debug, Clone)]
pub struct ScoredFrame {
    pub index: usize,
    pub score: f32,
    pub kernel: Option<ConditionalKernel>,
    pub mask: Option<Mask>,
}

/// A full video: per-frame features and scored frames, index-aligned.
#[derive(Debug, Clone)]
pub struct VideoBundle {
    pub id: String,
    pub frames: Vec<FeatureMap>,
    pub scored: Vec<ScoredFrame>,
}

impl VideoBundle {
    fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::EmptyInput("video has no frames"));
        }
        if self.frames.len() != self.scored.len() {
            return Err(Error::FrameMismatch(format!(
                "{} feature maps vs {} scored frames",
                self.frames.len(),
                self.scored.len()
            )));
        }
        if self.scored.windows(2).any(|w| w[0].index >= w[1].index) {
            return Err(Error::FrameMismatch(
                "frame indices must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Output of [`collaborate`]: binary masks for metric evaluation plus the
/// soft masks they were thresholded from.
#[derive(Debug, Clone)]
pub struct Collaboration {
    pub sequence: MaskSequence,
    pub soft_masks: Vec<Mask>,
    /// Positions (into the bundle) of the frames kept as references.
    pub reference_indices: Vec<usize>,
}

/// Binary supervision targets from per-query losses: exactly one 1 at the
/// minimal loss, ties to the lowest index.
pub fn assign_gt_scores(losses: &[f64]) -> Result<Vec<u8>> {
    if losses.is_empty() {
        return Err(Error::EmptyInput("no per-query losses"));
    }
    if let Some(bad) = losses.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(bad));
    }
    let mut best = 0;
    for (i, &v) in losses.iter().enumerate().skip(1) {
        if v < losses[best] {
            best = i;
        }
    }
    Ok((0..losses.len()).map(|i| u8::from(i == best)).collect())
}

/// Rounded-up selection count for `frames` frames at ratio `k`.
///
/// A tiny epsilon absorbs float slop so `ceil` matches exact rational
/// arithmetic (e.g. 0.1 * 10 stays 1, 0.25 * 5 stays 2).
fn selection_count(frames: usize, ratio: f64) -> usize {
    ((ratio * frames as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Indices of the `ceil(k * T)` highest-scoring frames, returned sorted
/// ascending. Score ties pick the lower frame index.
pub fn select_reference_frames(scores: &[f32], ratio: f64) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("no frame scores"));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "selection ratio must be in (0, 1], got {ratio}"
        )));
    }
    if let Some(bad) = scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(bad));
    }
    let count = selection_count(scores.len(), ratio).min(scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Descending by score, ascending by index on ties.
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    let mut selected: Vec<usize> = order[..count].to_vec();
    selected.sort_unstable();
    Ok(selected)
}

/// Reference mask for one selected frame: the provided mask when present,
/// otherwise the kernel's logits squashed through the logistic and
/// upsampled to pixel resolution.
fn reference_mask(
    frame: &ScoredFrame,
    features: &FeatureMap,
    resolution: Option<(usize, usize)>,
) -> Result<Mask> {
    if let Some(mask) = &frame.mask {
        return Ok(mask.clone());
    }
    let kernel = frame
        .kernel
        .as_ref()
        .ok_or(Error::MissingReferenceMask(frame.index))?;
    let logits = apply_conditional_kernel(kernel, features)?;
    let probs: Vec<f32> = logits
        .iter()
        .map(|&x| (1.0 / (1.0 + (-f64::from(x)).exp())) as f32)
        .collect();
    let node_mask = Mask::new(features.height(), features.width(), probs)?;
    let full = node_mask.upsample(STRIDE)?;
    match resolution {
        Some((h, w)) => full.crop(h, w),
        None => Ok(full),
    }
}

fn collaborate_clip(
    video: &VideoBundle,
    range: std::ops::Range<usize>,
    weights: &MemoryWeights,
    ratio: f64,
) -> Result<Vec<(usize, Mask, Mask, bool)>> {
    let scores: Vec<f32> = video.scored[range.clone()]
        .iter()
        .map(|s| s.score)
        .collect();
    let selected_local = select_reference_frames(&scores, ratio)?;
    let selected: Vec<usize> = selected_local.iter().map(|&i| range.start + i).collect();

    // Output resolution comes from the provided reference masks; kernels
    // alone imply the full upsampled grid.
    let resolution = selected
        .iter()
        .find_map(|&i| video.scored[i].mask.as_ref())
        .map(|m| (m.height(), m.width()));

    let mut ref_features = Vec::with_capacity(selected.len());
    let mut ref_masks = Vec::with_capacity(selected.len());
    for &i in &selected {
        let mask = reference_mask(&video.scored[i], &video.frames[i], resolution)?;
        if let Some((h, w)) = resolution {
            if mask.height() != h || mask.width() != w {
                return Err(Error::ShapeMismatch(format!(
                    "reference mask for frame {} is {}x{}, expected {}x{}",
                    video.scored[i].index,
                    mask.height(),
                    mask.width(),
                    h,
                    w
                )));
            }
        }
        ref_features.push(video.frames[i].clone());
        ref_masks.push(mask);
    }
    let (out_h, out_w) = resolution.unwrap_or((
        video.frames[range.start].height() * STRIDE,
        video.frames[range.start].width() * STRIDE,
    ));

    // References keep their masks untouched; the rest are propagated
    // in parallel from the immutable memory.
    let memory = build_memory(&ref_features, &ref_masks, weights)?;
    let results: Vec<(usize, Mask, Mask, bool)> = range
        .clone()
        .into_par_iter()
        .map(|i| -> Result<(usize, Mask, Mask, bool)> {
            if let Some(pos) = selected.iter().position(|&s| s == i) {
                let soft = ref_masks[pos].clone();
                let binary = soft.binarize(0.5);
                Ok((i, soft, binary, true))
            } else {
                let prop = hybrid_propagate(&video.frames[i], &memory, weights)?;
                let soft = prop.soft_mask.upsample(STRIDE)?.crop(out_h, out_w)?;
                let binary = soft.binarize(0.5);
                Ok((i, soft, binary, false))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(results)
}

/// Runs selective segmentation plus propagation over a whole video.
///
/// Selected frames keep their selective-segmentation masks bit-identically;
/// every other frame receives the propagated soft mask thresholded at 0.5.
/// Selection is a single pass: propagated frames are never inserted back
/// into memory. With a clip length configured, clips are processed
/// independently.
pub fn collaborate(
    video: &VideoBundle,
    weights: &MemoryWeights,
    config: &RunConfig,
) -> Result<Collaboration> {
    video.validate()?;
    config.validate()?;
    let total = video.frames.len();
    let clip = config.clip_len.unwrap_or(total).min(total);

    let mut soft_masks = Vec::with_capacity(total);
    let mut binary_masks = Vec::with_capacity(total);
    let mut reference_indices = Vec::new();
    let mut start = 0;
    while start < total {
        let end = (start + clip).min(total);
        let results = collaborate_clip(video, start..end, weights, config.memorized_ratio)?;
        for (i, soft, binary, is_ref) in results {
            debug_assert_eq!(i, soft_masks.len());
            if is_ref {
                reference_indices.push(i);
            }
            soft_masks.push(soft);
            binary_masks.push(binary);
        }
        start = end;
    }

    let sequence = MaskSequence::new(
        video.id.clone(),
        video.scored.iter().map(|s| s.index).collect(),
        binary_masks,
    )?;
    Ok(Collaboration {
        sequence,
        soft_masks,
        reference_indices,
    })
}
