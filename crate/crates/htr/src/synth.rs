//! Synthetic desk-scale scenarios with a known ground truth.
//!
//! Foreground nodes draw their features around `+s * u` and background nodes
//! around `-s * u` for a random unit direction `u` and separation `s`, with
//! unit Gaussian noise. The foreground region is a rectangle that drifts
//! across frames, and scores decrease with the frame index so selection is
//! deterministic.

use crate::error::Result;
use crate::mask::Mask;
use crate::memory::{FeatureMap, STRIDE};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Deterministic synthetic video: features, masks, and scores.
#[derive(Debug, Clone)]
pub struct SynthScenario {
    /// Per-frame feature grids (`height` x `width` nodes).
    pub features: Vec<FeatureMap>,
    /// Node-level ground-truth masks, one per frame.
    pub node_masks: Vec<Mask>,
    /// Pixel-level ground truth: the node masks upsampled by the stride.
    pub gt_masks: Vec<Mask>,
    /// Per-frame scores, strictly decreasing with the frame index.
    pub scores: Vec<f32>,
}

/// Generates a scenario; identical arguments produce identical outputs.
pub fn synth_scenario(
    seed: u64,
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    separation: f64,
) -> Result<SynthScenario> {
    if frames == 0 || height == 0 || width == 0 || channels == 0 {
        return Err(crate::error::Error::InvalidConfig(
            "frames, height, width, and channels must be >= 1".into(),
        ));
    }
    if separation <= 0.0 || !separation.is_finite() {
        return Err(crate::error::Error::InvalidConfig(format!(
            "separation must be positive, got {separation}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;

    // Random unit direction; separation scales the two cluster centroids.
    let mut direction: Vec<f64> = loop {
        let v: Vec<f64> = (0..channels).map(|_| normal.sample(&mut rng)).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            break v.iter().map(|x| x / norm).collect();
        }
    };
    for d in &mut direction {
        *d *= separation;
    }

    let rect_h = height.div_ceil(2);
    let rect_w = width.div_ceil(2);
    let mut features = Vec::with_capacity(frames);
    let mut node_masks = Vec::with_capacity(frames);
    let mut gt_masks = Vec::with_capacity(frames);
    let mut scores = Vec::with_capacity(frames);

    for t in 0..frames {
        // Rectangle drifts one node per frame, wrapping inside the grid.
        let max_y = height - rect_h + 1;
        let max_x = width - rect_w + 1;
        let top = t % max_y;
        let left = t % max_x;

        let mut labels = vec![0.0f32; height * width];
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                let fg = y >= top && y < top + rect_h && x >= left && x < left + rect_w;
                if fg {
                    labels[y * width + x] = 1.0;
                }
                let sign = if fg { 1.0 } else { -1.0 };
                for &d in &direction {
                    let noise: f64 = normal.sample(&mut rng);
                    data.push((sign * d + noise) as f32);
                }
            }
        }
        let node_mask = Mask::new(height, width, labels)?;
        gt_masks.push(node_mask.upsample(STRIDE)?);
        node_masks.push(node_mask);
        features.push(FeatureMap::new(
            height,
            width,
            Tensor::new(vec![height * width, channels], data)?,
        )?);
        scores.push(1.0 - t as f32 / (frames as f32 + 1.0));
    }

    Ok(SynthScenario {
        features,
        node_masks,
        gt_masks,
        scores,
    })
}
