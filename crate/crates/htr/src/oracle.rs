//! Brute-force reference implementations for cross-checking the fast paths.
//!
//! Everything here favors clarity over speed: explicit nested loops, f64
//! arithmetic, no shared code with the implementations under test beyond
//! input types.

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::memory::{FeatureMap, MaskEnhancer, MemoryWeights, GLOBAL_TAU, PATCH_AREA, STRIDE};
use crate::tensor::Tensor;

fn rows64(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows())
        .map(|i| t.row(i).iter().map(|&v| f64::from(v)).collect())
        .collect()
}

/// Double-loop readout: negative squared L2 affinity, explicit softmax over
/// the memory rows, explicit weighted value sums.
pub fn readout_naive(
    queries: &[Vec<f64>],
    keys: &[Vec<f64>],
    values: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    if keys.len() != values.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} keys vs {} values",
            keys.len(),
            values.len()
        )));
    }
    if keys.is_empty() {
        return Err(Error::EmptyReferenceSet);
    }
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        let mut sims = Vec::with_capacity(keys.len());
        for k in keys {
            if k.len() != q.len() {
                return Err(Error::ShapeMismatch("key width".into()));
            }
            let mut d2 = 0.0;
            for (a, b) in q.iter().zip(k) {
                d2 += (a - b) * (a - b);
            }
            sims.push(-d2);
        }
        let max = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = sims.iter().map(|&s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let mut row = vec![0.0; values[0].len()];
        for (w, v) in exps.iter().zip(values) {
            for (acc, x) in row.iter_mut().zip(v) {
                *acc += (w / total) * x;
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// Result of [`hybrid_propagate_naive`]: f64 mirrors of the fast outputs.
#[derive(Debug, Clone)]
pub struct NaivePropagation {
    pub values: Vec<Vec<f64>>,
    pub global_affinity: Option<Vec<[f64; 2]>>,
    pub soft_mask: Vec<f64>,
    /// Affinity rows kept for normalization checks.
    pub affinity: Vec<Vec<f64>>,
}

fn encode_mask_naive(mask: &Mask, proj: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let grid_h = mask.height().div_ceil(STRIDE);
    let grid_w = mask.width().div_ceil(STRIDE);
    let cy = proj[0].len();
    let mut features = Vec::with_capacity(grid_h * grid_w);
    let mut probs = Vec::with_capacity(grid_h * grid_w);
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            let mut patch = vec![0.0f64; PATCH_AREA];
            for py in 0..STRIDE {
                for px in 0..STRIDE {
                    let (y, x) = (gy * STRIDE + py, gx * STRIDE + px);
                    if y < mask.height() && x < mask.width() {
                        patch[py * STRIDE + px] = f64::from(mask.get(y, x));
                    }
                }
            }
            probs.push(patch.iter().sum::<f64>() / PATCH_AREA as f64);
            let mut row = vec![0.0f64; cy];
            for (p, &pv) in patch.iter().enumerate() {
                for c in 0..cy {
                    row[c] += pv * proj[p][c];
                }
            }
            features.push(row);
        }
    }
    (features, probs)
}

fn matvec(rows: &[Vec<f64>], m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let cols = m[0].len();
            let mut out = vec![0.0f64; cols];
            for (a, mrow) in r.iter().zip(m) {
                for c in 0..cols {
                    out[c] += a * mrow[c];
                }
            }
            out
        })
        .collect()
}

/// Full propagation recomputed from raw inputs with plain loops: key
/// projection, affinity, softmax, readout, joint features, token
/// aggregation, and node-object inner products.
pub fn hybrid_propagate_naive(
    query: &FeatureMap,
    ref_features: &[FeatureMap],
    ref_masks: &[Mask],
    weights: &MemoryWeights,
) -> Result<NaivePropagation> {
    if ref_features.is_empty() {
        return Err(Error::EmptyReferenceSet);
    }
    let key_proj = rows64(&weights.key_proj);
    let joint_proj = rows64(&weights.joint_proj);
    let mask_proj = rows64(&weights.mask_proj);
    let enhancer = match &weights.enhancer {
        MaskEnhancer::Identity => None,
        MaskEnhancer::Linear(w) => Some(rows64(w)),
    };
    let cy = weights.mask_channels();

    // Memory side.
    let mut mem_keys = Vec::new();
    let mut mem_values = Vec::new();
    let mut mem_visual = Vec::new();
    let mut mem_probs = Vec::new();
    for (fm, mask) in ref_features.iter().zip(ref_masks) {
        let visual = rows64(fm.data());
        let keys = matvec(&visual, &key_proj);
        let (encoded, probs) = encode_mask_naive(mask, &mask_proj);
        let enhanced = match &enhancer {
            None => encoded,
            Some(w) => {
                let mixed = matvec(&visual, w);
                encoded
                    .iter()
                    .zip(&mixed)
                    .map(|(e, m)| e.iter().zip(m).map(|(a, b)| a + b).collect())
                    .collect()
            }
        };
        for node in 0..fm.nodes() {
            let mut value = enhanced[node].clone();
            value.push(probs[node]);
            value.push(1.0 - probs[node]);
            mem_values.push(value);
            mem_keys.push(keys[node].clone());
            mem_visual.push(visual[node].clone());
            mem_probs.push(probs[node]);
        }
    }

    // Local readout with explicit softmax.
    let q_visual = rows64(query.data());
    let q_keys = matvec(&q_visual, &key_proj);
    let mut affinity = Vec::with_capacity(q_keys.len());
    let mut values_out = Vec::with_capacity(q_keys.len());
    for qk in &q_keys {
        let mut sims = Vec::with_capacity(mem_keys.len());
        for mk in &mem_keys {
            let mut d2 = 0.0;
            for (a, b) in qk.iter().zip(mk) {
                d2 += (a - b) * (a - b);
            }
            sims.push(-d2);
        }
        let max = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = sims.iter().map(|&s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let weights_row: Vec<f64> = exps.iter().map(|&e| e / total).collect();
        let mut out = vec![0.0f64; cy + 2];
        for (w, v) in weights_row.iter().zip(&mem_values) {
            for (acc, x) in out.iter_mut().zip(v) {
                *acc += w * x;
            }
        }
        affinity.push(weights_row);
        values_out.push(out);
    }

    // Global tokens over the joint features.
    let joint_mem: Vec<Vec<f64>> = mem_values
        .iter()
        .zip(&mem_visual)
        .map(|(v, f)| {
            let mut row = v.clone();
            row.extend_from_slice(f);
            row
        })
        .collect();
    let joint_mem = matvec(&joint_mem, &joint_proj);
    let aggregate = |probs: &[f64]| -> Option<Vec<f64>> {
        let mut num = vec![0.0f64; joint_mem[0].len()];
        let mut den = 0.0f64;
        for (row, &p) in joint_mem.iter().zip(probs) {
            if p > GLOBAL_TAU {
                den += p;
                for (acc, x) in num.iter_mut().zip(row) {
                    *acc += p * x;
                }
            }
        }
        if den == 0.0 {
            None
        } else {
            Some(num.iter().map(|&x| x / den).collect())
        }
    };
    let bg_probs: Vec<f64> = mem_probs.iter().map(|&p| 1.0 - p).collect();
    let fg_token = aggregate(&mem_probs);
    let bg_token = aggregate(&bg_probs);

    let global_affinity = match (fg_token, bg_token) {
        (Some(fg), Some(bg)) => {
            let joint_q: Vec<Vec<f64>> = values_out
                .iter()
                .zip(&q_visual)
                .map(|(v, f)| {
                    let mut row = v.clone();
                    row.extend_from_slice(f);
                    row
                })
                .collect();
            let joint_q = matvec(&joint_q, &joint_proj);
            Some(
                joint_q
                    .iter()
                    .map(|row| {
                        let dot =
                            |token: &[f64]| row.iter().zip(token).map(|(a, b)| a * b).sum::<f64>();
                        [dot(&fg), dot(&bg)]
                    })
                    .collect(),
            )
        }
        _ => None,
    };

    let soft_mask: Vec<f64> = values_out
        .iter()
        .map(|v| v[cy] / (v[cy] + v[cy + 1]))
        .collect();

    Ok(NaivePropagation {
        values: values_out,
        global_affinity,
        soft_mask,
        affinity,
    })
}

/// Exhaustive-permutation assignment minimum. Exponential; guarded to
/// N <= 10.
pub fn hungarian_brute_force(cost: &Tensor) -> Result<(Vec<usize>, f64)> {
    if cost.rank() != 2 || cost.rows() != cost.cols() {
        return Err(Error::ShapeMismatch(format!(
            "cost matrix must be square, got {:?}",
            cost.dims()
        )));
    }
    let n = cost.rows();
    if n > 10 {
        return Err(Error::InvalidConfig(format!(
            "brute-force assignment limited to N <= 10, got {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best_perm = perm.clone();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let total: f64 = p
            .iter()
            .enumerate()
            .map(|(i, &j)| f64::from(cost.get2(i, j)))
            .sum();
        if total < best {
            best = total;
            best_perm = p.to_vec();
        }
    });
    Ok((best_perm, best))
}

fn permute(items: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// GIoU loss recomputed from plain area arithmetic.
pub fn giou_loss_naive(pred: (f64, f64, f64, f64), gt: (f64, f64, f64, f64)) -> (f64, f64) {
    let (px1, py1, px2, py2) = pred;
    let (gx1, gy1, gx2, gy2) = gt;
    let l1 = ((px1 - gx1).abs() + (py1 - gy1).abs() + (px2 - gx2).abs() + (py2 - gy2).abs()) / 4.0;
    let iw = (px2.min(gx2) - px1.max(gx1)).max(0.0);
    let ih = (py2.min(gy2) - py1.max(gy1)).max(0.0);
    let inter = iw * ih;
    let union = (px2 - px1) * (py2 - py1) + (gx2 - gx1) * (gy2 - gy1) - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    let c = (px2.max(gx2) - px1.min(gx1)) * (py2.max(gy2) - py1.min(gy1));
    let slack = if c > 0.0 { (c - union) / c } else { 0.0 };
    (l1, 1.0 - (iou - slack))
}

/// Confidence-weighted aggregation recomputed with a plain loop.
pub fn aggregate_naive(joint: &Tensor, probs: &[f32], tau: f64) -> Option<Vec<f64>> {
    let mut num = vec![0.0f64; joint.cols()];
    let mut den = 0.0f64;
    for (i, &p) in probs.iter().enumerate() {
        let p = f64::from(p);
        if p > tau {
            den += p;
            for (c, acc) in num.iter_mut().enumerate() {
                *acc += p * f64::from(joint.get2(i, c));
            }
        }
    }
    if den == 0.0 {
        None
    } else {
        Some(num.iter().map(|&x| x / den).collect())
    }
}

/// Boundary F recomputed with explicit pairwise distances instead of
/// dilation.
pub fn boundary_f_naive(pred: &Mask, gt: &Mask, tolerance: f64) -> Result<f64> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::ShapeMismatch("mask shapes differ".into()));
    }
    let boundary = |m: &Mask| -> Vec<(i64, i64)> {
        let (h, w) = (m.height() as i64, m.width() as i64);
        let get = |y: i64, x: i64| m.get(y as usize, x as usize) > 0.5;
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let v = get(y, x);
                let differs = (y > 0 && get(y - 1, x) != v)
                    || (y + 1 < h && get(y + 1, x) != v)
                    || (x > 0 && get(y, x - 1) != v)
                    || (x + 1 < w && get(y, x + 1) != v);
                if differs {
                    out.push((y, x));
                }
            }
        }
        out
    };
    let pb = boundary(pred);
    let gb = boundary(gt);
    if pb.is_empty() && gb.is_empty() {
        return Ok(1.0);
    }
    let fraction = |from: &[(i64, i64)], to: &[(i64, i64)]| -> f64 {
        if from.is_empty() {
            return 0.0;
        }
        let hits = from
            .iter()
            .filter(|&&(y, x)| {
                to.iter().any(|&(ty, tx)| {
                    let (dy, dx) = (y - ty, x - tx);
                    ((dy * dy + dx * dx) as f64) <= tolerance * tolerance
                })
            })
            .count();
        hits as f64 / from.len() as f64
    };
    let p = fraction(&pb, &gb);
    let r = fraction(&gb, &pb);
    Ok(if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    })
}
