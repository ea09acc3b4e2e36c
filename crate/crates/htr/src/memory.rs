//! Hybrid memory: mask-grid encoding, local pixel-level readout, global
//! token aggregation, and node-object affinity.
//!
//! The memory has two complementary parts. The *local bank* stores one key
//! and one value row per reference node (a stride-16 pixel cell); target
//! nodes read it out with a softmax over negative squared L2 affinities, so
//! every readout is a convex combination of stored values. The *global
//! tokens* condense all reference nodes into one foreground and one
//! background vector by confidence-weighted averaging; target nodes compare
//! against them with plain inner products.
//!
//! Value rows carry the learned mask-feature channels plus an appended
//! (foreground, background) probability pair that always sums to 1. Reading
//! out that pair and renormalizing it per node yields a soft mask directly,
//! with no decoder network involved.

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::{pairwise_neg_l2, softmax, Axis, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Spatial stride of feature grids: one node per 16x16 pixel patch.
pub const STRIDE: usize = 16;
/// Flattened patch length fed to the mask projection.
pub const PATCH_AREA: usize = STRIDE * STRIDE;
/// Width of local keys and global tokens.
pub const KEY_WIDTH: usize = 64;
/// Default learned mask-feature channel count.
pub const DEFAULT_MASK_CHANNELS: usize = 16;
/// Confidence threshold for global aggregation.
pub const GLOBAL_TAU: f64 = 0.5;

/// Per-frame dense feature grid: `height * width` nodes at stride 16, each
/// with `channels` values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Tensor,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, data: Tensor) -> Result<Self> {
        if data.rank() != 2 || data.rows() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "feature map {}x{} needs a {}xC tensor, got dims {:?}",
                height,
                width,
                height * width,
                data.dims()
            )));
        }
        let channels = data.cols();
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn nodes(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }
}

/// Post-encoding enhancement of mask features with the node's visual
/// features. The default leaves the encoded rows untouched; a linear
/// enhancer adds `visual * W` with a loaded weight tensor.
#[derive(Debug, Clone, Default)]
pub enum MaskEnhancer {
    #[default]
    Identity,
    /// Residual mix-in: `encoded + visual * W` with W of shape
    /// `channels x mask_channels`.
    Linear(Tensor),
}

impl MaskEnhancer {
    /// Applies the enhancement; `encoded` is rows x mask_channels and
    /// `visual` the aligned rows x channels features.
    pub fn apply(&self, encoded: &Tensor, visual: &Tensor) -> Result<Tensor> {
        match self {
            MaskEnhancer::Identity => Ok(encoded.clone()),
            MaskEnhancer::Linear(w) => encoded.add(&visual.matmul(w)?),
        }
    }
}

/// Projection weights used by memory construction and propagation.
#[derive(Debug, Clone)]
pub struct MemoryWeights {
    /// `channels x KEY_WIDTH` key projection.
    pub key_proj: Tensor,
    /// `(mask_channels + 2 + channels) x KEY_WIDTH` joint projection.
    pub joint_proj: Tensor,
    /// `PATCH_AREA x mask_channels` mask-grid projection.
    pub mask_proj: Tensor,
    /// Mask-feature enhancement applied after grid encoding.
    pub enhancer: MaskEnhancer,
}

impl MemoryWeights {
    pub fn new(key_proj: Tensor, joint_proj: Tensor, mask_proj: Tensor) -> Result<Self> {
        let w = Self {
            key_proj,
            joint_proj,
            mask_proj,
            enhancer: MaskEnhancer::Identity,
        };
        w.validate()?;
        Ok(w)
    }

    /// Replaces the enhancer, revalidating widths.
    pub fn with_enhancer(mut self, enhancer: MaskEnhancer) -> Result<Self> {
        self.enhancer = enhancer;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.key_proj.rank() != 2 || self.key_proj.cols() != KEY_WIDTH {
            return Err(Error::ShapeMismatch(format!(
                "key projection must be CxK ({KEY_WIDTH}), got {:?}",
                self.key_proj.dims()
            )));
        }
        if self.mask_proj.rank() != 2 || self.mask_proj.rows() != PATCH_AREA {
            return Err(Error::ShapeMismatch(format!(
                "mask projection must be {PATCH_AREA}xCy, got {:?}",
                self.mask_proj.dims()
            )));
        }
        let joint_in = self.channels() + self.value_width();
        if self.joint_proj.rank() != 2
            || self.joint_proj.rows() != joint_in
            || self.joint_proj.cols() != KEY_WIDTH
        {
            return Err(Error::ShapeMismatch(format!(
                "joint projection must be {joint_in}x{KEY_WIDTH}, got {:?}",
                self.joint_proj.dims()
            )));
        }
        if let MaskEnhancer::Linear(w) = &self.enhancer {
            if w.rank() != 2 || w.rows() != self.channels() || w.cols() != self.mask_channels() {
                return Err(Error::ShapeMismatch(format!(
                    "enhancer must be {}x{}, got {:?}",
                    self.channels(),
                    self.mask_channels(),
                    w.dims()
                )));
            }
        }
        Ok(())
    }

    /// Visual channel count these weights expect.
    pub fn channels(&self) -> usize {
        self.key_proj.rows()
    }

    /// Learned mask-feature channel count.
    pub fn mask_channels(&self) -> usize {
        self.mask_proj.cols()
    }

    /// Stored value width: learned channels plus the (fg, bg) pair.
    pub fn value_width(&self) -> usize {
        self.mask_channels() + 2
    }

    /// Deterministic weights drawn from a seeded generator; entries are
    /// uniform in [-1, 1] scaled by 1/sqrt(fan_in).
    pub fn seeded(seed: u64, channels: usize, mask_channels: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize| {
            let scale = 1.0 / (rows as f32).sqrt();
            let data: Vec<f32> = (0..rows * cols)
                .map(|_| rng.gen_range(-1.0f32..=1.0) * scale)
                .collect();
            Tensor::new(vec![rows, cols], data)
        };
        let key_proj = draw(channels, KEY_WIDTH)?;
        let joint_proj = draw(channels + mask_channels + 2, KEY_WIDTH)?;
        let mask_proj = draw(PATCH_AREA, mask_channels)?;
        Self::new(key_proj, joint_proj, mask_proj)
    }

    /// Writes the projections (and a linear enhancer, if any) as HTRT
    /// containers under `dir`.
    pub fn save_dir(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        crate::io::container::write_tensor(&dir.join("key_proj.htrt"), &self.key_proj)?;
        crate::io::container::write_tensor(&dir.join("joint_proj.htrt"), &self.joint_proj)?;
        crate::io::container::write_tensor(&dir.join("mask_proj.htrt"), &self.mask_proj)?;
        if let MaskEnhancer::Linear(w) = &self.enhancer {
            crate::io::container::write_tensor(&dir.join("enhancer.htrt"), w)?;
        }
        Ok(())
    }

    /// Loads weights saved by [`MemoryWeights::save_dir`]; an `enhancer.htrt`
    /// file selects the linear enhancer, otherwise identity.
    pub fn load_dir(dir: &std::path::Path) -> Result<Self> {
        let weights = Self::new(
            crate::io::container::read_tensor(&dir.join("key_proj.htrt"))?,
            crate::io::container::read_tensor(&dir.join("joint_proj.htrt"))?,
            crate::io::container::read_tensor(&dir.join("mask_proj.htrt"))?,
        )?;
        let enhancer_path = dir.join("enhancer.htrt");
        if enhancer_path.exists() {
            weights.with_enhancer(MaskEnhancer::Linear(crate::io::container::read_tensor(
                &enhancer_path,
            )?))
        } else {
            Ok(weights)
        }
    }
}

/// Encoded mask features for one frame: one row per stride-16 node plus the
/// per-node mean foreground probability of its source patch.
#[derive(Debug, Clone)]
pub struct MaskFeatures {
    features: Tensor,
    node_probs: Vec<f32>,
    grid_height: usize,
    grid_width: usize,
}

impl MaskFeatures {
    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn node_probs(&self) -> &[f32] {
        &self.node_probs
    }

    pub fn grid_height(&self) -> usize {
        self.grid_height
    }

    pub fn grid_width(&self) -> usize {
        self.grid_width
    }
}

/// Projects non-overlapping 16x16 mask patches to feature vectors.
///
/// Masks whose sides are not divisible by 16 are padded on the bottom and
/// right with background (probability 0) first. Each patch is flattened
/// row-major into 256 values and multiplied by `mask_proj`; the map is
/// linear in the mask.
pub fn encode_mask_grid(mask: &Mask, mask_proj: &Tensor) -> Result<MaskFeatures> {
    if mask_proj.rank() != 2 || mask_proj.rows() != PATCH_AREA {
        return Err(Error::ShapeMismatch(format!(
            "mask projection must be {PATCH_AREA}xCy, got {:?}",
            mask_proj.dims()
        )));
    }
    let grid_h = mask.height().div_ceil(STRIDE);
    let grid_w = mask.width().div_ceil(STRIDE);
    let cy = mask_proj.cols();
    let mut features = vec![0.0f32; grid_h * grid_w * cy];
    let mut node_probs = vec![0.0f32; grid_h * grid_w];
    let mut patch = [0.0f32; PATCH_AREA];
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            patch.fill(0.0);
            let mut prob_sum = 0.0f64;
            for py in 0..STRIDE {
                let y = gy * STRIDE + py;
                if y >= mask.height() {
                    break;
                }
                for px in 0..STRIDE {
                    let x = gx * STRIDE + px;
                    if x >= mask.width() {
                        break;
                    }
                    let v = mask.get(y, x);
                    patch[py * STRIDE + px] = v;
                    prob_sum += f64::from(v);
                }
            }
            let node = gy * grid_w + gx;
            node_probs[node] = (prob_sum / PATCH_AREA as f64) as f32;
            for c in 0..cy {
                let mut acc = 0.0f64;
                for (p, &pv) in patch.iter().enumerate() {
                    acc += f64::from(pv) * f64::from(mask_proj.get2(p, c));
                }
                features[node * cy + c] = acc as f32;
            }
        }
    }
    Ok(MaskFeatures {
        features: Tensor::new(vec![grid_h * grid_w, cy], features)?,
        node_probs,
        grid_height: grid_h,
        grid_width: grid_w,
    })
}

/// Per-node keys and mask-value features from all reference frames.
#[derive(Debug, Clone)]
pub struct LocalMemoryBank {
    /// `rows x KEY_WIDTH` projected keys.
    keys: Tensor,
    /// `rows x (mask_channels + 2)` values; the last two columns are the
    /// stored (fg, bg) probability pair.
    values: Tensor,
    /// Memory-local frame index of each row.
    frame_of_row: Vec<usize>,
}

impl LocalMemoryBank {
    pub fn new(keys: Tensor, values: Tensor, frame_of_row: Vec<usize>) -> Result<Self> {
        if keys.rank() != 2 || keys.cols() != KEY_WIDTH {
            return Err(Error::ShapeMismatch(format!(
                "bank keys must be Rx{KEY_WIDTH}, got {:?}",
                keys.dims()
            )));
        }
        if values.rank() != 2 || values.rows() != keys.rows() {
            return Err(Error::ShapeMismatch(format!(
                "bank values {:?} must align with {} key rows",
                values.dims(),
                keys.rows()
            )));
        }
        if frame_of_row.len() != keys.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} frame indices vs {} rows",
                frame_of_row.len(),
                keys.rows()
            )));
        }
        Ok(Self {
            keys,
            values,
            frame_of_row,
        })
    }

    pub fn keys(&self) -> &Tensor {
        &self.keys
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn frame_of_row(&self) -> &[usize] {
        &self.frame_of_row
    }

    pub fn rows(&self) -> usize {
        self.frame_of_row.len()
    }
}

/// Aggregated foreground/background tokens. A token is `None` when its
/// aggregation denominator is zero (no node passed the threshold).
#[derive(Debug, Clone)]
pub struct GlobalTokens {
    pub foreground: Option<Tensor>,
    pub background: Option<Tensor>,
}

impl GlobalTokens {
    pub fn defined(&self) -> bool {
        self.foreground.is_some() && self.background.is_some()
    }
}

/// Immutable hybrid memory built from reference frames.
#[derive(Debug, Clone)]
pub struct HybridMemory {
    pub local: LocalMemoryBank,
    pub global: GlobalTokens,
    /// Memory-local reference frame indices (0..frame_count).
    pub reference_frames: Vec<usize>,
    /// Per-row foreground probability, aligned with the local bank.
    pub node_probs: Vec<f32>,
    grid_height: usize,
    grid_width: usize,
}

impl HybridMemory {
    pub fn grid_height(&self) -> usize {
        self.grid_height
    }

    pub fn grid_width(&self) -> usize {
        self.grid_width
    }

    /// Dumps the memory as HTRT containers for inspection. Indices are
    /// stored as f32, which is exact at desk scale.
    pub fn save_dir(&self, dir: &std::path::Path) -> Result<()> {
        use crate::io::container::write_tensor;
        std::fs::create_dir_all(dir)?;
        write_tensor(&dir.join("keys.htrt"), &self.local.keys)?;
        write_tensor(&dir.join("values.htrt"), &self.local.values)?;
        let to_rank1 = |values: Vec<f32>| Tensor::new(vec![values.len()], values);
        write_tensor(
            &dir.join("frames.htrt"),
            &to_rank1(self.local.frame_of_row.iter().map(|&i| i as f32).collect())?,
        )?;
        write_tensor(
            &dir.join("node_probs.htrt"),
            &to_rank1(self.node_probs.clone())?,
        )?;
        write_tensor(
            &dir.join("refs.htrt"),
            &to_rank1(self.reference_frames.iter().map(|&i| i as f32).collect())?,
        )?;
        write_tensor(
            &dir.join("grid.htrt"),
            &to_rank1(vec![self.grid_height as f32, self.grid_width as f32])?,
        )?;
        if let Some(fg) = &self.global.foreground {
            write_tensor(&dir.join("token_fg.htrt"), fg)?;
        }
        if let Some(bg) = &self.global.background {
            write_tensor(&dir.join("token_bg.htrt"), bg)?;
        }
        Ok(())
    }

    /// Restores a memory dumped by [`HybridMemory::save_dir`].
    pub fn load_dir(dir: &std::path::Path) -> Result<Self> {
        use crate::io::container::read_tensor;
        let keys = read_tensor(&dir.join("keys.htrt"))?;
        let values = read_tensor(&dir.join("values.htrt"))?;
        let frames = read_tensor(&dir.join("frames.htrt"))?;
        let local = LocalMemoryBank::new(
            keys,
            values,
            frames.data().iter().map(|&v| v as usize).collect(),
        )?;
        let node_probs = read_tensor(&dir.join("node_probs.htrt"))?.data().to_vec();
        if node_probs.len() != local.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} node probabilities vs {} bank rows",
                node_probs.len(),
                local.rows()
            )));
        }
        let refs = read_tensor(&dir.join("refs.htrt"))?;
        let grid = read_tensor(&dir.join("grid.htrt"))?;
        if grid.len() != 2 {
            return Err(Error::ShapeMismatch(
                "grid.htrt must hold [height, width]".into(),
            ));
        }
        let read_token = |name: &str| -> Result<Option<Tensor>> {
            let path = dir.join(name);
            if path.exists() {
                Ok(Some(read_tensor(&path)?))
            } else {
                Ok(None)
            }
        };
        Ok(Self {
            local,
            global: GlobalTokens {
                foreground: read_token("token_fg.htrt")?,
                background: read_token("token_bg.htrt")?,
            },
            reference_frames: refs.data().iter().map(|&v| v as usize).collect(),
            node_probs,
            grid_height: grid.data()[0] as usize,
            grid_width: grid.data()[1] as usize,
        })
    }
}

/// Strict-positivity step function: 1 if `x > 0`, else 0.
pub fn heaviside(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Confidence-weighted average of `joint` rows.
///
/// Row j contributes with weight `heaviside(M_j - tau) * M_j`, so rows at or
/// below the threshold contribute exactly zero. Errors when no row survives.
pub fn aggregate_global(joint: &Tensor, probs: &[f32], tau: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidConfig(format!(
            "aggregation threshold must be in [0, 1], got {tau}"
        )));
    }
    if joint.rank() != 2 || joint.rows() != probs.len() {
        return Err(Error::ShapeMismatch(format!(
            "aggregate: {} probabilities vs tensor dims {:?}",
            probs.len(),
            joint.dims()
        )));
    }
    let cols = joint.cols();
    let mut num = vec![0.0f64; cols];
    let mut den = 0.0f64;
    for (j, &p) in probs.iter().enumerate() {
        let w = heaviside(f64::from(p) - tau) * f64::from(p);
        if w == 0.0 {
            continue;
        }
        den += w;
        let row = joint.row(j);
        for (c, &v) in row.iter().enumerate() {
            num[c] += w * f64::from(v);
        }
    }
    if den == 0.0 {
        return Err(Error::GlobalTokenUndefined);
    }
    Tensor::new(
        vec![1, cols],
        num.iter().map(|&v| (v / den) as f32).collect(),
    )
}

/// Builds the hybrid memory from reference frames and their masks.
///
/// Local keys are the projected visual features of every reference node;
/// values are the encoded mask features with the (fg, bg) probability pair
/// appended. Global tokens aggregate the vision-mask joint features over
/// all reference nodes, weighted by foreground (resp. background)
/// confidence.
pub fn build_memory(
    features: &[FeatureMap],
    masks: &[Mask],
    weights: &MemoryWeights,
) -> Result<HybridMemory> {
    if features.is_empty() {
        return Err(Error::EmptyReferenceSet);
    }
    if features.len() != masks.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature maps vs {} masks",
            features.len(),
            masks.len()
        )));
    }
    let (grid_h, grid_w, channels) = (
        features[0].height(),
        features[0].width(),
        features[0].channels(),
    );
    if channels != weights.channels() {
        return Err(Error::ShapeMismatch(format!(
            "features have {} channels, weights expect {}",
            channels,
            weights.channels()
        )));
    }
    let nodes = grid_h * grid_w;
    let cy = weights.mask_channels();

    let mut keys_data = Vec::with_capacity(features.len() * nodes * KEY_WIDTH);
    let mut values_data = Vec::with_capacity(features.len() * nodes * (cy + 2));
    let mut visual_data = Vec::with_capacity(features.len() * nodes * channels);
    let mut node_probs = Vec::with_capacity(features.len() * nodes);
    let mut frame_of_row = Vec::with_capacity(features.len() * nodes);

    for (t, (fm, mask)) in features.iter().zip(masks).enumerate() {
        if fm.height() != grid_h || fm.width() != grid_w || fm.channels() != channels {
            return Err(Error::ShapeMismatch(format!(
                "reference frame {t} grid differs from frame 0"
            )));
        }
        let encoded = encode_mask_grid(mask, &weights.mask_proj)?;
        if encoded.grid_height() != grid_h || encoded.grid_width() != grid_w {
            return Err(Error::ShapeMismatch(format!(
                "frame {t}: mask {}x{} encodes to {}x{} nodes but features are {}x{}",
                mask.height(),
                mask.width(),
                encoded.grid_height(),
                encoded.grid_width(),
                grid_h,
                grid_w
            )));
        }
        let enhanced = weights.enhancer.apply(encoded.features(), fm.data())?;
        let projected = fm.data().matmul(&weights.key_proj)?;
        keys_data.extend_from_slice(projected.data());
        visual_data.extend_from_slice(fm.data().data());
        for node in 0..nodes {
            let fg = encoded.node_probs()[node];
            values_data.extend_from_slice(enhanced.row(node));
            values_data.push(fg);
            values_data.push(1.0 - fg);
            node_probs.push(fg);
            frame_of_row.push(t);
        }
    }

    let rows = features.len() * nodes;
    let keys = Tensor::new(vec![rows, KEY_WIDTH], keys_data)?;
    let values = Tensor::new(vec![rows, cy + 2], values_data)?;
    let visual = Tensor::new(vec![rows, channels], visual_data)?;

    let joint = values.concat_cols(&visual)?.matmul(&weights.joint_proj)?;
    let bg_probs: Vec<f32> = node_probs.iter().map(|&p| 1.0 - p).collect();
    let foreground = match aggregate_global(&joint, &node_probs, GLOBAL_TAU) {
        Ok(t) => Some(t),
        Err(Error::GlobalTokenUndefined) => None,
        Err(e) => return Err(e),
    };
    let background = match aggregate_global(&joint, &bg_probs, GLOBAL_TAU) {
        Ok(t) => Some(t),
        Err(Error::GlobalTokenUndefined) => None,
        Err(e) => return Err(e),
    };

    Ok(HybridMemory {
        local: LocalMemoryBank {
            keys,
            values,
            frame_of_row,
        },
        global: GlobalTokens {
            foreground,
            background,
        },
        reference_frames: (0..features.len()).collect(),
        node_probs,
        grid_height: grid_h,
        grid_width: grid_w,
    })
}

/// Softmax affinity between query nodes and every memory row.
///
/// Row i is `softmax_j(-||q_i W^K - key_j||^2)` over the full spatio-temporal
/// extent of the bank; each row sums to 1.
pub fn local_affinity(
    query: &FeatureMap,
    bank: &LocalMemoryBank,
    key_proj: &Tensor,
) -> Result<Tensor> {
    let projected = query.data().matmul(key_proj)?;
    if projected.cols() != bank.keys.cols() {
        return Err(Error::ShapeMismatch(format!(
            "query key width {} vs bank key width {}",
            projected.cols(),
            bank.keys.cols()
        )));
    }
    let sim = pairwise_neg_l2(&projected, &bank.keys)?;
    softmax(&sim, Axis::Rows)
}

/// Affinity-weighted readout of the bank's value rows for every query node.
///
/// Each output row is a convex combination of stored values, so it stays
/// within their componentwise bounds; in particular the propagated (fg, bg)
/// pair stays in [0, 1].
pub fn local_readout(
    query: &FeatureMap,
    bank: &LocalMemoryBank,
    key_proj: &Tensor,
) -> Result<Tensor> {
    local_affinity(query, bank, key_proj)?.matmul(&bank.values)
}

/// Node-object affinity against the global tokens.
///
/// Per query node the vision-mask joint feature is
/// `(value_row || visual_row) * W^J`; column 0 is its inner product with
/// the foreground token, column 1 with the background token.
pub fn global_affinity(
    values: &Tensor,
    query: &FeatureMap,
    tokens: &GlobalTokens,
    joint_proj: &Tensor,
) -> Result<Tensor> {
    let (fg, bg) = match (&tokens.foreground, &tokens.background) {
        (Some(fg), Some(bg)) => (fg, bg),
        _ => return Err(Error::GlobalTokenUndefined),
    };
    let joint = values.concat_cols(query.data())?.matmul(joint_proj)?;
    if joint.cols() != fg.cols() || joint.cols() != bg.cols() {
        return Err(Error::ShapeMismatch(format!(
            "joint width {} vs token width {}",
            joint.cols(),
            fg.cols()
        )));
    }
    let mut out = vec![0.0f32; joint.rows() * 2];
    for i in 0..joint.rows() {
        let row = joint.row(i);
        let mut dot_fg = 0.0f64;
        let mut dot_bg = 0.0f64;
        for (c, &v) in row.iter().enumerate() {
            dot_fg += f64::from(v) * f64::from(fg.get2(0, c));
            dot_bg += f64::from(v) * f64::from(bg.get2(0, c));
        }
        out[i * 2] = dot_fg as f32;
        out[i * 2 + 1] = dot_bg as f32;
    }
    Tensor::new(vec![joint.rows(), 2], out)
}

/// Result of propagating memory onto one target frame.
#[derive(Debug, Clone)]
pub struct Propagation {
    /// Readout of the value rows, one row per query node.
    pub values: Tensor,
    /// Node-object affinities, absent when the global tokens are undefined.
    pub global_affinity: Option<Tensor>,
    /// Node-level soft mask: the propagated (fg, bg) pair renormalized.
    pub soft_mask: Mask,
}

/// Local readout composed with global affinity.
///
/// The soft mask is `fg / (fg + bg)` of the propagated probability pair;
/// the denominator is positive because stored pairs sum to 1 and affinity
/// rows sum to 1. Undefined global tokens degrade gracefully to a
/// local-only result.
pub fn hybrid_propagate(
    query: &FeatureMap,
    memory: &HybridMemory,
    weights: &MemoryWeights,
) -> Result<Propagation> {
    if memory.local.rows() == 0 {
        return Err(Error::EmptyReferenceSet);
    }
    let values = local_readout(query, &memory.local, &weights.key_proj)?;
    let global = if memory.global.defined() {
        Some(global_affinity(
            &values,
            query,
            &memory.global,
            &weights.joint_proj,
        )?)
    } else {
        None
    };
    let cy = values.cols() - 2;
    let mut probs = Vec::with_capacity(values.rows());
    for i in 0..values.rows() {
        let fg = values.get2(i, cy);
        let bg = values.get2(i, cy + 1);
        probs.push(fg / (fg + bg));
    }
    Ok(Propagation {
        values,
        global_affinity: global,
        soft_mask: Mask::new(query.height(), query.width(), probs)?,
    })
}
