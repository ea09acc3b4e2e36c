//! Language-conditioned feature fusion, object-query decoding, and
//! conditional-kernel segmentation.
//!
//! The fusion path enhances a visual feature grid with word features via
//! cross-attention and a Hadamard gate, decodes language-guided object
//! queries against the fused features, and emits per-query embeddings with
//! affine score/box/kernel heads. Projections are plain dense matrices
//! loaded from tensor containers or generated from a seeded RNG; nothing is
//! trained here.

use crate::error::{Error, Result};
use crate::io::container;
use crate::losses::BoxXYXY;
use crate::memory::FeatureMap;
use crate::tensor::{attention, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Default model width; desk-scale tests shrink it as far as 4.
pub const DEFAULT_WIDTH: usize = 256;

/// Word-level features, one row per token.
#[derive(Debug, Clone)]
pub struct WordFeatures {
    tokens: Tensor,
}

impl WordFeatures {
    pub fn new(tokens: Tensor) -> Result<Self> {
        if tokens.rank() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "word features must be rank 2, got {:?}",
                tokens.dims()
            )));
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &Tensor {
        &self.tokens
    }
}

/// Sentence-level embedding: exactly one row.
#[derive(Debug, Clone)]
pub struct SentenceFeature {
    embedding: Tensor,
}

impl SentenceFeature {
    pub fn new(embedding: Tensor) -> Result<Self> {
        if embedding.rank() != 2 || embedding.rows() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "sentence feature must be 1xC, got {:?}",
                embedding.dims()
            )));
        }
        Ok(Self { embedding })
    }

    pub fn embedding(&self) -> &Tensor {
        &self.embedding
    }
}

/// How the sentence feature and a learnable embedding combine into a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QueryCombine {
    /// Element-wise sum (default).
    #[default]
    Sum,
    /// Concatenate, then project back to width C with the projection set's
    /// `query_combine` matrix.
    ConcatProject,
}

/// A language-guided object query: one row of width C.
#[derive(Debug, Clone)]
pub struct ObjectQuery {
    query: Tensor,
}

impl ObjectQuery {
    pub fn new(query: Tensor) -> Result<Self> {
        if query.rank() != 2 || query.rows() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "object query must be 1xC, got {:?}",
                query.dims()
            )));
        }
        Ok(Self { query })
    }

    /// Combines a sentence feature with a learnable embedding.
    pub fn combine(
        sentence: &SentenceFeature,
        learnable: &Tensor,
        mode: QueryCombine,
        proj: &ProjectionSet,
    ) -> Result<Self> {
        match mode {
            QueryCombine::Sum => Self::new(sentence.embedding().add(learnable)?),
            QueryCombine::ConcatProject => {
                let combine = proj.query_combine.as_ref().ok_or_else(|| {
                    Error::InvalidConfig(
                        "concat-project query combination needs a query_combine matrix".into(),
                    )
                })?;
                Self::new(
                    sentence
                        .embedding()
                        .concat_cols(learnable)?
                        .matmul(combine)?,
                )
            }
        }
    }

    pub fn query(&self) -> &Tensor {
        &self.query
    }
}

/// Per-frame point-wise convolution weights predicted from an object
/// embedding.
#[derive(Debug, Clone)]
pub struct ConditionalKernel {
    weights: Tensor,
}

impl ConditionalKernel {
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.rank() != 2 || weights.rows() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "conditional kernel must be 1xC, got {:?}",
                weights.dims()
            )));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn width(&self) -> usize {
        self.weights.cols()
    }
}

/// Decoded per-query output: embedding, quality score, box, and kernel.
#[derive(Debug, Clone)]
pub struct ObjectEmbedding {
    pub embedding: Tensor,
    pub score: f32,
    pub bbox: BoxXYXY,
    pub kernel: ConditionalKernel,
}

/// An affine head `x W + b` applied to a 1xC embedding.
#[derive(Debug, Clone)]
pub struct AffineHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl AffineHead {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.rank() != 2 || bias.rows() != 1 {
            return Err(Error::ShapeMismatch(
                "affine head wants W CxK and bias 1xK".into(),
            ));
        }
        if weight.cols() != bias.cols() {
            return Err(Error::ShapeMismatch(format!(
                "affine head: W {:?} vs bias {:?}",
                weight.dims(),
                bias.dims()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add(&self.bias)
    }
}

/// All projection matrices used by the fusion path.
#[derive(Debug, Clone)]
pub struct ProjectionSet {
    pub vl_query: Tensor,
    pub vl_key: Tensor,
    pub vl_value: Tensor,
    pub dec_query: Tensor,
    pub dec_key: Tensor,
    pub dec_value: Tensor,
    pub score_head: AffineHead,
    pub box_head: AffineHead,
    pub kernel_head: AffineHead,
    /// 2CxC matrix for [`QueryCombine::ConcatProject`]; optional.
    pub query_combine: Option<Tensor>,
}

impl ProjectionSet {
    /// Model width C shared by every projection.
    pub fn width(&self) -> usize {
        self.vl_query.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.width();
        let square = [
            ("vl_query", &self.vl_query),
            ("vl_key", &self.vl_key),
            ("vl_value", &self.vl_value),
            ("dec_query", &self.dec_query),
            ("dec_key", &self.dec_key),
            ("dec_value", &self.dec_value),
        ];
        for (name, t) in square {
            if t.rank() != 2 || t.rows() != c || t.cols() != c {
                return Err(Error::ShapeMismatch(format!(
                    "{name} must be {c}x{c}, got {:?}",
                    t.dims()
                )));
            }
        }
        for (name, head, cols) in [
            ("score", &self.score_head, 1),
            ("box", &self.box_head, 4),
            ("kernel", &self.kernel_head, c),
        ] {
            if head.weight.rows() != c || head.weight.cols() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "{name} head must be {c}x{cols}, got {:?}",
                    head.weight.dims()
                )));
            }
        }
        if let Some(q) = &self.query_combine {
            if q.rank() != 2 || q.rows() != 2 * c || q.cols() != c {
                return Err(Error::ShapeMismatch(format!(
                    "query_combine must be {}x{c}, got {:?}",
                    2 * c,
                    q.dims()
                )));
            }
        }
        Ok(())
    }

    /// Deterministic projections drawn from a seeded generator.
    pub fn seeded(seed: u64, width: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize| {
            let scale = 1.0 / (rows as f32).sqrt();
            let data: Vec<f32> = (0..rows * cols)
                .map(|_| rng.gen_range(-1.0f32..=1.0) * scale)
                .collect();
            Tensor::new(vec![rows, cols], data)
        };
        let set = Self {
            vl_query: draw(width, width)?,
            vl_key: draw(width, width)?,
            vl_value: draw(width, width)?,
            dec_query: draw(width, width)?,
            dec_key: draw(width, width)?,
            dec_value: draw(width, width)?,
            score_head: AffineHead::new(draw(width, 1)?, draw(1, 1)?)?,
            box_head: AffineHead::new(draw(width, 4)?, draw(1, 4)?)?,
            kernel_head: AffineHead::new(draw(width, width)?, draw(1, width)?)?,
            query_combine: Some(draw(2 * width, width)?),
        };
        set.validate()?;
        Ok(set)
    }

    /// Writes every projection as an HTRT container under `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let pairs: Vec<(&str, &Tensor)> = vec![
            ("vl_query", &self.vl_query),
            ("vl_key", &self.vl_key),
            ("vl_value", &self.vl_value),
            ("dec_query", &self.dec_query),
            ("dec_key", &self.dec_key),
            ("dec_value", &self.dec_value),
            ("score_weight", &self.score_head.weight),
            ("score_bias", &self.score_head.bias),
            ("box_weight", &self.box_head.weight),
            ("box_bias", &self.box_head.bias),
            ("kernel_weight", &self.kernel_head.weight),
            ("kernel_bias", &self.kernel_head.bias),
        ];
        for (name, t) in pairs {
            container::write_tensor(&dir.join(format!("{name}.htrt")), t)?;
        }
        if let Some(q) = &self.query_combine {
            container::write_tensor(&dir.join("query_combine.htrt"), q)?;
        }
        Ok(())
    }

    /// Loads a projection set saved by [`ProjectionSet::save_dir`].
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let load = |name: &str| container::read_tensor(&dir.join(format!("{name}.htrt")));
        let combine_path = dir.join("query_combine.htrt");
        let set = Self {
            vl_query: load("vl_query")?,
            vl_key: load("vl_key")?,
            vl_value: load("vl_value")?,
            dec_query: load("dec_query")?,
            dec_key: load("dec_key")?,
            dec_value: load("dec_value")?,
            score_head: AffineHead::new(load("score_weight")?, load("score_bias")?)?,
            box_head: AffineHead::new(load("box_weight")?, load("box_bias")?)?,
            kernel_head: AffineHead::new(load("kernel_weight")?, load("kernel_bias")?)?,
            query_combine: if combine_path.exists() {
                Some(container::read_tensor(&combine_path)?)
            } else {
                None
            },
        };
        set.validate()?;
        Ok(set)
    }
}

fn logistic(x: f32) -> f32 {
    (1.0 / (1.0 + (-f64::from(x)).exp())) as f32
}

/// Gates visual features with language: `Fv ⊙ Attn(Fv W^Q, Fw W^K, Fw W^V)`.
///
/// The output grid has exactly the input's shape.
pub fn vl_fuse(
    visual: &FeatureMap,
    words: &WordFeatures,
    proj: &ProjectionSet,
) -> Result<FeatureMap> {
    let q = visual.data().matmul(&proj.vl_query)?;
    let k = words.tokens().matmul(&proj.vl_key)?;
    let v = words.tokens().matmul(&proj.vl_value)?;
    let attended = attention(&q, &k, &v)?;
    let fused = visual.data().hadamard(&attended)?;
    FeatureMap::new(visual.height(), visual.width(), fused)
}

/// Decodes object queries against fused features.
///
/// Each embedding is `Q + Attn(Q W^Q, F W^K, F W^V)`; the score is squashed
/// through the logistic, and the box head's corner pair is canonicalized so
/// x1 <= x2 and y1 <= y2.
pub fn decode_queries(
    queries: &[ObjectQuery],
    fused: &FeatureMap,
    proj: &ProjectionSet,
) -> Result<Vec<ObjectEmbedding>> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("no object queries"));
    }
    let k = fused.data().matmul(&proj.dec_key)?;
    let v = fused.data().matmul(&proj.dec_value)?;
    let mut out = Vec::with_capacity(queries.len());
    for query in queries {
        let q = query.query().matmul(&proj.dec_query)?;
        let embedding = query.query().add(&attention(&q, &k, &v)?)?;
        let score = logistic(proj.score_head.apply(&embedding)?.get2(0, 0));
        let raw = proj.box_head.apply(&embedding)?;
        let (a, b, c, d) = (
            raw.get2(0, 0),
            raw.get2(0, 1),
            raw.get2(0, 2),
            raw.get2(0, 3),
        );
        let bbox = BoxXYXY::new(
            f64::from(a.min(c)),
            f64::from(b.min(d)),
            f64::from(a.max(c)),
            f64::from(b.max(d)),
        )?;
        let kernel = ConditionalKernel::new(proj.kernel_head.apply(&embedding)?)?;
        out.push(ObjectEmbedding {
            embedding,
            score,
            bbox,
            kernel,
        });
    }
    Ok(out)
}

/// Point-wise convolution: the dot product of the kernel with every node's
/// feature vector, returned row-major as `height * width` logits.
pub fn apply_conditional_kernel(
    kernel: &ConditionalKernel,
    features: &FeatureMap,
) -> Result<Vec<f32>> {
    if kernel.width() != features.channels() {
        return Err(Error::ShapeMismatch(format!(
            "kernel width {} vs feature channels {}",
            kernel.width(),
            features.channels()
        )));
    }
    let logits = features.data().matmul(&kernel.weights().transposed()?)?;
    Ok(logits.data().to_vec())
}
