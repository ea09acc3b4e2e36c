//! Video mask propagation with a hybrid local/global memory, selective
//! reference-frame segmentation, forward-only training objectives, and
//! segmentation-quality metrics.
//!
//! The pipeline scores every frame, segments only the top-ranked ones to
//! build an immutable memory (per-node keys and mask values plus aggregated
//! foreground/background tokens), and propagates that memory onto the
//! remaining frames through softmax affinities over negative squared L2
//! distances. Evaluation covers region overlap J, boundary accuracy F,
//! their mean J&F, a strict per-video temporal consistency score, and a
//! sample-IoU precision suite.
//!
//! All heavy numerics run on a deliberately small dense [`tensor::Tensor`]
//! (f32 storage, f64 accumulation), so every operation is cheap to
//! cross-check against the brute-force references in [`oracle`].

pub mod config;
pub mod error;
pub mod fusion;
pub mod io;
pub mod losses;
pub mod mask;
pub mod memory;
pub mod metrics;
pub mod oracle;
pub mod selection;
pub mod synth;
pub mod tensor;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use mask::Mask;
pub use memory::{FeatureMap, HybridMemory, MemoryWeights};
pub use metrics::{JTable, MaskSequence};
pub use tensor::Tensor;
