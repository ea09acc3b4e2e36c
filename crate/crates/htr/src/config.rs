//! Run configuration shared by the library pipeline and the CLI.

use crate::error::{Error, Result};

/// Knobs for selection, propagation, and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Fraction of frames memorized as references, in (0, 1].
    pub memorized_ratio: f64,
    /// Thresholds at which MCS is reported.
    pub mcs_thresholds: Vec<f64>,
    /// Process the video in independent clips of this length; `None` keeps
    /// the whole video as one clip.
    pub clip_len: Option<usize>,
    /// Boundary-match tolerance in pixels; `None` derives it from the image
    /// diagonal.
    pub boundary_tolerance: Option<f64>,
    /// Seed for generated weights and synthetic data.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            memorized_ratio: 0.25,
            mcs_thresholds: vec![0.1, 0.5, 0.9],
            clip_len: None,
            boundary_tolerance: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.memorized_ratio > 0.0 && self.memorized_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "memorized ratio must be in (0, 1], got {}",
                self.memorized_ratio
            )));
        }
        if self
            .mcs_thresholds
            .iter()
            .any(|t| !t.is_finite() || !(0.0..=1.0).contains(t))
        {
            return Err(Error::InvalidConfig(
                "MCS thresholds must lie in [0, 1]".into(),
            ));
        }
        if self.clip_len == Some(0) {
            return Err(Error::InvalidConfig("clip length must be >= 1".into()));
        }
        if let Some(tol) = self.boundary_tolerance {
            if !(tol.is_finite() && tol >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "boundary tolerance must be nonnegative, got {tol}"
                )));
            }
        }
        Ok(())
    }
}
