//! Pixel masks whose values are foreground probabilities in [0, 1].

use crate::error::{Error, Result};

/// A single-frame mask stored row-major. Values are probabilities; a binary
/// mask is the special case where every value is exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyAxis);
        }
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} requires {} values, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        if let Some(bad) = data
            .iter()
            .position(|v| !v.is_finite() || !(0.0..=1.0).contains(v))
        {
            return Err(Error::NonFinite(bad));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// True if every value is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Binary mask keeping pixels strictly above `threshold`.
    pub fn binarize(&self, threshold: f32) -> Mask {
        let data = self
            .data
            .iter()
            .map(|&v| if v > threshold { 1.0 } else { 0.0 })
            .collect();
        Mask {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Number of pixels strictly above 0.5.
    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.5).count()
    }

    /// Nearest-neighbor upsampling: each pixel becomes a `factor`x`factor`
    /// block.
    pub fn upsample(&self, factor: usize) -> Result<Mask> {
        if factor == 0 {
            return Err(Error::InvalidConfig("upsample factor must be >= 1".into()));
        }
        let (h, w) = (self.height * factor, self.width * factor);
        let mut data = vec![0.0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                data[y * w + x] = self.get(y / factor, x / factor);
            }
        }
        Mask::new(h, w, data)
    }

    /// Top-left crop to `height` x `width`.
    pub fn crop(&self, height: usize, width: usize) -> Result<Mask> {
        if height > self.height || width > self.width {
            return Err(Error::ShapeMismatch(format!(
                "crop {}x{} exceeds mask {}x{}",
                height, width, self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            data.extend_from_slice(&self.data[y * self.width..y * self.width + width]);
        }
        Mask::new(height, width, data)
    }
}
