//! Minimal dense-tensor operations on which every other module is built.
//!
//! Values are stored as 32-bit floats in row-major order. Reductions
//! accumulate in 64-bit and round once at the end, so results are
//! reproducible and oracle comparisons can use tight tolerances. There is
//! no broadcasting: every shape mismatch is a hard error.

use crate::error::{Error, Result};

/// Dense row-major tensor of finite 32-bit floats with positive extents.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, validating extents, length, and finiteness.
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::EmptyAxis);
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "dims {:?} imply {} values, got {}",
                dims,
                expected,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(bad));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len: usize = dims.iter().product();
        Self::new(dims, vec![0.0; len])
    }

    /// Rank-2 convenience constructor from row slices of equal length.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyAxis);
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        let data: Vec<f32> = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Row count of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.dims[0]
    }

    /// Column count of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.dims[1]
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Element (i, j) of a rank-2 tensor.
    pub fn get2(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols() + j]
    }

    fn require_rank2(&self, what: &str) -> Result<()> {
        if self.rank() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "{what}: expected rank 2, got dims {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    /// Matrix product with f64 accumulation.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.require_rank2("matmul lhs")?;
        rhs.require_rank2("matmul rhs")?;
        if self.cols() != rhs.rows() {
            return Err(Error::ShapeMismatch(format!(
                "matmul: {:?} x {:?}",
                self.dims, rhs.dims
            )));
        }
        let (n, k, m) = (self.rows(), self.cols(), rhs.cols());
        let mut out = vec![0.0f32; n * m];
        for i in 0..n {
            let lrow = self.row(i);
            for j in 0..m {
                let mut acc = 0.0f64;
                for (p, &l) in lrow.iter().enumerate().take(k) {
                    acc += f64::from(l) * f64::from(rhs.get2(p, j));
                }
                out[i * m + j] = acc as f32;
            }
        }
        Tensor::new(vec![n, m], out)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transposed(&self) -> Result<Tensor> {
        self.require_rank2("transpose")?;
        let (n, m) = (self.rows(), self.cols());
        let mut out = vec![0.0f32; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = self.get2(i, j);
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// Element-wise product; shapes must match exactly.
    pub fn hadamard(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.dims != rhs.dims {
            return Err(Error::ShapeMismatch(format!(
                "hadamard: {:?} vs {:?}",
                self.dims, rhs.dims
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a * b)
            .collect();
        Tensor::new(self.dims.clone(), data)
    }

    /// Element-wise sum; shapes must match exactly.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.dims != rhs.dims {
            return Err(Error::ShapeMismatch(format!(
                "add: {:?} vs {:?}",
                self.dims, rhs.dims
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a + b)
            .collect();
        Tensor::new(self.dims.clone(), data)
    }

    /// Horizontal concatenation of two rank-2 tensors with equal row counts.
    pub fn concat_cols(&self, rhs: &Tensor) -> Result<Tensor> {
        self.require_rank2("concat_cols lhs")?;
        rhs.require_rank2("concat_cols rhs")?;
        if self.rows() != rhs.rows() {
            return Err(Error::ShapeMismatch(format!(
                "concat_cols: {} vs {} rows",
                self.rows(),
                rhs.rows()
            )));
        }
        let mut data = Vec::with_capacity(self.len() + rhs.len());
        for i in 0..self.rows() {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(rhs.row(i));
        }
        Tensor::new(vec![self.rows(), self.cols() + rhs.cols()], data)
    }

    /// Reinterpret as a new shape with the same number of elements.
    pub fn reshape(&self, dims: Vec<usize>) -> Result<Tensor> {
        Tensor::new(dims, self.data.clone())
    }
}

/// Normalization axis for [`softmax`]: `Rows` normalizes each row across its
/// columns, `Cols` each column down its rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Numerically stable softmax over a rank-2 tensor.
///
/// Each slice along the chosen axis sums to 1; the maximum is subtracted
/// before exponentiation, so an all-equal slice yields the uniform
/// distribution.
pub fn softmax(x: &Tensor, axis: Axis) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "softmax: expected rank 2, got dims {:?}",
            x.dims()
        )));
    }
    let (n, m) = (x.rows(), x.cols());
    let (slices, slice_len) = match axis {
        Axis::Rows => (n, m),
        Axis::Cols => (m, n),
    };
    if slice_len == 0 {
        return Err(Error::EmptyAxis);
    }
    let at = |s: usize, p: usize| match axis {
        Axis::Rows => x.get2(s, p),
        Axis::Cols => x.get2(p, s),
    };
    let mut out = vec![0.0f32; n * m];
    for s in 0..slices {
        let mut max = f32::NEG_INFINITY;
        for p in 0..slice_len {
            max = max.max(at(s, p));
        }
        let mut sum = 0.0f64;
        for p in 0..slice_len {
            sum += f64::from(at(s, p) - max).exp();
        }
        for p in 0..slice_len {
            let v = (f64::from(at(s, p) - max).exp() / sum) as f32;
            match axis {
                Axis::Rows => out[s * m + p] = v,
                Axis::Cols => out[p * m + s] = v,
            }
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Negative squared Euclidean distance between every row of `q` and every
/// row of `k`: entry (i, j) is `-||q_i - k_j||^2`.
pub fn pairwise_neg_l2(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    if q.rank() != 2 || k.rank() != 2 || q.cols() != k.cols() {
        return Err(Error::ShapeMismatch(format!(
            "pairwise_neg_l2: {:?} vs {:?}",
            q.dims(),
            k.dims()
        )));
    }
    let (n, m) = (q.rows(), k.rows());
    let mut out = vec![0.0f32; n * m];
    for i in 0..n {
        let qi = q.row(i);
        for j in 0..m {
            let kj = k.row(j);
            let mut acc = 0.0f64;
            for d in 0..q.cols() {
                let diff = f64::from(qi[d]) - f64::from(kj[d]);
                acc += diff * diff;
            }
            out[i * m + j] = (-acc) as f32;
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Scaled dot-product attention: `softmax(Q Kᵀ / √D) V`.
///
/// Every output row is a convex combination of the rows of `v`, so it lies
/// within their componentwise bounds.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    if q.rank() != 2 || k.rank() != 2 || v.rank() != 2 {
        return Err(Error::ShapeMismatch(
            "attention: rank-2 operands required".into(),
        ));
    }
    if q.cols() != k.cols() {
        return Err(Error::ShapeMismatch(format!(
            "attention: query width {} vs key width {}",
            q.cols(),
            k.cols()
        )));
    }
    if k.rows() != v.rows() {
        return Err(Error::ShapeMismatch(format!(
            "attention: {} keys vs {} values",
            k.rows(),
            v.rows()
        )));
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let (n, m) = (q.rows(), k.rows());
    let mut scores = vec![0.0f32; n * m];
    for i in 0..n {
        let qi = q.row(i);
        for j in 0..m {
            let kj = k.row(j);
            let mut acc = 0.0f64;
            for d in 0..q.cols() {
                acc += f64::from(qi[d]) * f64::from(kj[d]);
            }
            scores[i * m + j] = (acc * scale) as f32;
        }
    }
    let weights = softmax(&Tensor::new(vec![n, m], scores)?, Axis::Rows)?;
    weights.matmul(v)
}
