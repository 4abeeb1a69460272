//! Dense row-major tensor and the elementwise / matrix kernels the model needs.
//!
//! Everything is 64-bit: the toolkit trades speed for the full f64 mantissa so
//! that Jacobian, SVD, and Lipschitz estimates are not polluted by rounding.

use crate::error::{Error, Result};

/// Variance guard added inside the layer-norm square root.
pub const LN_EPS: f64 = 1e-5;

/// Dense row-major tensor of `f64` values.
///
/// Invariant: `shape.iter().product() == data.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::dim(
                "from_vec",
                format!("shape {:?} wants {} values, got {}", shape, len, data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Row-major matrix from a list of equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::dim("from_rows", "ragged rows".to_string()));
        }
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Tensor::from_vec(&[r, c], data)
    }

    pub fn identity(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Number of rows; the tensor must be a matrix.
    pub fn rows(&self) -> usize {
        assert_eq!(self.rank(), 2, "rows() on rank-{} tensor", self.rank());
        self.shape[0]
    }

    /// Number of columns; the tensor must be a matrix.
    pub fn cols(&self) -> usize {
        assert_eq!(self.rank(), 2, "cols() on rank-{} tensor", self.rank());
        self.shape[1]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::dim(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Matrix product with a fixed left-to-right summation order over the
    /// inner dimension, so results are bitwise reproducible.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::dim("matmul", "operands must be matrices".to_string()));
        }
        let (p, q) = (self.shape[0], self.shape[1]);
        let (q2, r) = (other.shape[0], other.shape[1]);
        if q != q2 {
            return Err(Error::dim(
                "matmul",
                format!("inner dimensions disagree: {}x{} * {}x{}", p, q, q2, r),
            ));
        }
        let mut out = vec![0.0; p * r];
        for i in 0..p {
            let a_row = &self.data[i * q..(i + 1) * q];
            let o_row = &mut out[i * r..(i + 1) * r];
            for (k, &a_ik) in a_row.iter().enumerate() {
                let b_row = &other.data[k * r..(k + 1) * r];
                for (o, &b_kj) in o_row.iter_mut().zip(b_row.iter()) {
                    *o += a_ik * b_kj;
                }
            }
        }
        Tensor::from_vec(&[p, r], out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::dim("transpose", "operand must be a matrix".to_string()));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::from_vec(&[c, r], out)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::dim(
                "add",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::dim(
                "sub",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, c: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    /// `self + c * other`, elementwise.
    pub fn add_scaled(&self, other: &Tensor, c: f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::dim(
                "add_scaled",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + c * b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn relu(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        }
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::dim("softmax_rows", "operand must be a matrix".to_string()));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        if c == 0 {
            return Err(Error::dim("softmax_rows", "empty rows".to_string()));
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out[i * c..(i + 1) * c];
            let mut sum = 0.0;
            for (oj, &xj) in o.iter_mut().zip(row.iter()) {
                *oj = (xj - max).exp();
                sum += *oj;
            }
            for oj in o.iter_mut() {
                *oj /= sum;
            }
        }
        Tensor::from_vec(&[r, c], out)
    }

    /// Layer normalization over the trailing dimension with population
    /// variance and the `LN_EPS` guard; `gamma`/`beta` are 1-D of that width.
    ///
    /// Accepts a vector (one token) or a matrix (one token per row).
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
        let d = *self.shape.last().ok_or_else(|| {
            Error::dim("layer_norm", "rank-0 operand".to_string())
        })?;
        if self.rank() > 2 {
            return Err(Error::dim("layer_norm", "operand must be rank 1 or 2".to_string()));
        }
        if d < 2 {
            return Err(Error::dim("layer_norm", "feature dimension must be >= 2".to_string()));
        }
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "gamma {:?} / beta {:?} must both be [{}]",
                    gamma.shape(),
                    beta.shape(),
                    d
                ),
            ));
        }
        let n_rows = self.data.len() / d;
        let mut out = vec![0.0; self.data.len()];
        for i in 0..n_rows {
            let x = &self.data[i * d..(i + 1) * d];
            let (mu, var) = mean_var(x);
            let sigma = (var + LN_EPS).sqrt();
            let o = &mut out[i * d..(i + 1) * d];
            for j in 0..d {
                o[j] = gamma.data[j] * (x[j] - mu) / sigma + beta.data[j];
            }
        }
        Tensor::from_vec(&self.shape, out)
    }

    /// Mean over rows: `[r, c] -> [c]`.
    pub fn mean_rows(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::dim("mean_rows", "operand must be a matrix".to_string()));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        if r == 0 {
            return Err(Error::dim("mean_rows", "no rows".to_string()));
        }
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += self.data[i * c + j];
            }
        }
        let inv = 1.0 / r as f64;
        for o in &mut out {
            *o *= inv;
        }
        Tensor::from_vec(&[c], out)
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::dim("slice_rows", "operand must be a matrix".to_string()));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        if start > end || end > r {
            return Err(Error::dim(
                "slice_rows",
                format!("range {}..{} out of {} rows", start, end, r),
            ));
        }
        Tensor::from_vec(&[end - start, c], self.data[start * c..end * c].to_vec())
    }

    /// Gather: `out[i] = self[idx[i]]` with `out` viewed in `out_shape`.
    pub fn gather(&self, idx: &[usize], out_shape: &[usize]) -> Result<Tensor> {
        let len: usize = out_shape.iter().product();
        if len != idx.len() {
            return Err(Error::dim(
                "gather",
                format!("index list {} vs shape {:?}", idx.len(), out_shape),
            ));
        }
        let mut out = Vec::with_capacity(len);
        for &j in idx {
            let v = *self.data.get(j).ok_or_else(|| {
                Error::dim("gather", format!("index {} out of {}", j, self.data.len()))
            })?;
            out.push(v);
        }
        Tensor::from_vec(out_shape, out)
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::dim(
                "dot",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean_abs(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|v| v.abs()).sum::<f64>() / self.data.len() as f64
    }

    /// Unit-normalized copy; errors on (near-)zero vectors.
    pub fn normalized(&self) -> Result<Tensor> {
        let n = self.norm_l2();
        if n < 1e-300 {
            return Err(Error::DegenerateInput("cannot normalize zero vector".to_string()));
        }
        Ok(self.scale(1.0 / n))
    }

    /// Clamp every entry into `[lo, hi]`; returns the number of clamped entries.
    pub fn clamp(&self, lo: f64, hi: f64) -> (Tensor, usize) {
        let mut clamped = 0;
        let data = self
            .data
            .iter()
            .map(|&v| {
                if v < lo {
                    clamped += 1;
                    lo
                } else if v > hi {
                    clamped += 1;
                    hi
                } else {
                    v
                }
            })
            .collect();
        (
            Tensor {
                shape: self.shape.clone(),
                data,
            },
            clamped,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Mean and population variance (1/n) of a slice.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, var)
}

/// Mean absolute difference between same-shaped tensors.
pub fn mean_abs_diff(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            "mean_abs_diff",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / a.len() as f64)
}

/// Max absolute difference between same-shaped tensors.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            "max_abs_diff",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs())))
}
