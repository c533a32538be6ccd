use crate::error::{Error, Result};

/// Floor applied inside every logarithm so that `0 * log 0` terms stay finite.
pub const LOG_FLOOR: f64 = 1e-12;

/// Row-major dense matrix of `f64`.
///
/// Every array is rank two; vectors are stored as `1 x n` rows and scalars as
/// `1 x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl DenseArray {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "new",
                left: vec![rows, cols],
                right: vec![data.len()],
            });
        }
        Ok(Self {
            shape: [rows, cols],
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            shape: [rows, cols],
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut out = Self::zeros(n, n);
        for i in 0..n {
            out.data[i * n + i] = 1.0;
        }
        out
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: [1, 1],
            data: vec![value],
        }
    }

    /// A `1 x n` row vector.
    pub fn row(values: Vec<f64>) -> Self {
        Self {
            shape: [1, values.len()],
            data: values,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::ShapeMismatch {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        let cols = self.shape[1];
        self.data[r * cols + c] = value;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_slice_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.shape[1];
        &mut self.data[r * c..(r + 1) * c]
    }

    /// Value of a `1 x 1` array.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::NotScalar(self.shape.to_vec()))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the listed rows into a new array.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(self.row_slice(i));
        }
        Self {
            shape: [indices.len(), c],
            data,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                left: self.shape.to_vec(),
                right: other.shape.to_vec(),
            })
        }
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_shape(other, op)?;
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let [n, k] = self.shape;
        let [k2, m] = other.shape;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape.to_vec(),
                right: other.shape.to_vec(),
            });
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Self {
            shape: [n, m],
            data: out,
        })
    }

    pub fn transpose(&self) -> Self {
        let [n, m] = self.shape;
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = self.data[i * m + j];
            }
        }
        Self {
            shape: [m, n],
            data: out,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn tanh(&self) -> Self {
        self.map(f64::tanh)
    }

    pub fn exp(&self) -> Self {
        self.map(f64::exp)
    }

    /// Natural log of `max(x, LOG_FLOOR)`.
    pub fn log(&self) -> Self {
        self.map(|v| v.max(LOG_FLOOR).ln())
    }

    /// Row-wise softmax with max-logit subtraction.
    pub fn softmax_rows(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.rows() {
            let row = out.row_slice_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        out
    }

    /// Sums each row: `n x m -> n x 1`.
    pub fn sum_rows(&self) -> Self {
        let data = (0..self.rows())
            .map(|r| self.row_slice(r).iter().sum())
            .collect();
        Self {
            shape: [self.rows(), 1],
            data,
        }
    }

    /// Sums each column: `n x m -> 1 x m`.
    pub fn sum_cols(&self) -> Self {
        let mut data = vec![0.0; self.cols()];
        for r in 0..self.rows() {
            for (acc, &v) in data.iter_mut().zip(self.row_slice(r)) {
                *acc += v;
            }
        }
        Self {
            shape: [1, self.cols()],
            data,
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Repeats a `1 x m` row `n` times.
    pub fn broadcast_rows(&self, n: usize) -> Result<Self> {
        if self.rows() != 1 {
            return Err(Error::ShapeMismatch {
                op: "broadcast_rows",
                left: self.shape.to_vec(),
                right: vec![1, self.cols()],
            });
        }
        let mut data = Vec::with_capacity(n * self.cols());
        for _ in 0..n {
            data.extend_from_slice(&self.data);
        }
        Ok(Self {
            shape: [n, self.cols()],
            data,
        })
    }

    /// Repeats an `n x 1` column `m` times.
    pub fn broadcast_cols(&self, m: usize) -> Result<Self> {
        if self.cols() != 1 {
            return Err(Error::ShapeMismatch {
                op: "broadcast_cols",
                left: self.shape.to_vec(),
                right: vec![self.rows(), 1],
            });
        }
        let mut data = Vec::with_capacity(self.rows() * m);
        for &v in &self.data {
            data.extend(std::iter::repeat_n(v, m));
        }
        Ok(Self {
            shape: [self.rows(), m],
            data,
        })
    }

    /// Product of the entries selected by a non-zero `mask`, per row: `n x m -> n x 1`.
    pub fn masked_row_prod(&self, mask: &Self) -> Result<Self> {
        self.same_shape(mask, "masked_row_prod")?;
        let data = (0..self.rows())
            .map(|r| {
                self.row_slice(r)
                    .iter()
                    .zip(mask.row_slice(r))
                    .filter(|(_, &m)| m != 0.0)
                    .map(|(&v, _)| v)
                    .product()
            })
            .collect();
        Ok(Self {
            shape: [self.rows(), 1],
            data,
        })
    }

    /// Index of the largest entry in each row; ties go to the lower index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows())
            .map(|r| {
                let row = self.row_slice(r);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}
