use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} tensor needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a zero-column matrix has no data anyway
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &Tensor2) -> Result<Tensor2> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Tensor2::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor2, f: impl Fn(f64, f64) -> f64) -> Result<Tensor2> {
        self.expect_shape(other.shape())?;
        Ok(Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor2) -> Result<Tensor2> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, c: f64) -> Tensor2 {
        self.map(|v| v * c)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor2) -> Result<()> {
        self.expect_shape(other.shape())?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn expect_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::Shape(format!(
                "expected {}x{}, got {}x{}",
                shape.0, shape.1, self.rows, self.cols
            )));
        }
        Ok(())
    }

    /// Same data viewed with a new shape (row-major order preserved).
    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Tensor2> {
        Tensor2::from_vec(rows, cols, self.data.clone())
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor2> {
        if start > end || end > self.rows {
            return Err(Error::Shape(format!("row slice {start}..{end} of {} rows", self.rows)));
        }
        Ok(Tensor2 {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        })
    }

    /// Vertical concatenation.
    pub fn concat_rows(parts: &[&Tensor2]) -> Result<Tensor2> {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::Shape(format!("concat of {} and {} columns", cols, p.cols)));
            }
            rows += p.rows;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor2 { rows, cols, data })
    }

    /// Each row divided by its Euclidean norm.
    pub fn normalize_rows(&self) -> Result<Tensor2> {
        let mut out = self.clone();
        for (i, row) in out.data.chunks_exact_mut(self.cols.max(1)).enumerate() {
            let norm = l2_norm(row);
            if norm == 0.0 {
                return Err(Error::Numeric(format!("row {i} has zero norm")));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(out)
    }
}

impl Default for Tensor2 {
    fn default() -> Self {
        Tensor2::zeros(0, 0)
    }
}

/// Boolean matrix used to restrict a row softmax to a support set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} mask needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Adjacency mask with self-loops from an undirected edge list.
    pub fn adjacency(nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut data = vec![false; nodes * nodes];
        for i in 0..nodes {
            data[i * nodes + i] = true;
        }
        for &(a, b) in edges {
            if a >= nodes || b >= nodes {
                return Err(Error::Shape(format!("edge ({a},{b}) out of range for {nodes} nodes")));
            }
            data[a * nodes + b] = true;
            data[b * nodes + a] = true;
        }
        Ok(Self {
            rows: nodes,
            cols: nodes,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Copy of `v` scaled to unit length. Errors on the zero vector.
pub fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let n = l2_norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Numeric("cannot normalize a zero or non-finite vector".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Row-wise softmax with optional support mask.
///
/// Masked entries are exactly zero. A row with no unmasked entry is an error.
pub fn softmax_rows(logits: &Tensor2, mask: Option<&Mask>) -> Result<Tensor2> {
    if let Some(m) = mask {
        if m.shape() != logits.shape() {
            return Err(Error::Shape(format!(
                "mask {:?} does not match logits {:?}",
                m.shape(),
                logits.shape()
            )));
        }
    }
    let (rows, cols) = logits.shape();
    let mut out = Tensor2::zeros(rows, cols);
    for i in 0..rows {
        let keep = |j: usize| mask.is_none_or(|m| m.get(i, j));
        let max = (0..cols)
            .filter(|&j| keep(j))
            .map(|j| logits.get(i, j))
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::Numeric(format!("softmax row {i} is fully masked")));
        }
        let mut total = 0.0;
        for j in (0..cols).filter(|&j| keep(j)) {
            let e = (logits.get(i, j) - max).exp();
            out.set(i, j, e);
            total += e;
        }
        out.row_mut(i).iter_mut().for_each(|v| *v /= total);
    }
    Ok(out)
}

/// Elementwise `x` for `x >= 0`, `slope * x` otherwise.
pub fn leaky_relu(x: &Tensor2, slope: f64) -> Tensor2 {
    x.map(|v| if v >= 0.0 { v } else { slope * v })
}
