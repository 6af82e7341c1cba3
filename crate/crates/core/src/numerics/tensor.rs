use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense row-major `f64` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) && !data.is_empty() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} has a zero extent but {} values",
                data.len()
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Ok(Self {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[1],
        }
    }

    fn require_matrix(&self, what: &str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "{what}: expected a matrix, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let c = self.cols();
        self.data[row * c + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(self, op: &str) -> Result<Self> {
        if self.all_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(op.to_string()))
        }
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.require_matrix("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data: out,
        })
    }

    /// Adds `v` to every row.
    pub fn add_row_vector(&self, v: &[f64]) -> Result<Tensor> {
        let (r, c) = self.require_matrix("add_row_vector")?;
        if v.len() != c {
            return Err(Error::Dimension(format!(
                "row vector of length {} applied to {c} columns",
                v.len()
            )));
        }
        let mut out = self.data.clone();
        for i in 0..r {
            for (o, b) in out[i * c..(i + 1) * c].iter_mut().zip(v) {
                *o += b;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// Per-column sums of a matrix.
    pub fn column_sums(&self) -> Result<Vec<f64>> {
        let (r, c) = self.require_matrix("column_sums")?;
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, x) in out.iter_mut().zip(&self.data[i * c..(i + 1) * c]) {
                *o += x;
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Gathers the given rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(0);
        }
        shape[0] = indices.len();
        Tensor { shape, data }
    }

    /// Gathers the given columns of a matrix.
    pub fn select_cols(&self, indices: &[usize]) -> Result<Tensor> {
        let (r, c) = self.require_matrix("select_cols")?;
        if let Some(&bad) = indices.iter().find(|&&j| j >= c) {
            return Err(Error::Dimension(format!("column {bad} out of range {c}")));
        }
        let mut data = Vec::with_capacity(r * indices.len());
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            data.extend(indices.iter().map(|&j| row[j]));
        }
        Ok(Tensor {
            shape: vec![r, indices.len()],
            data,
        })
    }

    /// Stacks matrices with equal column counts.
    pub fn vstack(parts: &[&Tensor]) -> Result<Tensor> {
        let cols = parts.first().map_or(0, |t| t.cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.rows() > 0 && p.cols() != cols {
                return Err(Error::Dimension(format!(
                    "vstack: {} columns vs {cols}",
                    p.cols()
                )));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            shape: vec![rows, cols],
            data,
        })
    }
}

/// Standard matrix product with fixed ascending-k accumulation per output cell.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.require_matrix("matmul lhs")?;
    let (k2, n) = b.require_matrix("matmul rhs")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner extents {m}x{k} · {k2}x{n}"
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// Per-feature mean and biased variance over the batch (row) axis.
///
/// Uses Welford's single-pass update.
pub fn batch_stats(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, f) = x.require_matrix("batch_stats")?;
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut mean = vec![0.0; f];
    let mut m2 = vec![0.0; f];
    for i in 0..n {
        let count = (i + 1) as f64;
        for j in 0..f {
            let v = x.data[i * f + j];
            let delta = v - mean[j];
            mean[j] += delta / count;
            m2[j] += delta * (v - mean[j]);
        }
    }
    let var = m2.iter().map(|s| (s / n as f64).max(0.0)).collect();
    Ok((Tensor::vector(mean), Tensor::vector(var)))
}
