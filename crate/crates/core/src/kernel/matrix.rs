//! Row-major dense matrices and the three products the MLP needs.
//!
//! Every accumulation runs in a fixed order (bias first, then the inner index
//! ascending), so results do not depend on how the loops are blocked.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(format!("Matrix::from_rows row {i}"), cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// A column vector.
    pub fn column(values: &[f64]) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
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
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn hcat(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if let Some(bad) = parts.iter().find(|m| m.rows != rows) {
            return Err(Error::shape("Matrix::hcat rows", rows, bad.rows));
        }
        let cols: usize = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(i));
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Columns `start..end` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        let cols = end - start;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }
}

const LANES: usize = 8;

/// `out = x · w + bias` with `x: rows×inner`, `w: inner×cols`.
pub fn affine(x: &Matrix, w: &Matrix, bias: &[f64]) -> Matrix {
    debug_assert_eq!(x.cols, w.rows);
    debug_assert_eq!(w.cols, bias.len());
    let (rows, inner, cols) = (x.rows, x.cols, w.cols);
    let mut out = Matrix::zeros(rows, cols);
    let wd = &w.data;
    for i in 0..rows {
        let xr = &x.data[i * inner..(i + 1) * inner];
        let or = &mut out.data[i * cols..(i + 1) * cols];
        let mut j = 0;
        while j + LANES <= cols {
            let mut acc = [0.0f64; LANES];
            acc.copy_from_slice(&bias[j..j + LANES]);
            for (k, &xv) in xr.iter().enumerate() {
                let wr = &wd[k * cols + j..k * cols + j + LANES];
                for l in 0..LANES {
                    acc[l] += xv * wr[l];
                }
            }
            or[j..j + LANES].copy_from_slice(&acc);
            j += LANES;
        }
        for jj in j..cols {
            let mut acc = bias[jj];
            for (k, &xv) in xr.iter().enumerate() {
                acc += xv * wd[k * cols + jj];
            }
            or[jj] = acc;
        }
    }
    out
}

/// `xᵀ · g` accumulated into `dw` (`inner×cols`), and column sums of `g` into `db`.
pub fn weight_grads(x: &Matrix, g: &Matrix, dw: &mut Matrix, db: &mut [f64]) {
    debug_assert_eq!(x.rows, g.rows);
    let (rows, inner, cols) = (x.rows, x.cols, g.cols);
    for k in 0..inner {
        let dwr = &mut dw.data[k * cols..(k + 1) * cols];
        let mut j = 0;
        while j + LANES <= cols {
            let mut acc = [0.0f64; LANES];
            for i in 0..rows {
                let xv = x.data[i * inner + k];
                let gr = &g.data[i * cols + j..i * cols + j + LANES];
                for l in 0..LANES {
                    acc[l] += xv * gr[l];
                }
            }
            for l in 0..LANES {
                dwr[j + l] += acc[l];
            }
            j += LANES;
        }
        for jj in j..cols {
            let mut acc = 0.0;
            for i in 0..rows {
                acc += x.data[i * inner + k] * g.data[i * cols + jj];
            }
            dwr[jj] += acc;
        }
    }
    for (j, b) in db.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..rows {
            acc += g.data[i * cols + j];
        }
        *b += acc;
    }
}

/// `g · wᵀ` with `g: rows×cols`, `w: inner×cols`.
pub fn input_grads(g: &Matrix, w: &Matrix) -> Matrix {
    debug_assert_eq!(g.cols, w.cols);
    let (rows, inner, cols) = (g.rows, w.rows, w.cols);
    let mut out = Matrix::zeros(rows, inner);
    for i in 0..rows {
        let gr = &g.data[i * cols..(i + 1) * cols];
        for k in 0..inner {
            out.data[i * inner + k] = dot4(gr, &w.data[k * cols..(k + 1) * cols]);
        }
    }
    out
}

/// Dot product with four interleaved partial sums combined as `(s0+s1)+(s2+s3)`.
#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut s = [0.0f64; 4];
    let mut j = 0;
    while j + 4 <= n {
        for l in 0..4 {
            s[l] += a[j + l] * b[j + l];
        }
        j += 4;
    }
    let mut tail = 0.0;
    for jj in j..n {
        tail += a[jj] * b[jj];
    }
    ((s[0] + s[1]) + (s[2] + s[3])) + tail
}
