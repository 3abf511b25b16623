//! Small dense matrix kernels used slice-by-slice by the t-product routines.

use nalgebra::{ComplexField, DMatrix};
use num_complex::Complex64;

use crate::error::{Result, TcurError};
use crate::tensor::Tensor3;

/// Default singular-value cutoff factor for pseudoinverses: singular values
/// below `factor * max(rows, cols) * sigma_max` are treated as zero.
pub const DEFAULT_SV_TOL: f64 = f64::EPSILON;

/// `out += a * b` for row-major complex blocks, `a: m x p`, `b: p x n`.
pub(crate) fn cgemm_acc(a: &[Complex64], b: &[Complex64], out: &mut [Complex64], m: usize, p: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for l in 0..p {
            let ail = a[i * p + l];
            if ail.re == 0.0 && ail.im == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (o, &blj) in row.iter_mut().zip(brow) {
                *o += ail * blj;
            }
        }
    }
}

/// `out += a * b` for row-major real blocks.
pub(crate) fn dgemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, p: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for l in 0..p {
            let ail = a[i * p + l];
            if ail == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (o, &blj) in row.iter_mut().zip(brow) {
                *o += ail * blj;
            }
        }
    }
}

/// Moore-Penrose pseudoinverse through the SVD, generic over real and
/// complex scalars.
fn pinv_generic<T: ComplexField<RealField = f64>>(m: DMatrix<T>, sv_tol_factor: f64) -> DMatrix<T> {
    let (rows, cols) = m.shape();
    let svd = m.svd(true, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = sv_tol_factor * rows.max(cols) as f64 * sigma_max;
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut out = DMatrix::<T>::zeros(cols, rows);
    for (s_idx, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        let inv = T::from_real(1.0 / s);
        // out += v_s * (1/s) * u_s^H
        let v_col = v_t.row(s_idx).adjoint();
        let u_row = u.column(s_idx).adjoint();
        out += (v_col * inv) * u_row;
    }
    out
}

/// Pseudoinverse of a row-major complex `rows x cols` block; returns the
/// row-major `cols x rows` result.
pub fn complex_pinv(block: &[Complex64], rows: usize, cols: usize, sv_tol_factor: f64) -> Vec<Complex64> {
    let m = DMatrix::from_row_slice(rows, cols, block);
    let p = pinv_generic(m, sv_tol_factor);
    row_major(&p)
}

fn row_major<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>) -> Vec<T> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Dense real row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(TcurError::DimMismatch(format!(
                "{} values cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TcurError::NonFinite("matrix data"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(TcurError::DimMismatch(format!(
                "{}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        dgemm_acc(&self.data, &other.data, &mut out.data, self.rows, self.cols, other.cols);
        Ok(out)
    }

    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            for &j in cols {
                data.push(self.get(i, j));
            }
        }
        Matrix {
            rows: rows.len(),
            cols: cols.len(),
            data,
        }
    }

    pub fn pinv(&self, sv_tol_factor: f64) -> Matrix {
        let m = DMatrix::from_row_slice(self.rows, self.cols, &self.data);
        let p = pinv_generic(m, sv_tol_factor);
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data: row_major(&p),
        }
    }

    pub fn fro_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Views the matrix as an `rows x cols x 1` tensor.
    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3::from_vec((self.rows, self.cols, 1), self.data.clone()).expect("finite")
    }

    /// Frontal slice `k` of a tensor.
    pub fn from_slice(t: &Tensor3, k: usize) -> Matrix {
        let (n1, n2, _) = t.dims();
        Matrix {
            rows: n1,
            cols: n2,
            data: t.slice(k).to_vec(),
        }
    }
}
