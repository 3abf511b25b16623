//! Tensor CUR decomposition with Fourier-domain fiber-norm scores, and the
//! per-matrix CUR used by the matrix baseline.
//!
//! Columns are ranked by the summed 2-norms of their Fourier-domain column
//! fibers. Rows are then ranked the same way, restricted to the chosen
//! columns. Both selections keep the `r` largest scores, ties going to the
//! smaller index.

use crate::error::{Result, TcurError};
use crate::fft::{fft_mode3, ifft_mode3, DEFAULT_IMAG_TOL};
use crate::linalg::{Matrix, DEFAULT_SV_TOL};
use crate::tensor::{ComplexTensor3, Tensor3};
use crate::tproduct::{tpinv, tprod};

/// Normalized importance scores, one per candidate column or row.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if total == 0.0 {
            return Err(TcurError::ZeroTensor);
        }
        Ok(Self(weights.into_iter().map(|w| w / total).collect()))
    }
}

impl From<Vec<f64>> for ScoreVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Strictly increasing list of 0-based indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    /// Validates that `indices` is strictly increasing and below `bound`.
    pub fn new(indices: Vec<usize>, bound: usize) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TcurError::InvalidArgument(format!(
                "index set {indices:?} is not strictly increasing"
            )));
        }
        if let Some(&last) = indices.last() {
            if last >= bound {
                return Err(TcurError::InvalidArgument(format!(
                    "index {last} out of bounds for length {bound}"
                )));
            }
        }
        Ok(Self(indices))
    }

    pub fn full(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn fiber_norm(t: &ComplexTensor3, rows: &[usize], cols: &[usize], k: usize) -> f64 {
    let mut s = 0.0;
    for &i in rows {
        for &j in cols {
            s += t.get(i, j, k).norm_sqr();
        }
    }
    s.sqrt()
}

/// Column scores `alpha_j`: summed norms of the column fibers `w_hat(:, j, k)`
/// over all `k`, normalized to sum to one.
pub fn column_scores(w_hat: &ComplexTensor3) -> Result<ScoreVector> {
    let (n1, n2, n3) = w_hat.dims();
    let all_rows: Vec<usize> = (0..n1).collect();
    let weights = (0..n2)
        .map(|j| (0..n3).map(|k| fiber_norm(w_hat, &all_rows, &[j], k)).sum())
        .collect();
    ScoreVector::from_weights(weights)
}

/// Row scores `beta_i` over the row fibers restricted to the selected
/// columns, `w_hat(i, J, k)`.
pub fn row_scores(w_hat: &ComplexTensor3, cols: &IndexSet) -> Result<ScoreVector> {
    let (n1, n2, n3) = w_hat.dims();
    if cols.is_empty() || cols.indices().iter().any(|&j| j >= n2) {
        return Err(TcurError::InvalidArgument(format!(
            "column set {:?} invalid for {n2} columns",
            cols.indices()
        )));
    }
    let weights = (0..n1)
        .map(|i| (0..n3).map(|k| fiber_norm(w_hat, &[i], cols.indices(), k)).sum())
        .collect();
    ScoreVector::from_weights(weights)
}

/// Indices of the `r` largest scores, ties broken towards the smaller
/// index, returned in ascending order.
pub fn select_top_r(scores: &ScoreVector, r: usize) -> Result<IndexSet> {
    let n = scores.len();
    if r == 0 || r > n {
        return Err(TcurError::RankOutOfRange { rank: r, max: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let v = scores.values();
    // stable sort keeps the smaller index first among equal scores
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    let mut chosen = order[..r].to_vec();
    chosen.sort_unstable();
    Ok(IndexSet(chosen))
}

/// Factors of a tensor CUR decomposition `W ~ C * pinv(U) * R`.
#[derive(Clone, Debug, PartialEq)]
pub struct TcurFactors {
    column_slab: Tensor3,
    intersection: Tensor3,
    row_slab: Tensor3,
    rows: IndexSet,
    cols: IndexSet,
}

impl TcurFactors {
    /// Reassembles factors (e.g. from a checkpoint), checking shapes.
    pub fn from_parts(
        column_slab: Tensor3,
        intersection: Tensor3,
        row_slab: Tensor3,
        rows: IndexSet,
        cols: IndexSet,
    ) -> Result<Self> {
        let r = rows.len();
        let (n1, rc, n3) = column_slab.dims();
        let (rr, n2, n3r) = row_slab.dims();
        if cols.len() != r
            || rc != r
            || rr != r
            || n3r != n3
            || intersection.dims() != (r, r, n3)
            || rows.indices().iter().any(|&i| i >= n1)
            || cols.indices().iter().any(|&j| j >= n2)
        {
            return Err(TcurError::DimMismatch(format!(
                "inconsistent CUR factors: C {:?}, U {:?}, R {:?}, |I| = {}, |J| = {}",
                column_slab.dims(),
                intersection.dims(),
                row_slab.dims(),
                rows.len(),
                cols.len()
            )));
        }
        Ok(Self {
            column_slab,
            intersection,
            row_slab,
            rows,
            cols,
        })
    }

    /// `C = W(:, J, :)`, shape `n1 x r x n3`.
    pub fn column_slab(&self) -> &Tensor3 {
        &self.column_slab
    }

    /// `U = W(I, J, :)`, shape `r x r x n3`.
    pub fn intersection(&self) -> &Tensor3 {
        &self.intersection
    }

    /// `R = W(I, :, :)`, shape `r x n2 x n3`.
    pub fn row_slab(&self) -> &Tensor3 {
        &self.row_slab
    }

    /// Selected row indices `I`.
    pub fn rows(&self) -> &IndexSet {
        &self.rows
    }

    /// Selected column indices `J`.
    pub fn cols(&self) -> &IndexSet {
        &self.cols
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    /// Shape of the decomposed tensor.
    pub fn target_dims(&self) -> (usize, usize, usize) {
        let (n1, _, n3) = self.column_slab.dims();
        (n1, self.row_slab.dims().1, n3)
    }
}

pub(crate) fn check_rank(r: usize, n1: usize, n2: usize) -> Result<()> {
    let max = n1.min(n2);
    if r == 0 || r > max {
        return Err(TcurError::RankOutOfRange { rank: r, max });
    }
    Ok(())
}

/// Tensor CUR decomposition of `w` with `r` sampled columns and rows.
///
/// `sv_tol_factor` is not used by the sampling itself; it is checked here so
/// that a bad cutoff fails at decomposition time rather than at
/// reconstruction.
pub fn tcur(w: &Tensor3, r: usize, sv_tol_factor: f64) -> Result<TcurFactors> {
    let (n1, n2, _) = w.dims();
    check_rank(r, n1, n2)?;
    if !(sv_tol_factor.is_finite() && sv_tol_factor >= 0.0) {
        return Err(TcurError::InvalidArgument(format!(
            "singular value tolerance factor must be finite and >= 0, got {sv_tol_factor}"
        )));
    }
    let w_hat = fft_mode3(w);
    let cols = select_top_r(&column_scores(&w_hat)?, r)?;
    let rows = select_top_r(&row_scores(&w_hat, &cols)?, r)?;

    let all_rows: Vec<usize> = (0..n1).collect();
    let all_cols: Vec<usize> = (0..n2).collect();
    let c_hat = w_hat.select(&all_rows, cols.indices());
    let u_hat = w_hat.select(rows.indices(), cols.indices());
    let r_hat = w_hat.select(rows.indices(), &all_cols);

    Ok(TcurFactors {
        column_slab: ifft_mode3(&c_hat, DEFAULT_IMAG_TOL)?,
        intersection: ifft_mode3(&u_hat, DEFAULT_IMAG_TOL)?,
        row_slab: ifft_mode3(&r_hat, DEFAULT_IMAG_TOL)?,
        rows,
        cols,
    })
}

/// `C * pinv(U) * R` with the default singular value cutoff.
pub fn reconstruct(f: &TcurFactors) -> Result<Tensor3> {
    reconstruct_with_tol(f, DEFAULT_SV_TOL)
}

pub fn reconstruct_with_tol(f: &TcurFactors, sv_tol_factor: f64) -> Result<Tensor3> {
    let u_pinv = tpinv(&f.intersection, sv_tol_factor)?;
    tprod(&f.column_slab, &tprod(&u_pinv, &f.row_slab)?)
}

/// Matrix CUR factors for the matrix baseline: frozen `C` and `R`, a zero
/// learnable core, and the pseudoinverse of the sampled intersection.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixCur {
    pub c: Matrix,
    pub u0: Matrix,
    pub r: Matrix,
    pub intersection_pinv: Matrix,
    pub rows: IndexSet,
    pub cols: IndexSet,
}

impl MatrixCur {
    /// `C * pinv(W(I, J)) * R`.
    pub fn reconstruct(&self) -> Result<Matrix> {
        self.c.matmul(&self.intersection_pinv)?.matmul(&self.r)
    }
}

/// Deterministic norm-ranked CUR of a single matrix with `c = r` sampled
/// columns and rows.
pub fn matrix_cur(w: &Matrix, r: usize, sv_tol_factor: f64) -> Result<MatrixCur> {
    check_rank(r, w.rows(), w.cols())?;
    let t = w.to_tensor();
    let w_hat = fft_mode3(&t);
    let cols = select_top_r(&column_scores(&w_hat)?, r)?;
    let rows = select_top_r(&row_scores(&w_hat, &cols)?, r)?;
    let all_rows: Vec<usize> = (0..w.rows()).collect();
    let all_cols: Vec<usize> = (0..w.cols()).collect();
    Ok(MatrixCur {
        c: w.select(&all_rows, cols.indices()),
        u0: Matrix::zeros(r, r),
        r: w.select(rows.indices(), &all_cols),
        intersection_pinv: w.select(rows.indices(), cols.indices()).pinv(sv_tol_factor),
        rows,
        cols,
    })
}
