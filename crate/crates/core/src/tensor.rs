//! Dense third-order tensors.
//!
//! Storage is slice-major: frontal slice `k` occupies a contiguous block of
//! `n1 * n2` values, row-major within the slice. Entry `(i, j, k)` lives at
//! `k * n1 * n2 + i * n2 + j`. The checkpoint format depends on this layout.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, TcurError};

/// Shape `(n1, n2, n3)` of a third-order tensor.
pub type Dims = (usize, usize, usize);

fn check_dims(dims: Dims) -> Result<()> {
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(TcurError::DimMismatch(format!(
            "all dimensions must be positive, got {dims:?}"
        )));
    }
    Ok(())
}

#[inline]
fn offset(dims: Dims, i: usize, j: usize, k: usize) -> usize {
    debug_assert!(i < dims.0 && j < dims.1 && k < dims.2);
    k * dims.0 * dims.1 + i * dims.1 + j
}

/// Dense real third-order tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: Dims,
    data: Vec<f64>,
}

impl Tensor3 {
    /// All-zeros tensor. Panics if any dimension is zero.
    pub fn zeros(dims: Dims) -> Self {
        check_dims(dims).expect("Tensor3::zeros");
        Self {
            dims,
            data: vec![0.0; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        if data.len() != dims.0 * dims.1 * dims.2 {
            return Err(TcurError::DimMismatch(format!(
                "data length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TcurError::NonFinite("tensor data"));
        }
        Ok(Self { dims, data })
    }

    /// Builds a tensor from frontal slices given as row-major matrices.
    pub fn from_slices(n1: usize, n2: usize, slices: &[Vec<f64>]) -> Result<Self> {
        let data: Vec<f64> = slices.iter().flatten().copied().collect();
        if slices.iter().any(|s| s.len() != n1 * n2) {
            return Err(TcurError::DimMismatch(format!(
                "every slice must hold {n1}x{n2} values"
            )));
        }
        Self::from_vec((n1, n2, slices.len()), data)
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(dims);
        for k in 0..dims.2 {
            for i in 0..dims.0 {
                for j in 0..dims.1 {
                    t.data[offset(dims, i, j, k)] = f(i, j, k);
                }
            }
        }
        t
    }

    /// Tensor with i.i.d. standard normal entries.
    pub fn random_normal<R: Rng + ?Sized>(dims: Dims, rng: &mut R) -> Self {
        check_dims(dims).expect("Tensor3::random_normal");
        let data = (0..dims.0 * dims.1 * dims.2)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[offset(self.dims, i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let o = offset(self.dims, i, j, k);
        self.data[o] = value;
    }

    /// Frontal slice `k` as a row-major `n1 x n2` block.
    pub fn slice(&self, k: usize) -> &[f64] {
        let s = self.dims.0 * self.dims.1;
        &self.data[k * s..(k + 1) * s]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        let s = self.dims.0 * self.dims.1;
        &mut self.data[k * s..(k + 1) * s]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.require_same_dims(other)?;
        Ok(Self {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.require_same_dims(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Frobenius inner product.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.require_same_dims(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn fro_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Mode-2 selection `self(:, cols, :)`.
    pub fn select_cols(&self, cols: &[usize]) -> Self {
        self.select(&(0..self.dims.0).collect::<Vec<_>>(), cols)
    }

    /// Mode-1 selection `self(rows, :, :)`.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        self.select(rows, &(0..self.dims.1).collect::<Vec<_>>())
    }

    /// Sub-tensor `self(rows, cols, :)`.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn((rows.len(), cols.len(), self.dims.2), |i, j, k| {
            self.get(rows[i], cols[j], k)
        })
    }

    pub(crate) fn require_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(TcurError::DimMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}

/// Frobenius norm over all entries.
pub fn fro_norm(a: &Tensor3) -> f64 {
    a.fro_norm()
}

/// `||a - b||_F / ||b||_F`.
pub fn rel_error(a: &Tensor3, b: &Tensor3) -> Result<f64> {
    a.require_same_dims(b)?;
    let denom = b.fro_norm();
    if denom == 0.0 {
        return Err(TcurError::ZeroReference);
    }
    let num = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

/// Identity tensor: first frontal slice is `I_n`, the rest are zero.
pub fn tidentity(n: usize, n3: usize) -> Tensor3 {
    let mut t = Tensor3::zeros((n, n, n3));
    for i in 0..n {
        t.set(i, i, 0, 1.0);
    }
    t
}

/// t-transpose: transpose every frontal slice and reverse the order of
/// slices `2..n3` (1-based). Adjoint of the t-product.
pub fn ttranspose(a: &Tensor3) -> Tensor3 {
    let (n1, n2, n3) = a.dims();
    Tensor3::from_fn((n2, n1, n3), |i, j, k| {
        let src = if k == 0 { 0 } else { n3 - k };
        a.get(j, i, src)
    })
}

/// Complex third-order tensor, the mode-3 Fourier image of a [`Tensor3`].
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor3 {
    dims: Dims,
    data: Vec<Complex64>,
}

impl ComplexTensor3 {
    pub fn zeros(dims: Dims) -> Self {
        check_dims(dims).expect("ComplexTensor3::zeros");
        Self {
            dims,
            data: vec![Complex64::new(0.0, 0.0); dims.0 * dims.1 * dims.2],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<Complex64>) -> Result<Self> {
        check_dims(dims)?;
        if data.len() != dims.0 * dims.1 * dims.2 {
            return Err(TcurError::DimMismatch(format!(
                "data length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> Complex64 {
        self.data[offset(self.dims, i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: Complex64) {
        let o = offset(self.dims, i, j, k);
        self.data[o] = value;
    }

    pub fn slice(&self, k: usize) -> &[Complex64] {
        let s = self.dims.0 * self.dims.1;
        &self.data[k * s..(k + 1) * s]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [Complex64] {
        let s = self.dims.0 * self.dims.1;
        &mut self.data[k * s..(k + 1) * s]
    }

    /// Sub-tensor `self(rows, cols, :)`.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let dims = (rows.len(), cols.len(), self.dims.2);
        let mut out = Self::zeros(dims);
        for k in 0..dims.2 {
            for (i, &ri) in rows.iter().enumerate() {
                for (j, &cj) in cols.iter().enumerate() {
                    out.set(i, j, k, self.get(ri, cj, k));
                }
            }
        }
        out
    }

    /// Largest `|slice_k - conj(slice_{(n3-k) mod n3})|` over all entries.
    /// Zero (up to rounding) for the spectrum of a real tensor.
    pub fn conj_symmetry_residual(&self) -> f64 {
        let n3 = self.dims.2;
        let mut worst: f64 = 0.0;
        for k in 0..n3 {
            let mirror = (n3 - k) % n3;
            for (a, b) in self.slice(k).iter().zip(self.slice(mirror)) {
                worst = worst.max((a - b.conj()).norm());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_is_slice_major_row_major() {
        let t = Tensor3::from_vec((2, 3, 2), (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(t.get(0, 0, 0), 0.0);
        assert_eq!(t.get(0, 2, 0), 2.0);
        assert_eq!(t.get(1, 0, 0), 3.0);
        assert_eq!(t.get(0, 0, 1), 6.0);
        assert_eq!(t.slice(1), &[6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn from_vec_rejects_bad_input() {
        assert!(matches!(
            Tensor3::from_vec((2, 2, 2), vec![0.0; 7]),
            Err(TcurError::DimMismatch(_))
        ));
        assert!(matches!(
            Tensor3::from_vec((0, 2, 2), vec![]),
            Err(TcurError::DimMismatch(_))
        ));
        assert!(matches!(
            Tensor3::from_vec((1, 1, 1), vec![f64::NAN]),
            Err(TcurError::NonFinite(_))
        ));
    }

    #[test]
    fn norms() {
        assert_eq!(fro_norm(&Tensor3::zeros((2, 3, 4))), 0.0);
        let ones = Tensor3::from_vec((2, 2, 2), vec![1.0; 8]).unwrap();
        assert!((fro_norm(&ones) - 8f64.sqrt()).abs() < 1e-15);
        assert_eq!(rel_error(&ones, &ones).unwrap(), 0.0);
        assert!(matches!(
            rel_error(&ones, &Tensor3::zeros((2, 2, 2))),
            Err(TcurError::ZeroReference)
        ));
        assert!(matches!(
            rel_error(&ones, &Tensor3::zeros((2, 2, 1))),
            Err(TcurError::DimMismatch(_))
        ));
    }

    #[test]
    fn transpose_single_slice_is_matrix_transpose() {
        let a = Tensor3::from_vec((2, 3, 1), vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let at = ttranspose(&a);
        assert_eq!(at.dims(), (3, 2, 1));
        assert_eq!(at.data(), &[1., 4., 2., 5., 3., 6.]);
    }

    #[test]
    fn transpose_reverses_trailing_slices() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor3::random_normal((2, 3, 4), &mut rng);
        let at = ttranspose(&a);
        assert_eq!(at.get(1, 0, 0), a.get(0, 1, 0));
        assert_eq!(at.get(1, 0, 1), a.get(0, 1, 3));
        assert_eq!(at.get(1, 0, 3), a.get(0, 1, 1));
        assert_eq!(ttranspose(&at), a);
    }

    #[test]
    fn identity_layout() {
        let i = tidentity(3, 2);
        assert_eq!(i.slice(0), &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        assert!(i.slice(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn selection() {
        let t = Tensor3::from_fn((3, 4, 2), |i, j, k| (100 * k + 10 * i + j) as f64);
        let s = t.select(&[0, 2], &[1, 3]);
        assert_eq!(s.dims(), (2, 2, 2));
        assert_eq!(s.get(1, 1, 1), 123.0);
        assert_eq!(t.select_cols(&[2]).get(2, 0, 0), 22.0);
        assert_eq!(t.select_rows(&[1]).get(0, 3, 1), 113.0);
    }
}
