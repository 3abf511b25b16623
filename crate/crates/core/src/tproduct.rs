//! The t-product and the operations built on it.
//!
//! [`tprod`] is the fast path: mode-3 FFT, slice-wise complex matrix
//! products, inverse FFT. [`tprod_bruteforce`] materializes the
//! block-circulant matrix and serves as the oracle for it.

use crate::error::{Result, TcurError};
use crate::fft::{fft_mode3, ifft_mode3, DEFAULT_IMAG_TOL};
use crate::linalg::{cgemm_acc, complex_pinv, dgemm_acc};
use crate::tensor::{ComplexTensor3, Tensor3};

fn check_conformable(a: (usize, usize, usize), b: (usize, usize, usize)) -> Result<()> {
    if a.1 != b.0 || a.2 != b.2 {
        return Err(TcurError::DimMismatch(format!(
            "t-product of {a:?} and {b:?}: need a = (n1, n2, n3), b = (n2, l, n3)"
        )));
    }
    Ok(())
}

/// Slice-wise product of two Fourier-domain tensors.
pub fn slice_product(a: &ComplexTensor3, b: &ComplexTensor3) -> Result<ComplexTensor3> {
    let (da, db) = (a.dims(), b.dims());
    check_conformable(da, db)?;
    let mut out = ComplexTensor3::zeros((da.0, db.1, da.2));
    for k in 0..da.2 {
        cgemm_acc(a.slice(k), b.slice(k), out.slice_mut(k), da.0, da.1, db.1);
    }
    Ok(out)
}

/// t-product `a * b` of `a: n1 x n2 x n3` and `b: n2 x l x n3`.
pub fn tprod(a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
    check_conformable(a.dims(), b.dims())?;
    let c_hat = slice_product(&fft_mode3(a), &fft_mode3(b))?;
    ifft_mode3(&c_hat, DEFAULT_IMAG_TOL)
}

/// t-product evaluated as `fold(circ(a) * MatVec(b))` with the
/// `n1*n3 x n2*n3` block-circulant matrix built explicitly.
pub fn tprod_bruteforce(a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
    let (n1, n2, n3) = a.dims();
    let l = b.dims().1;
    check_conformable(a.dims(), b.dims())?;

    let rows = n1 * n3;
    let cols = n2 * n3;
    // block (p, q) of circ(a) is slice (p - q) mod n3
    let mut circ = vec![0.0; rows * cols];
    for p in 0..n3 {
        for q in 0..n3 {
            let src = a.slice((p + n3 - q) % n3);
            for i in 0..n1 {
                let dst = (p * n1 + i) * cols + q * n2;
                circ[dst..dst + n2].copy_from_slice(&src[i * n2..(i + 1) * n2]);
            }
        }
    }
    // MatVec(b) stacks the frontal slices vertically, which is exactly the
    // slice-major storage of b.
    let matvec = b.data();
    let mut prod = vec![0.0; rows * l];
    dgemm_acc(&circ, matvec, &mut prod, rows, cols, l);
    // fold: block row p becomes frontal slice p, again the storage order.
    Tensor3::from_vec((n1, l, n3), prod)
}

/// t-product Moore-Penrose pseudoinverse, computed slice-wise in the
/// Fourier domain.
pub fn tpinv(a: &Tensor3, sv_tol_factor: f64) -> Result<Tensor3> {
    let (n1, n2, n3) = a.dims();
    let a_hat = fft_mode3(a);
    let mut out = ComplexTensor3::zeros((n2, n1, n3));
    for k in 0..n3 {
        let p = complex_pinv(a_hat.slice(k), n1, n2, sv_tol_factor);
        out.slice_mut(k).copy_from_slice(&p);
    }
    ifft_mode3(&out, DEFAULT_IMAG_TOL)
}

/// Fourier-domain t-transpose: conjugate transpose of every slice.
pub fn conj_transpose_slices(a: &ComplexTensor3) -> ComplexTensor3 {
    let (n1, n2, n3) = a.dims();
    let mut out = ComplexTensor3::zeros((n2, n1, n3));
    for k in 0..n3 {
        let src = a.slice(k);
        let dst = out.slice_mut(k);
        for i in 0..n1 {
            for j in 0..n2 {
                dst[j * n1 + i] = src[i * n2 + j].conj();
            }
        }
    }
    out
}
