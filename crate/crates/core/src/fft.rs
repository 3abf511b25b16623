//! Mode-3 (tube-wise) discrete Fourier transforms.
//!
//! Convention: the forward transform is unnormalized, the inverse carries the
//! `1/n3` factor. Tube `(i, j, :)` of the output is the DFT of tube `(i, j, :)`
//! of the input.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, TcurError};
use crate::tensor::{ComplexTensor3, Tensor3};

/// Default relative bound on the imaginary residual accepted by
/// [`ifft_mode3`].
pub const DEFAULT_IMAG_TOL: f64 = 1e-8;

/// Runs `fft` over every tube of a slice-major buffer, in place.
fn transform_tubes(data: &mut [Complex64], tube_count: usize, n3: usize, fft: &dyn Fft<f64>) {
    // Gather tubes into a contiguous tube-major scratch so one batched call
    // covers all of them.
    let mut tubes = vec![Complex64::new(0.0, 0.0); tube_count * n3];
    for k in 0..n3 {
        for t in 0..tube_count {
            tubes[t * n3 + k] = data[k * tube_count + t];
        }
    }
    fft.process(&mut tubes);
    for k in 0..n3 {
        for t in 0..tube_count {
            data[k * tube_count + t] = tubes[t * n3 + k];
        }
    }
}

/// Forward DFT along the third mode.
pub fn fft_mode3(t: &Tensor3) -> ComplexTensor3 {
    let dims = t.dims();
    let mut data: Vec<Complex64> = t.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if dims.2 > 1 {
        let fft = FftPlanner::new().plan_fft_forward(dims.2);
        transform_tubes(&mut data, dims.0 * dims.1, dims.2, fft.as_ref());
    }
    ComplexTensor3::from_vec(dims, data).expect("dims preserved")
}

/// Inverse DFT along the third mode, returning the real part.
///
/// The imaginary parts must satisfy `max|imag| <= tol * (1 + max|real|)`,
/// otherwise the input was not the spectrum of a real tensor and
/// [`TcurError::ResidualImaginary`] is returned.
pub fn ifft_mode3(t: &ComplexTensor3, tol: f64) -> Result<Tensor3> {
    let dims = t.dims();
    let n3 = dims.2;
    let mut data = t.data().to_vec();
    if n3 > 1 {
        let fft = FftPlanner::new().plan_fft_inverse(n3);
        transform_tubes(&mut data, dims.0 * dims.1, n3, fft.as_ref());
        let scale = 1.0 / n3 as f64;
        for v in &mut data {
            *v *= scale;
        }
    }
    let max_imag = data.iter().fold(0.0f64, |m, v| m.max(v.im.abs()));
    let max_real = data.iter().fold(0.0f64, |m, v| m.max(v.re.abs()));
    let bound = tol * (1.0 + max_real);
    if max_imag.is_nan() || max_imag > bound {
        return Err(TcurError::ResidualImaginary {
            residual: max_imag,
            bound,
        });
    }
    Tensor3::from_vec(dims, data.into_iter().map(|v| v.re).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rel_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn zeros_stay_zero() {
        let z = fft_mode3(&Tensor3::zeros((2, 2, 3)));
        assert!(z.data().iter().all(|v| v.norm() == 0.0));
        let back = ifft_mode3(&z, DEFAULT_IMAG_TOL).unwrap();
        assert!(back.is_zero());
    }

    #[test]
    fn length_one_is_identity() {
        let t = Tensor3::from_vec((2, 2, 1), vec![1.0, -2.0, 3.5, 0.25]).unwrap();
        let f = fft_mode3(&t);
        for (a, b) in f.data().iter().zip(t.data()) {
            assert_eq!(*a, c(*b, 0.0));
        }
    }

    #[test]
    fn two_point_dft() {
        let t = Tensor3::from_vec((1, 2, 2), vec![1.0, 1.0, 1.0, -1.0]).unwrap();
        let f = fft_mode3(&t);
        // tube (0,0,:) = [1, 1], tube (0,1,:) = [1, -1]
        assert_eq!(f.get(0, 0, 0), c(2.0, 0.0));
        assert_eq!(f.get(0, 0, 1), c(0.0, 0.0));
        assert_eq!(f.get(0, 1, 0), c(0.0, 0.0));
        assert_eq!(f.get(0, 1, 1), c(2.0, 0.0));
    }

    #[test]
    fn round_trip_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = Tensor3::random_normal((4, 3, 5), &mut rng);
        let f = fft_mode3(&t);
        assert!(f.conj_symmetry_residual() <= 1e-12);
        let back = ifft_mode3(&f, DEFAULT_IMAG_TOL).unwrap();
        assert!(rel_error(&back, &t).unwrap() <= 1e-12);
    }

    #[test]
    fn asymmetric_spectrum_is_rejected() {
        let mut s = ComplexTensor3::zeros((1, 1, 2));
        s.set(0, 0, 1, c(0.0, 1.0));
        assert!(matches!(
            ifft_mode3(&s, DEFAULT_IMAG_TOL),
            Err(TcurError::ResidualImaginary { .. })
        ));
    }
}
