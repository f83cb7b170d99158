//! Fourier-domain operations on image planes: orthonormal 2-D FFT,
//! amplitude/phase decomposition and recomposition, and the amplitude-swap
//! experiment on image pairs.
//!
//! The transform is normalized by `1/sqrt(H*W)` in both directions, which
//! makes it unitary: Parseval's identity holds exactly and the inverse is
//! the conjugate transpose. Multi-channel images are transformed one
//! channel at a time.

use crate::error::{Error, Result};
use ndarray::{Array2, Array4};
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::cell::RefCell;

/// One image channel: a real H×W matrix.
pub type Plane = Array2<f64>;

/// A batch of images, laid out (batch, channel, height, width).
pub type ImageTensor = Array4<f64>;

/// Complex frequency representation of a plane, split into real and
/// imaginary parts of the same shape.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub real: Plane,
    pub imag: Plane,
}

/// Polar form of a spectrum: nonnegative amplitude and phase in (-pi, pi].
#[derive(Debug, Clone)]
pub struct PolarSpectrum {
    pub amplitude: Plane,
    pub phase: Plane,
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place orthonormal 2-D FFT over a row-major complex buffer.
///
/// Both directions scale by `1/sqrt(h*w)`, so forward followed by inverse
/// is the identity and energy is preserved. Shared by the plane-level API
/// here and the differentiable FFT ops.
pub(crate) fn fft2_buffer(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    debug_assert_eq!(buf.len(), h * w);
    let direction = if inverse {
        rustfft::FftDirection::Inverse
    } else {
        rustfft::FftDirection::Forward
    };
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let row_fft = planner.plan_fft(w, direction);
        let mut scratch = vec![Complex64::default(); row_fft.get_inplace_scratch_len()];
        for row in buf.chunks_exact_mut(w) {
            row_fft.process_with_scratch(row, &mut scratch);
        }
        // Columns via transpose so each FFT runs on contiguous data.
        let mut transposed = transpose(buf, h, w);
        let col_fft = planner.plan_fft(h, direction);
        scratch.resize(col_fft.get_inplace_scratch_len(), Complex64::default());
        for col in transposed.chunks_exact_mut(h) {
            col_fft.process_with_scratch(col, &mut scratch);
        }
        let back = transpose(&transposed, w, h);
        buf.copy_from_slice(&back);
    });
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

fn transpose(buf: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); buf.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = buf[r * cols + c];
        }
    }
    out
}

fn check_finite(plane: &Plane, what: &str) -> Result<()> {
    if plane.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} contains non-finite values")));
    }
    Ok(())
}

/// Forward orthonormal 2-D FFT of a real plane.
pub fn fft2(plane: &Plane) -> Result<Spectrum> {
    let (h, w) = plane.dim();
    if h == 0 || w == 0 {
        return Err(Error::InvalidInput("plane must be at least 1x1".into()));
    }
    check_finite(plane, "fft2 input")?;
    let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_buffer(&mut buf, h, w, false);
    let real = Array2::from_shape_fn((h, w), |(r, c)| buf[r * w + c].re);
    let imag = Array2::from_shape_fn((h, w), |(r, c)| buf[r * w + c].im);
    Ok(Spectrum { real, imag })
}

/// Inverse orthonormal 2-D FFT, returning the real plane.
///
/// The imaginary residue is checked against a tolerance relative to the
/// spectrum's peak magnitude before being discarded; a large residue means
/// the spectrum was not conjugate-symmetric and signals a pipeline bug.
pub fn ifft2(spectrum: &Spectrum) -> Result<Plane> {
    let (h, w) = spectrum.real.dim();
    if spectrum.imag.dim() != (h, w) {
        return Err(Error::InvalidInput(
            "spectrum real/imag parts differ in shape".into(),
        ));
    }
    check_finite(&spectrum.real, "ifft2 real part")?;
    check_finite(&spectrum.imag, "ifft2 imaginary part")?;
    let mut buf: Vec<Complex64> = spectrum
        .real
        .iter()
        .zip(spectrum.imag.iter())
        .map(|(&re, &im)| Complex64::new(re, im))
        .collect();
    let peak = buf.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
    fft2_buffer(&mut buf, h, w, true);
    let residue = buf.iter().map(|v| v.im.abs()).fold(0.0f64, f64::max);
    if residue > 1e-6 * peak.max(1.0) {
        return Err(Error::Numeric(format!(
            "ifft2 imaginary residue {residue:.3e} exceeds tolerance; spectrum is not conjugate-symmetric"
        )));
    }
    Ok(Array2::from_shape_fn((h, w), |(r, c)| buf[r * w + c].re))
}

/// Split a spectrum into amplitude and phase.
///
/// Amplitude is `sqrt(R^2 + I^2)`; phase is the four-quadrant arctangent
/// of (I, R). A bin with R = I = 0 gets phase 0 by convention.
pub fn decompose(spectrum: &Spectrum) -> PolarSpectrum {
    let amplitude = ndarray::Zip::from(&spectrum.real)
        .and(&spectrum.imag)
        .map_collect(|&re, &im| (re * re + im * im).sqrt());
    let phase = ndarray::Zip::from(&spectrum.real)
        .and(&spectrum.imag)
        .map_collect(|&re, &im| if re == 0.0 && im == 0.0 { 0.0 } else { im.atan2(re) });
    PolarSpectrum { amplitude, phase }
}

/// Rebuild a spectrum from amplitude and phase: R = A cos P, I = A sin P.
pub fn recompose(polar: &PolarSpectrum) -> Result<Spectrum> {
    if polar.amplitude.dim() != polar.phase.dim() {
        return Err(Error::InvalidInput(
            "amplitude and phase differ in shape".into(),
        ));
    }
    if polar.amplitude.iter().any(|&a| a < 0.0) {
        return Err(Error::InvalidInput("amplitude must be nonnegative".into()));
    }
    let real = ndarray::Zip::from(&polar.amplitude)
        .and(&polar.phase)
        .map_collect(|&a, &p| a * p.cos());
    let imag = ndarray::Zip::from(&polar.amplitude)
        .and(&polar.phase)
        .map_collect(|&a, &p| a * p.sin());
    Ok(Spectrum { real, imag })
}

/// Swap the amplitude components of two equally-shaped image tensors,
/// channel by channel, keeping each image's own phase.
///
/// Returns `(amplitude of b + phase of a, amplitude of a + phase of b)`.
/// Applying the swap twice recovers the original pair. Outputs are not
/// clamped; reconstructed values can leave [0, 1] slightly.
pub fn swap_amplitude(a: &ImageTensor, b: &ImageTensor) -> Result<(ImageTensor, ImageTensor)> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "swap_amplitude shape mismatch: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (n, c, h, w) = a.dim();
    let mut out_a = Array4::zeros((n, c, h, w));
    let mut out_b = Array4::zeros((n, c, h, w));
    for i in 0..n {
        for ch in 0..c {
            let plane_a = a.index_axis(ndarray::Axis(0), i).index_axis(ndarray::Axis(0), ch).to_owned();
            let plane_b = b.index_axis(ndarray::Axis(0), i).index_axis(ndarray::Axis(0), ch).to_owned();
            let polar_a = decompose(&fft2(&plane_a)?);
            let polar_b = decompose(&fft2(&plane_b)?);
            let swapped_a = ifft2(&recompose(&PolarSpectrum {
                amplitude: polar_b.amplitude.clone(),
                phase: polar_a.phase.clone(),
            })?)?;
            let swapped_b = ifft2(&recompose(&PolarSpectrum {
                amplitude: polar_a.amplitude,
                phase: polar_b.phase,
            })?)?;
            out_a
                .index_axis_mut(ndarray::Axis(0), i)
                .index_axis_mut(ndarray::Axis(0), ch)
                .assign(&swapped_a);
            out_b
                .index_axis_mut(ndarray::Axis(0), i)
                .index_axis_mut(ndarray::Axis(0), ch)
                .assign(&swapped_b);
        }
    }
    Ok((out_a, out_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(h: usize, w: usize, seed: u64) -> Plane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((h, w), |_| rng.gen_range(0.0..1.0))
    }

    fn max_abs_diff(a: &Plane, b: &Plane) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_plane_is_dc_only() {
        let c = 0.37;
        let (h, w) = (6, 9);
        let spec = fft2(&Array2::from_elem((h, w), c)).unwrap();
        let expected_dc = ((h * w) as f64).sqrt() * c;
        assert!((spec.real[[0, 0]] - expected_dc).abs() < 1e-12);
        for ((r, cc), v) in spec.real.indexed_iter() {
            if (r, cc) != (0, 0) {
                assert!(v.abs() < 1e-12, "nonzero real bin at ({r},{cc})");
            }
        }
        assert!(spec.imag.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let (h, w) = (4, 8);
        let mut plane = Array2::zeros((h, w));
        plane[[0, 0]] = 1.0;
        let spec = fft2(&plane).unwrap();
        let expected = 1.0 / ((h * w) as f64).sqrt();
        let polar = decompose(&spec);
        for &a in polar.amplitude.iter() {
            assert!((a - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_direct_summation() {
        // Oracle: sum both sides directly and compare.
        let plane = random_plane(8, 8, 7);
        let spec = fft2(&plane).unwrap();
        let spatial_energy: f64 = plane.iter().map(|v| v * v).sum();
        let freq_energy: f64 = spec
            .real
            .iter()
            .zip(spec.imag.iter())
            .map(|(re, im)| re * re + im * im)
            .sum();
        assert!((spatial_energy - freq_energy).abs() < 1e-10);
    }

    #[test]
    fn parseval_holds_up_to_128() {
        for (seed, (h, w)) in [(1, (5, 7)), (2, (16, 16)), (3, (33, 64)), (4, (128, 128))] {
            let plane = random_plane(h, w, seed);
            let spec = fft2(&plane).unwrap();
            let spatial: f64 = plane.iter().map(|v| v * v).sum();
            let freq: f64 = spec
                .real
                .iter()
                .zip(spec.imag.iter())
                .map(|(re, im)| re * re + im * im)
                .sum();
            assert!(
                ((spatial - freq) / spatial).abs() < 1e-8,
                "parseval failed at {h}x{w}"
            );
        }
    }

    #[test]
    fn roundtrip_identity() {
        let plane = random_plane(16, 16, 11);
        let back = ifft2(&fft2(&plane).unwrap()).unwrap();
        assert!(max_abs_diff(&plane, &back) < 1e-6);
    }

    #[test]
    fn zero_spectrum_gives_zero_plane() {
        let spec = Spectrum {
            real: Array2::zeros((5, 5)),
            imag: Array2::zeros((5, 5)),
        };
        let plane = ifft2(&spec).unwrap();
        assert!(plane.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dc_only_spectrum_gives_constant_plane() {
        let c = 0.81;
        let (h, w) = (8, 4);
        let mut real = Array2::zeros((h, w));
        real[[0, 0]] = ((h * w) as f64).sqrt() * c;
        let plane = ifft2(&Spectrum { real, imag: Array2::zeros((h, w)) }).unwrap();
        for &v in plane.iter() {
            assert!((v - c).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut plane = random_plane(4, 4, 3);
        plane[[1, 2]] = f64::NAN;
        assert!(matches!(fft2(&plane), Err(Error::InvalidInput(_))));
        let spec = Spectrum {
            real: Array2::from_elem((3, 3), f64::INFINITY),
            imag: Array2::zeros((3, 3)),
        };
        assert!(matches!(ifft2(&spec), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn decompose_three_four_five() {
        let spec = Spectrum {
            real: Array2::from_elem((1, 1), 3.0),
            imag: Array2::from_elem((1, 1), 4.0),
        };
        let polar = decompose(&spec);
        assert!((polar.amplitude[[0, 0]] - 5.0).abs() < 1e-12);
        assert!((polar.phase[[0, 0]] - 4.0_f64.atan2(3.0)).abs() < 1e-12);
    }

    #[test]
    fn decompose_zero_bin_convention() {
        let spec = Spectrum {
            real: Array2::zeros((2, 2)),
            imag: Array2::zeros((2, 2)),
        };
        let polar = decompose(&spec);
        assert!(polar.amplitude.iter().all(|&a| a == 0.0));
        assert!(polar.phase.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn polar_roundtrip_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let amplitude = Array2::from_shape_fn((6, 6), |_| rng.gen_range(0.1..2.0));
        let phase = Array2::from_shape_fn((6, 6), |_| rng.gen_range(-3.0..3.0));
        let spec = recompose(&PolarSpectrum { amplitude: amplitude.clone(), phase: phase.clone() }).unwrap();
        let polar = decompose(&spec);
        assert!(max_abs_diff(&polar.amplitude, &amplitude) < 1e-10);
        assert!(max_abs_diff(&polar.phase, &phase) < 1e-10);
    }

    #[test]
    fn recompose_inverse_of_decompose_example() {
        let polar = PolarSpectrum {
            amplitude: Array2::from_elem((1, 1), 5.0),
            phase: Array2::from_elem((1, 1), 4.0_f64.atan2(3.0)),
        };
        let spec = recompose(&polar).unwrap();
        assert!((spec.real[[0, 0]] - 3.0).abs() < 1e-10);
        assert!((spec.imag[[0, 0]] - 4.0).abs() < 1e-10);
    }

    #[test]
    fn recompose_zero_amplitude_and_unit_circle() {
        let zero = recompose(&PolarSpectrum {
            amplitude: Array2::zeros((2, 2)),
            phase: Array2::from_elem((2, 2), 1.3),
        })
        .unwrap();
        assert!(zero.real.iter().all(|&v| v == 0.0));
        assert!(zero.imag.iter().all(|&v| v == 0.0));

        let pi = recompose(&PolarSpectrum {
            amplitude: Array2::from_elem((1, 1), 1.0),
            phase: Array2::from_elem((1, 1), std::f64::consts::PI),
        })
        .unwrap();
        assert!((pi.real[[0, 0]] + 1.0).abs() < 1e-12);
        assert!(pi.imag[[0, 0]].abs() < 1e-12);
    }

    #[test]
    fn recompose_rejects_negative_amplitude() {
        let polar = PolarSpectrum {
            amplitude: Array2::from_elem((2, 2), -1.0),
            phase: Array2::zeros((2, 2)),
        };
        assert!(matches!(recompose(&polar), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn amplitude_is_sign_invariant() {
        let plane = random_plane(12, 10, 21);
        let amp_pos = decompose(&fft2(&plane).unwrap()).amplitude;
        let amp_neg = decompose(&fft2(&plane.mapv(|v| -v)).unwrap()).amplitude;
        assert!(max_abs_diff(&amp_pos, &amp_neg) < 1e-8);
    }

    fn random_tensor(n: usize, c: usize, h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn((n, c, h, w), |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn swap_with_self_is_identity() {
        let a = random_tensor(1, 3, 8, 8, 31);
        let (x, y) = swap_amplitude(&a, &a).unwrap();
        let diff_x = (&x - &a).iter().map(|v| v.abs()).fold(0.0, f64::max);
        let diff_y = (&y - &a).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(diff_x < 1e-6 && diff_y < 1e-6);
    }

    #[test]
    fn swap_is_an_involution() {
        let a = random_tensor(1, 3, 16, 12, 41);
        let b = random_tensor(1, 3, 16, 12, 42);
        let (x, y) = swap_amplitude(&a, &b).unwrap();
        let (a2, b2) = swap_amplitude(&x, &y).unwrap();
        let diff_a = (&a2 - &a).iter().map(|v| v.abs()).fold(0.0, f64::max);
        let diff_b = (&b2 - &b).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(diff_a < 1e-5 && diff_b < 1e-5);
    }

    #[test]
    fn swap_constant_images_swaps_constants() {
        let a = Array4::from_elem((1, 3, 8, 8), 0.2);
        let b = Array4::from_elem((1, 3, 8, 8), 0.7);
        let (x, y) = swap_amplitude(&a, &b).unwrap();
        for &v in x.iter() {
            assert!((v - 0.7).abs() < 1e-10);
        }
        for &v in y.iter() {
            assert!((v - 0.2).abs() < 1e-10);
        }
    }

    #[test]
    fn swap_rejects_shape_mismatch() {
        let a = random_tensor(1, 3, 8, 8, 1);
        let b = random_tensor(1, 3, 8, 4, 2);
        assert!(matches!(swap_amplitude(&a, &b), Err(Error::InvalidInput(_))));
    }
}
