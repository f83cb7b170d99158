//! Differentiable spectral ops. Spectra are packed along the channel axis:
//! an input of C channels yields 2C channels, the first C real parts and
//! the last C imaginary parts.
//!
//! The transform is unitary (orthonormal scaling both ways), so the
//! adjoint of the forward FFT is the inverse FFT. That gives closed-form
//! backward passes: the cotangent of `fft2` is the real part of the
//! inverse transform of the packed cotangent, and vice versa for `ifft2`.

use super::{BackCtx, Graph, Tensor, Var};
use crate::fourier::fft2_buffer;
use ndarray::s;
use num_complex::Complex64;

/// Transform each channel plane; returns (real planes, imag planes).
fn fft_planes(x: &Tensor, inverse: bool) -> (Tensor, Tensor) {
    let (n, c, h, w) = x.dim();
    let mut real = Tensor::zeros((n, c, h, w));
    let mut imag = Tensor::zeros((n, c, h, w));
    let mut buf = vec![Complex64::default(); h * w];
    for ni in 0..n {
        for ci in 0..c {
            let plane = x.slice(s![ni, ci, .., ..]);
            for (i, v) in plane.iter().enumerate() {
                buf[i] = Complex64::new(*v, 0.0);
            }
            fft2_buffer(&mut buf, h, w, inverse);
            let mut re = real.slice_mut(s![ni, ci, .., ..]);
            let mut im = imag.slice_mut(s![ni, ci, .., ..]);
            for y in 0..h {
                for xw in 0..w {
                    re[[y, xw]] = buf[y * w + xw].re;
                    im[[y, xw]] = buf[y * w + xw].im;
                }
            }
        }
    }
    (real, imag)
}

/// Transform packed complex channels; returns the packed result.
fn fft_packed(packed: &Tensor, inverse: bool) -> Tensor {
    let (n, c2, h, w) = packed.dim();
    let c = c2 / 2;
    let mut out = Tensor::zeros((n, c2, h, w));
    let mut buf = vec![Complex64::default(); h * w];
    for ni in 0..n {
        for ci in 0..c {
            let re = packed.slice(s![ni, ci, .., ..]);
            let im = packed.slice(s![ni, c + ci, .., ..]);
            for y in 0..h {
                for xw in 0..w {
                    buf[y * w + xw] = Complex64::new(re[[y, xw]], im[[y, xw]]);
                }
            }
            fft2_buffer(&mut buf, h, w, inverse);
            let mut ore = out.slice_mut(s![ni, ci, .., ..]);
            for y in 0..h {
                for xw in 0..w {
                    ore[[y, xw]] = buf[y * w + xw].re;
                }
            }
            let mut oim = out.slice_mut(s![ni, c + ci, .., ..]);
            for y in 0..h {
                for xw in 0..w {
                    oim[[y, xw]] = buf[y * w + xw].im;
                }
            }
        }
    }
    out
}

fn pack(real: Tensor, imag: Tensor) -> Tensor {
    let (n, c, h, w) = real.dim();
    let mut out = Tensor::zeros((n, 2 * c, h, w));
    out.slice_mut(s![.., ..c, .., ..]).assign(&real);
    out.slice_mut(s![.., c.., .., ..]).assign(&imag);
    out
}

impl Graph {
    /// Orthonormal per-channel 2-D FFT of a real tensor, packed as 2C
    /// channels.
    pub fn fft2(&mut self, x: Var) -> Var {
        let (real, imag) = fft_planes(self.value(x), false);
        let value = pack(real, imag);
        self.push(
            value,
            vec![x],
            false,
            Some(Box::new(|ctx: &BackCtx| {
                // Unitary transform: adjoint = inverse; keep the real part.
                let transformed = fft_packed(ctx.grad, true);
                let c = transformed.dim().1 / 2;
                vec![transformed.slice(s![.., ..c, .., ..]).to_owned()]
            })),
        )
    }

    /// Inverse orthonormal FFT of a packed spectrum, keeping the real part.
    ///
    /// Inside the network the spectrum is conjugate-symmetric by
    /// construction, so the discarded imaginary part carries only rounding
    /// noise.
    pub fn ifft2_real(&mut self, spectrum: Var) -> Var {
        let (_, c2, _, _) = self.shape(spectrum);
        assert_eq!(c2 % 2, 0, "packed spectrum needs an even channel count");
        let transformed = fft_packed(self.value(spectrum), true);
        let c = c2 / 2;
        let value = transformed.slice(s![.., ..c, .., ..]).to_owned();
        self.push(
            value,
            vec![spectrum],
            false,
            Some(Box::new(|ctx: &BackCtx| {
                let (gn, gc, gh, gw) = ctx.grad.dim();
                let mut packed = Tensor::zeros((gn, 2 * gc, gh, gw));
                packed.slice_mut(s![.., ..gc, .., ..]).assign(ctx.grad);
                vec![fft_packed(&packed, false)]
            })),
        )
    }

    /// Per-bin magnitude of a packed spectrum: C output channels from 2C
    /// packed ones. Gradient at a zero-magnitude bin is defined as 0.
    pub fn amplitude(&mut self, spectrum: Var) -> Var {
        let (_, c2, _, _) = self.shape(spectrum);
        assert_eq!(c2 % 2, 0);
        let c = c2 / 2;
        let v = self.value(spectrum);
        let re = v.slice(s![.., ..c, .., ..]);
        let im = v.slice(s![.., c.., .., ..]);
        let value = ndarray::Zip::from(&re)
            .and(&im)
            .map_collect(|&r, &i| (r * r + i * i).sqrt());
        self.push(
            value,
            vec![spectrum],
            false,
            Some(Box::new(move |ctx: &BackCtx| {
                let v = ctx.parents[0];
                let (n, _, h, w) = v.dim();
                let mut grad = Tensor::zeros(v.raw_dim());
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..h {
                            for x in 0..w {
                                let a = ctx.out[[ni, ci, y, x]];
                                if a == 0.0 {
                                    continue;
                                }
                                let g = ctx.grad[[ni, ci, y, x]] / a;
                                grad[[ni, ci, y, x]] = g * v[[ni, ci, y, x]];
                                grad[[ni, c + ci, y, x]] = g * v[[ni, c + ci, y, x]];
                            }
                        }
                    }
                }
                vec![grad]
            })),
        )
    }

    /// Per-bin phase of a packed spectrum (four-quadrant arctangent).
    /// A bin with R = I = 0 gets phase 0 and zero gradient.
    pub fn phase(&mut self, spectrum: Var) -> Var {
        let (_, c2, _, _) = self.shape(spectrum);
        assert_eq!(c2 % 2, 0);
        let c = c2 / 2;
        let v = self.value(spectrum);
        let re = v.slice(s![.., ..c, .., ..]);
        let im = v.slice(s![.., c.., .., ..]);
        let value = ndarray::Zip::from(&re)
            .and(&im)
            .map_collect(|&r, &i| if r == 0.0 && i == 0.0 { 0.0 } else { i.atan2(r) });
        self.push(
            value,
            vec![spectrum],
            false,
            Some(Box::new(move |ctx: &BackCtx| {
                let v = ctx.parents[0];
                let (n, _, h, w) = v.dim();
                let mut grad = Tensor::zeros(v.raw_dim());
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..h {
                            for x in 0..w {
                                let r = v[[ni, ci, y, x]];
                                let i = v[[ni, c + ci, y, x]];
                                let denom = r * r + i * i;
                                if denom == 0.0 {
                                    continue;
                                }
                                let g = ctx.grad[[ni, ci, y, x]] / denom;
                                grad[[ni, ci, y, x]] = -g * i;
                                grad[[ni, c + ci, y, x]] = g * r;
                            }
                        }
                    }
                }
                vec![grad]
            })),
        )
    }

    /// Rebuild a packed spectrum from amplitude and phase:
    /// R = A cos P, I = A sin P.
    pub fn polar_to_complex(&mut self, amplitude: Var, phase: Var) -> Var {
        assert_eq!(self.shape(amplitude), self.shape(phase));
        let a = self.value(amplitude);
        let p = self.value(phase);
        let real = ndarray::Zip::from(a).and(p).map_collect(|&a, &p| a * p.cos());
        let imag = ndarray::Zip::from(a).and(p).map_collect(|&a, &p| a * p.sin());
        let value = pack(real, imag);
        self.push(
            value,
            vec![amplitude, phase],
            false,
            Some(Box::new(|ctx: &BackCtx| {
                let a = ctx.parents[0];
                let p = ctx.parents[1];
                let (n, c, h, w) = a.dim();
                let mut grad_a = Tensor::zeros(a.raw_dim());
                let mut grad_p = Tensor::zeros(p.raw_dim());
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..h {
                            for x in 0..w {
                                let gr = ctx.grad[[ni, ci, y, x]];
                                let gi = ctx.grad[[ni, c + ci, y, x]];
                                let (sin, cos) = p[[ni, ci, y, x]].sin_cos();
                                let av = a[[ni, ci, y, x]];
                                grad_a[[ni, ci, y, x]] = gr * cos + gi * sin;
                                grad_p[[ni, ci, y, x]] = av * (gi * cos - gr * sin);
                            }
                        }
                    }
                }
                vec![grad_a, grad_p]
            })),
        )
    }
}
