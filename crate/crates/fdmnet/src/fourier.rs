//! 2-D discrete Fourier transforms over image tensors, stored half-width.
//!
//! Conventions, fixed across the whole crate:
//! - Unitary normalization: both directions carry 1/sqrt(H*W), so the
//!   transform preserves the l2 norm and forward/inverse are exact mirrors.
//! - A real H x W x C image transforms to H x (floor(W/2)+1) x C complex
//!   bins; the missing columns are conjugate mirrors of stored ones.
//! - Phase is the two-argument arctangent atan2(im, re); a bin with exactly
//!   zero amplitude has phase 0 by convention.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft;
use crate::tensor::Tensor;

/// Inverse transforms reject inputs whose implied imaginary residue reaches
/// this limit; residue below it is discarded as rounding noise (typically
/// < 1e-8 for spectra of real images).
pub const RESIDUE_LIMIT: f64 = 1e-6;

/// Half-width complex spectrum of a real H x W x C image.
/// Layout: `[h][w_half][c][re, im]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpectrum {
    h: usize,
    w_full: usize,
    c: usize,
    data: Vec<f64>,
}

impl HalfSpectrum {
    pub fn new(h: usize, w_full: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        let w_half = w_full / 2 + 1;
        let expect = h * w_half * c * 2;
        if data.len() != expect {
            return Err(Error::shape(format!(
                "spectrum for {h}x{w_full}x{c} expects {expect} values, got {}",
                data.len()
            )));
        }
        Ok(HalfSpectrum { h, w_full, c, data })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w_full(&self) -> usize {
        self.w_full
    }

    pub fn w_half(&self) -> usize {
        self.w_full / 2 + 1
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn offset(&self, u: usize, v: usize, ch: usize) -> usize {
        ((u * self.w_half() + v) * self.c + ch) * 2
    }

    pub fn at(&self, u: usize, v: usize, ch: usize) -> Complex64 {
        let o = self.offset(u, v, ch);
        Complex64::new(self.data[o], self.data[o + 1])
    }

    pub fn set(&mut self, u: usize, v: usize, ch: usize, value: Complex64) {
        let o = self.offset(u, v, ch);
        self.data[o] = value.re;
        self.data[o + 1] = value.im;
    }

    /// Reinterprets the spectrum as an `[h, w_half, c, 2]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.h, self.w_half(), self.c, 2],
            self.data.clone(),
        )
        .expect("spectrum layout is consistent by construction")
    }

    /// Inverse of [`HalfSpectrum::to_tensor`]; `w_full` resolves the ambiguity
    /// between even and odd source widths.
    pub fn from_tensor(t: &Tensor, w_full: usize) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || s[3] != 2 {
            return Err(Error::shape(format!(
                "spectrum tensor must be [h, w_half, c, 2], got {s:?}"
            )));
        }
        if s[1] != w_full / 2 + 1 {
            return Err(Error::shape(format!(
                "spectrum width {} does not match full width {w_full}",
                s[1]
            )));
        }
        HalfSpectrum::new(s[0], w_full, s[2], t.data().to_vec())
    }
}

/// Amplitude and phase views of a spectrum, each `[h, w_half, c]`.
#[derive(Debug, Clone)]
pub struct AmplitudePhase {
    pub amplitude: Tensor,
    pub phase: Tensor,
}

/// Number of full-plane bins a stored column represents: the two
/// self-conjugate columns (v = 0 and, for even widths, v = W/2) count once,
/// every other stored column stands for itself and its mirror.
pub fn column_multiplicity(w_full: usize, v: usize) -> usize {
    if v == 0 || 2 * v == w_full {
        1
    } else {
        2
    }
}

/// Forward unitary transform of a real `[h, w, c]` image.
pub fn dft2d_forward(image: &Tensor) -> Result<HalfSpectrum> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!(
            "image must be [h, w, c], got {s:?}"
        )));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::shape("image dimensions must be positive"));
    }
    let data = rfft2_raw(h, w, c, image.data());
    HalfSpectrum::new(h, w, c, data)
}

/// Inverse unitary transform back to a real `[h, w, c]` image. Errors if the
/// spectrum is not conjugate-symmetric within its self-conjugate columns.
pub fn dft2d_inverse(spec: &HalfSpectrum) -> Result<Tensor> {
    let data = irfft2_raw(spec.h, spec.w_full, spec.c, &spec.data)?;
    Tensor::new(vec![spec.h, spec.w_full, spec.c], data)
}

/// Splits a spectrum into amplitude `sqrt(re^2 + im^2)` and phase
/// `atan2(im, re)`; exactly-zero bins get phase 0.
pub fn decompose(spec: &HalfSpectrum) -> AmplitudePhase {
    let n = spec.data.len() / 2;
    let mut amplitude = vec![0.0; n];
    let mut phase = vec![0.0; n];
    for i in 0..n {
        let re = spec.data[2 * i];
        let im = spec.data[2 * i + 1];
        amplitude[i] = (re * re + im * im).sqrt();
        phase[i] = if re == 0.0 && im == 0.0 {
            0.0
        } else {
            im.atan2(re)
        };
    }
    let shape = vec![spec.h, spec.w_half(), spec.c];
    AmplitudePhase {
        amplitude: Tensor::new(shape.clone(), amplitude).expect("layout consistent"),
        phase: Tensor::new(shape, phase).expect("layout consistent"),
    }
}

/// Rebuilds a spectrum from amplitude and phase: `re = A cos P, im = A sin P`.
pub fn compose(amplitude: &Tensor, phase: &Tensor, w_full: usize) -> Result<HalfSpectrum> {
    if amplitude.shape() != phase.shape() {
        return Err(Error::shape(format!(
            "amplitude {:?} and phase {:?} must match",
            amplitude.shape(),
            phase.shape()
        )));
    }
    let s = amplitude.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!(
            "amplitude must be [h, w_half, c], got {s:?}"
        )));
    }
    if s[1] != w_full / 2 + 1 {
        return Err(Error::shape(format!(
            "amplitude width {} does not match full width {w_full}",
            s[1]
        )));
    }
    let mut data = vec![0.0; amplitude.numel() * 2];
    for (i, (&a, &p)) in amplitude
        .data()
        .iter()
        .zip(phase.data().iter())
        .enumerate()
    {
        data[2 * i] = a * p.cos();
        data[2 * i + 1] = a * p.sin();
    }
    HalfSpectrum::new(s[0], w_full, s[2], data)
}

// ---- raw kernels (shared with the tape's spectral ops) ----

/// Unitary forward transform of `[h][w][c]` real data into the interleaved
/// half-spectrum layout `[h][w_half][c][2]`.
pub(crate) fn rfft2_raw(h: usize, w: usize, c: usize, data: &[f64]) -> Vec<f64> {
    let w_half = w / 2 + 1;
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![0.0; h * w_half * c * 2];
    let mut row = vec![Complex64::new(0.0, 0.0); w];
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    // one row-transformed plane per channel
    let mut plane = vec![Complex64::new(0.0, 0.0); h * w_half];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                row[x] = Complex64::new(data[(y * w + x) * c + ch], 0.0);
            }
            fft::fft(&mut row);
            for v in 0..w_half {
                plane[y * w_half + v] = row[v];
            }
        }
        for v in 0..w_half {
            for y in 0..h {
                col[y] = plane[y * w_half + v];
            }
            fft::fft(&mut col);
            for u in 0..h {
                let val = col[u] * scale;
                let o = ((u * w_half + v) * c + ch) * 2;
                out[o] = val.re;
                out[o + 1] = val.im;
            }
        }
    }
    out
}

/// Unitary inverse of the half-spectrum layout back to `[h][w][c]` real data.
/// Errors if the imaginary residue reaches [`RESIDUE_LIMIT`].
pub(crate) fn irfft2_raw(h: usize, w: usize, c: usize, spec: &[f64]) -> Result<Vec<f64>> {
    let w_half = w / 2 + 1;
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![0.0; h * w * c];
    let mut grid = vec![Complex64::new(0.0, 0.0); h * w];
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    let mut row = vec![Complex64::new(0.0, 0.0); w];
    let mut residue = 0.0f64;
    for ch in 0..c {
        // Hermitian extension of the stored half
        for u in 0..h {
            for v in 0..w_half {
                let o = ((u * w_half + v) * c + ch) * 2;
                grid[u * w + v] = Complex64::new(spec[o], spec[o + 1]);
            }
            for v in w_half..w {
                let mu = (h - u) % h;
                let mv = w - v;
                let o = ((mu * w_half + mv) * c + ch) * 2;
                grid[u * w + v] = Complex64::new(spec[o], -spec[o + 1]);
            }
        }
        for v in 0..w {
            for u in 0..h {
                col[u] = grid[u * w + v];
            }
            fft::ifft(&mut col);
            for u in 0..h {
                grid[u * w + v] = col[u];
            }
        }
        for u in 0..h {
            row.copy_from_slice(&grid[u * w..(u + 1) * w]);
            fft::ifft(&mut row);
            for x in 0..w {
                let val = row[x] * scale;
                residue = residue.max(val.im.abs());
                out[(u * w + x) * c + ch] = val.re;
            }
        }
    }
    if residue >= RESIDUE_LIMIT {
        return Err(Error::HermitianResidue {
            residue,
            limit: RESIDUE_LIMIT,
        });
    }
    Ok(out)
}

/// Adjoint of [`rfft2_raw`] as a real-linear map: pullback of a half-spectrum
/// cotangent (interleaved re/im) to image space. Equals the real part of the
/// unitary inverse transform of the cotangent zero-extended to the full
/// plane, with no Hermitian mirroring.
pub(crate) fn rfft2_adjoint(h: usize, w: usize, c: usize, gspec: &[f64]) -> Vec<f64> {
    let w_half = w / 2 + 1;
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![0.0; h * w * c];
    let mut grid = vec![Complex64::new(0.0, 0.0); h * w];
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    let mut row = vec![Complex64::new(0.0, 0.0); w];
    for ch in 0..c {
        for cell in grid.iter_mut() {
            *cell = Complex64::new(0.0, 0.0);
        }
        for u in 0..h {
            for v in 0..w_half {
                let o = ((u * w_half + v) * c + ch) * 2;
                grid[u * w + v] = Complex64::new(gspec[o], gspec[o + 1]);
            }
        }
        for v in 0..w {
            for u in 0..h {
                col[u] = grid[u * w + v];
            }
            fft::ifft(&mut col);
            for u in 0..h {
                grid[u * w + v] = col[u];
            }
        }
        for u in 0..h {
            row.copy_from_slice(&grid[u * w..(u + 1) * w]);
            fft::ifft(&mut row);
            for x in 0..w {
                out[(u * w + x) * c + ch] = row[x].re * scale;
            }
        }
    }
    out
}

/// Adjoint of [`irfft2_raw`]: pullback of an image cotangent to half-spectrum
/// space. Equals the unitary forward transform of the cotangent with each
/// stored column weighted by its full-plane multiplicity.
pub(crate) fn irfft2_adjoint(h: usize, w: usize, c: usize, gimg: &[f64]) -> Vec<f64> {
    let w_half = w / 2 + 1;
    let mut out = rfft2_raw(h, w, c, gimg);
    for u in 0..h {
        for v in 0..w_half {
            let mult = column_multiplicity(w, v) as f64;
            if mult != 1.0 {
                for ch in 0..c {
                    let o = ((u * w_half + v) * c + ch) * 2;
                    out[o] *= mult;
                    out[o + 1] *= mult;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo_random_image(h: usize, w: usize, c: usize, seed: u64) -> Tensor {
        let mut state = seed;
        Tensor::from_fn(&[h, w, c], |_| {
            state = state.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            z ^= z >> 31;
            (z as f64 / u64::MAX as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn roundtrip_recovers_image() {
        for &(h, w) in &[(4usize, 4usize), (5, 7), (8, 6), (1, 1), (3, 1), (1, 5)] {
            let img = pseudo_random_image(h, w, 2, (h * 100 + w) as u64);
            let spec = dft2d_forward(&img).unwrap();
            let back = dft2d_inverse(&spec).unwrap();
            let err = img
                .data()
                .iter()
                .zip(back.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-12, "roundtrip error {err} at {h}x{w}");
        }
    }

    #[test]
    fn parseval_with_column_multiplicity() {
        let img = pseudo_random_image(6, 9, 3, 42);
        let spec = dft2d_forward(&img).unwrap();
        let spatial: f64 = img.data().iter().map(|v| v * v).sum();
        let mut spectral = 0.0;
        for u in 0..spec.h() {
            for v in 0..spec.w_half() {
                let mult = column_multiplicity(spec.w_full(), v) as f64;
                for ch in 0..spec.channels() {
                    spectral += mult * spec.at(u, v, ch).norm_sqr();
                }
            }
        }
        assert!(
            (spatial - spectral).abs() / spatial < 1e-12,
            "spatial {spatial} vs spectral {spectral}"
        );
    }

    #[test]
    fn column_multiplicity_counts_full_plane() {
        for &w in &[1usize, 2, 3, 4, 5, 8, 9] {
            let total: usize = (0..w / 2 + 1).map(|v| column_multiplicity(w, v)).sum();
            assert_eq!(total, w, "width {w}");
        }
    }

    #[test]
    fn decompose_compose_roundtrip() {
        let img = pseudo_random_image(5, 6, 1, 7);
        let spec = dft2d_forward(&img).unwrap();
        let parts = decompose(&spec);
        let rebuilt = compose(&parts.amplitude, &parts.phase, spec.w_full()).unwrap();
        let err = spec
            .data()
            .iter()
            .zip(rebuilt.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "compose error {err}");
    }

    #[test]
    fn zero_amplitude_bin_has_zero_phase() {
        let img = Tensor::zeros(&[4, 4, 1]);
        let spec = dft2d_forward(&img).unwrap();
        let parts = decompose(&spec);
        assert!(parts.amplitude.data().iter().all(|&a| a == 0.0));
        assert!(parts.phase.data().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn corrupted_self_conjugate_column_is_rejected() {
        let img = pseudo_random_image(4, 4, 1, 3);
        let mut spec = dft2d_forward(&img).unwrap();
        // bin (1, 0) and (3, 0) must be conjugates; break that
        let v = spec.at(1, 0, 0);
        spec.set(1, 0, 0, v + Complex64::new(0.0, 0.5));
        match dft2d_inverse(&spec) {
            Err(Error::HermitianResidue { .. }) => {}
            other => panic!("expected Hermitian residue error, got {other:?}"),
        }
    }

    #[test]
    fn impulse_has_flat_amplitude() {
        let mut img = Tensor::zeros(&[4, 6, 1]);
        img.data_mut()[0] = 1.0;
        let spec = dft2d_forward(&img).unwrap();
        let want = 1.0 / (24.0f64).sqrt();
        for u in 0..4 {
            for v in 0..spec.w_half() {
                let z = spec.at(u, v, 0);
                assert!((z.re - want).abs() < 1e-14);
                assert!(z.im.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn adjoint_of_forward_satisfies_dot_product_identity() {
        // <F(x), y> == <x, F^T(y)> with both sides as real inner products
        let (h, w, c) = (3, 5, 2);
        let x = pseudo_random_image(h, w, c, 11);
        let w_half = w / 2 + 1;
        let y: Vec<f64> = {
            let mut state = 99u64;
            (0..h * w_half * c * 2)
                .map(|_| {
                    state = state.wrapping_add(0x9e3779b97f4a7c15);
                    let mut z = state;
                    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
                    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
                    z ^= z >> 31;
                    (z as f64 / u64::MAX as f64) * 2.0 - 1.0
                })
                .collect()
        };
        let fx = rfft2_raw(h, w, c, x.data());
        let lhs: f64 = fx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let fty = rfft2_adjoint(h, w, c, &y);
        let rhs: f64 = x.data().iter().zip(&fty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn adjoint_of_inverse_satisfies_dot_product_identity() {
        let (h, w, c) = (4, 6, 1);
        let img = pseudo_random_image(h, w, c, 5);
        let spec = dft2d_forward(&img).unwrap();
        let gimg = pseudo_random_image(h, w, c, 17);
        let x = irfft2_raw(h, w, c, spec.data()).unwrap();
        let lhs: f64 = x.iter().zip(gimg.data()).map(|(a, b)| a * b).sum();
        let adj = irfft2_adjoint(h, w, c, gimg.data());
        let rhs: f64 = spec.data().iter().zip(&adj).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "lhs {lhs} rhs {rhs}");
    }
}
