//! Whole-image spectral manipulations: amplitude-only and phase-only
//! reconstructions, and radial band filtering.
//!
//! These operate outside the tape; they exist to make the amplitude/phase
//! split inspectable on real images.

use crate::error::{Error, Result};
use crate::fourier::{self, HalfSpectrum};
use crate::tensor::Tensor;

/// Radial frequency band, both ends as fractions of the Nyquist frequency.
/// A bin at normalized radius r belongs to the band when `low <= r < high`;
/// a band with `high >= 1` also includes r = 1, so `[0, 1]` passes everything
/// and adjacent bands partition the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialBand {
    pub low: f64,
    pub high: f64,
}

impl RadialBand {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low >= high {
            return Err(Error::invalid(format!(
                "band must satisfy 0 <= low < high <= 1, got [{low}, {high}]"
            )));
        }
        Ok(RadialBand { low, high })
    }

    fn contains(&self, r: f64) -> bool {
        r >= self.low && (r < self.high || (self.high >= 1.0 && r <= 1.0))
    }
}

/// Normalized radius of bin (u, v) on the centered spectrum: Euclidean
/// distance of the signed frequency pair from DC, divided by the maximum
/// corner radius, so r spans exactly [0, 1]. A 1x1 spectrum is all DC (r = 0).
pub fn bin_radius(h: usize, w: usize, u: usize, v: usize) -> f64 {
    let fu = if 2 * u <= h { u as f64 } else { u as f64 - h as f64 };
    let fv = if 2 * v <= w { v as f64 } else { v as f64 - w as f64 };
    let cu = (h / 2) as f64;
    let cv = (w / 2) as f64;
    let corner = (cu * cu + cv * cv).sqrt();
    if corner == 0.0 {
        return 0.0;
    }
    (fu * fu + fv * fv).sqrt() / corner
}

/// Reconstruction from amplitude alone: phase replaced by the constant 0.
/// The output's amplitude spectrum equals the input's.
pub fn amplitude_only(image: &Tensor) -> Result<Tensor> {
    let spec = fourier::dft2d_forward(image)?;
    let parts = fourier::decompose(&spec);
    let zero_phase = Tensor::zeros(parts.phase.shape());
    let rebuilt = fourier::compose(&parts.amplitude, &zero_phase, spec.w_full())?;
    fourier::dft2d_inverse(&rebuilt)
}

/// Reconstruction from phase alone: amplitude replaced by the constant 1.
pub fn phase_only(image: &Tensor) -> Result<Tensor> {
    let spec = fourier::dft2d_forward(image)?;
    let parts = fourier::decompose(&spec);
    let unit_amp = Tensor::full(parts.amplitude.shape(), 1.0);
    let rebuilt = fourier::compose(&unit_amp, &parts.phase, spec.w_full())?;
    fourier::dft2d_inverse(&rebuilt)
}

/// Zeroes every amplitude bin outside the band and reconstructs. Phase is
/// untouched; an all-pass band reproduces the input.
pub fn band_filter(image: &Tensor, band: &RadialBand) -> Result<Tensor> {
    let spec = fourier::dft2d_forward(image)?;
    let filtered = band_filter_spectrum(&spec, band);
    fourier::dft2d_inverse(&filtered)
}

/// The spectrum-domain half of [`band_filter`], reusable on precomputed
/// spectra.
pub fn band_filter_spectrum(spec: &HalfSpectrum, band: &RadialBand) -> HalfSpectrum {
    let mut out = spec.clone();
    let (h, w) = (spec.h(), spec.w_full());
    for u in 0..h {
        for v in 0..spec.w_half() {
            if !band.contains(bin_radius(h, w, u, v)) {
                for ch in 0..spec.channels() {
                    out.set(u, v, ch, num_complex::Complex64::new(0.0, 0.0));
                }
            }
        }
    }
    out
}

/// Linear rescale to [0, 1] for writing images; a constant input maps to 0.5.
pub fn display_rescale(t: &Tensor) -> Tensor {
    let min = t.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max - min).is_normal() {
        return Tensor::full(t.shape(), 0.5);
    }
    let scale = 1.0 / (max - min);
    Tensor::from_fn(t.shape(), |i| (t.data()[i] - min) * scale)
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
            z as f64 / u64::MAX as f64
        })
    }

    #[test]
    fn all_pass_band_reproduces_input() {
        let img = pseudo_random_image(8, 6, 3, 1);
        let band = RadialBand::new(0.0, 1.0).unwrap();
        let out = band_filter(&img, &band).unwrap();
        let err = img
            .data()
            .iter()
            .zip(out.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "all-pass error {err}");
    }

    #[test]
    fn amplitude_only_preserves_amplitude_spectrum() {
        let img = pseudo_random_image(10, 7, 1, 2);
        let out = amplitude_only(&img).unwrap();
        let a_in = fourier::decompose(&fourier::dft2d_forward(&img).unwrap()).amplitude;
        let a_out = fourier::decompose(&fourier::dft2d_forward(&out).unwrap()).amplitude;
        let err = a_in
            .data()
            .iter()
            .zip(a_out.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "amplitude drift {err}");
    }

    #[test]
    fn phase_only_has_unit_amplitude_spectrum() {
        let img = pseudo_random_image(6, 6, 1, 3);
        let out = phase_only(&img).unwrap();
        let a = fourier::decompose(&fourier::dft2d_forward(&out).unwrap()).amplitude;
        for &v in a.data() {
            assert!((v - 1.0).abs() < 1e-8, "amplitude {v}");
        }
    }

    #[test]
    fn partitioned_bands_sum_to_input() {
        // filtering is linear in the spectrum, so reconstructions from a
        // partition of the plane add back to the original image
        let img = pseudo_random_image(8, 8, 2, 4);
        let bands = [
            RadialBand::new(0.0, 0.1).unwrap(),
            RadialBand::new(0.1, 0.4).unwrap(),
            RadialBand::new(0.4, 1.0).unwrap(),
        ];
        let mut total = Tensor::zeros(img.shape());
        for band in &bands {
            let part = band_filter(&img, band).unwrap();
            for (t, p) in total.data_mut().iter_mut().zip(part.data()) {
                *t += p;
            }
        }
        let err = img
            .data()
            .iter()
            .zip(total.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "partition sum error {err}");
    }

    #[test]
    fn band_filter_is_idempotent() {
        let img = pseudo_random_image(8, 6, 1, 5);
        let band = RadialBand::new(0.1, 0.4).unwrap();
        let once = band_filter(&img, &band).unwrap();
        let twice = band_filter(&once, &band).unwrap();
        let err = once
            .data()
            .iter()
            .zip(twice.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "idempotence error {err}");
    }

    #[test]
    fn partitioned_band_energies_sum_to_input_energy() {
        let img = pseudo_random_image(10, 8, 1, 6);
        let spec = fourier::dft2d_forward(&img).unwrap();
        let energy = |s: &HalfSpectrum| {
            let mut total = 0.0;
            for u in 0..s.h() {
                for v in 0..s.w_half() {
                    let m = fourier::column_multiplicity(s.w_full(), v) as f64;
                    for ch in 0..s.channels() {
                        total += m * s.at(u, v, ch).norm_sqr();
                    }
                }
            }
            total
        };
        let parts: f64 = [(0.0, 0.1), (0.1, 0.4), (0.4, 1.0)]
            .iter()
            .map(|&(lo, hi)| {
                energy(&band_filter_spectrum(
                    &spec,
                    &RadialBand::new(lo, hi).unwrap(),
                ))
            })
            .sum();
        assert!(
            (parts - energy(&spec)).abs() < 1e-9 * energy(&spec).max(1.0),
            "energy split {parts} vs {}",
            energy(&spec)
        );
    }

    #[test]
    fn dc_only_band_keeps_constant_image_unchanged() {
        let img = Tensor::full(&[6, 4, 1], 0.3);
        let band = RadialBand::new(0.0, 0.05).unwrap();
        let out = band_filter(&img, &band).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn band_filter_preserves_phase_on_retained_bins() {
        let img = pseudo_random_image(8, 8, 1, 7);
        let band = RadialBand::new(0.0, 0.5).unwrap();
        let out = band_filter(&img, &band).unwrap();
        let p_in = fourier::decompose(&fourier::dft2d_forward(&img).unwrap());
        let p_out = fourier::decompose(&fourier::dft2d_forward(&out).unwrap());
        for i in 0..p_out.amplitude.numel() {
            if p_out.amplitude.data()[i] > 1e-9 {
                let d = (p_out.phase.data()[i] - p_in.phase.data()[i]).abs();
                assert!(d < 1e-6, "phase moved by {d} on retained bin {i}");
            }
        }
    }

    #[test]
    fn band_rejects_bad_ranges() {
        assert!(RadialBand::new(0.5, 0.5).is_err());
        assert!(RadialBand::new(-0.1, 0.5).is_err());
        assert!(RadialBand::new(0.2, 1.5).is_err());
    }

    #[test]
    fn display_rescale_maps_to_unit_range() {
        let t = Tensor::new(vec![3], vec![-2.0, 0.0, 6.0]).unwrap();
        let r = display_rescale(&t);
        assert_eq!(r.data(), &[0.0, 0.25, 1.0]);
        let flat = display_rescale(&Tensor::full(&[4], 3.3));
        assert!(flat.data().iter().all(|&v| v == 0.5));
    }
}
