//! Phase-preserving normalization of feature maps.
//!
//! Instance-normalize a feature map, then keep only the normalized map's
//! amplitude spectrum, recombining it with the original map's phase. Feature
//! statistics (amplitude) are standardized while the spatial structure
//! (phase) is untouched, per channel on 2D spatial spectra.
//!
//! The composed spectrum is exactly conjugate-symmetric: both branches come
//! from real maps, so amplitude is mirror-symmetric and phase
//! mirror-antisymmetric wherever it matters, and the inverse transform's
//! symmetry check passes without projection.

use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tape};

/// Placement of the normalization inside the backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct PPNormConfig {
    pub eps: f64,
    /// 1-based backbone stage indices whose normalization is replaced.
    pub stages: Vec<usize>,
}

impl Default for PPNormConfig {
    fn default() -> Self {
        PPNormConfig {
            eps: 1e-5,
            stages: vec![3],
        }
    }
}

impl PPNormConfig {
    pub fn validate(&self, num_stages: usize) -> Result<()> {
        if self.eps <= 0.0 {
            return Err(Error::invalid(format!(
                "normalization eps must be positive, got {}",
                self.eps
            )));
        }
        if self.stages.is_empty() {
            return Err(Error::invalid(
                "phase-preserving normalization needs at least one placement stage",
            ));
        }
        for &s in &self.stages {
            if s == 0 || s > num_stages {
                return Err(Error::invalid(format!(
                    "placement stage {s} outside 1..={num_stages}"
                )));
            }
        }
        Ok(())
    }
}

/// Applies the normalization to an `[h, w, c]` feature map node:
/// amplitude of instance_norm(z), phase of z, inverse transform.
pub fn ppnorm(tape: &mut Tape, z: NodeId, eps: f64) -> Result<NodeId> {
    let shape = tape.shape(z).to_vec();
    if shape.len() != 3 {
        return Err(Error::shape(format!(
            "phase-preserving normalization expects [h, w, c], got {shape:?}"
        )));
    }
    let w_full = shape[1];
    let normalized = tape.instance_norm(z, eps)?;
    let norm_spectrum = tape.rfft2(normalized)?;
    let amplitude = tape.amplitude(norm_spectrum)?;
    let orig_spectrum = tape.rfft2(z)?;
    let phase = tape.phase(orig_spectrum)?;
    let composed = tape.polar_compose(amplitude, phase)?;
    tape.irfft2(composed, w_full)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier;
    use crate::tensor::Tensor;

    fn test_map(h: usize, w: usize, c: usize, seed: u64) -> Tensor {
        let mut state = seed;
        Tensor::from_fn(&[h, w, c], |_| {
            state = state.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            z ^= z >> 31;
            z as f64 / u64::MAX as f64 - 0.5
        })
    }

    fn run(z: &Tensor, eps: f64) -> Tensor {
        let mut tape = Tape::new();
        let node = tape.leaf(z);
        let out = ppnorm(&mut tape, node, eps).unwrap();
        Tensor::new(tape.shape(out).to_vec(), tape.value(out).data().to_vec()).unwrap()
    }

    fn pre_normalized(h: usize, w: usize, c: usize, seed: u64) -> Tensor {
        let raw = test_map(h, w, c, seed);
        let n = (h * w) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for (i, &v) in raw.data().iter().enumerate() {
            mean[i % c] += v / n;
        }
        for (i, &v) in raw.data().iter().enumerate() {
            var[i % c] += (v - mean[i % c]).powi(2) / n;
        }
        Tensor::from_fn(raw.shape(), |i| {
            (raw.data()[i] - mean[i % c]) / var[i % c].sqrt()
        })
    }

    #[test]
    fn normalized_input_is_a_fixed_point() {
        let z = pre_normalized(6, 4, 2, 1);
        let out = run(&z, 1e-5);
        let err = z
            .data()
            .iter()
            .zip(out.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-5, "fixed point drift {err}");
    }

    #[test]
    fn constant_input_maps_to_zero() {
        let z = Tensor::full(&[4, 4, 3], 0.7);
        let out = run(&z, 1e-5);
        for &v in out.data() {
            assert!(v.abs() < 1e-12, "constant input produced {v}");
        }
    }

    #[test]
    fn output_takes_normalized_amplitude_and_original_phase() {
        let z = test_map(4, 4, 2, 2);
        let out = run(&z, 1e-5);

        let out_parts = fourier::decompose(&fourier::dft2d_forward(&out).unwrap());
        let orig_parts = fourier::decompose(&fourier::dft2d_forward(&z).unwrap());
        let normalized = {
            let mut tape = Tape::new();
            let node = tape.leaf(&z);
            let n = tape.instance_norm(node, 1e-5).unwrap();
            Tensor::new(tape.shape(n).to_vec(), tape.value(n).data().to_vec()).unwrap()
        };
        let norm_parts = fourier::decompose(&fourier::dft2d_forward(&normalized).unwrap());

        for i in 0..out_parts.amplitude.numel() {
            let a = out_parts.amplitude.data()[i];
            assert!(
                (a - norm_parts.amplitude.data()[i]).abs() < 1e-9,
                "amplitude mismatch at bin {i}"
            );
            if a > 1e-9 {
                let mut d = (out_parts.phase.data()[i] - orig_parts.phase.data()[i]).abs();
                d = d.min((d - 2.0 * std::f64::consts::PI).abs());
                assert!(d < 1e-6, "phase mismatch {d} at bin {i}");
            }
        }
    }

    #[test]
    fn config_validation_rejects_bad_placement() {
        assert!(PPNormConfig { eps: 1e-5, stages: vec![] }.validate(3).is_err());
        assert!(PPNormConfig { eps: 1e-5, stages: vec![4] }.validate(3).is_err());
        assert!(PPNormConfig { eps: 0.0, stages: vec![3] }.validate(3).is_err());
        assert!(PPNormConfig::default().validate(3).is_ok());
    }
}
