//! Frequency-domain modality-invariant feature learning.
//!
//! The crate decomposes images into Fourier amplitude and phase, learns an
//! instance-adaptive amplitude filter that suppresses modality-specific
//! spectrum regions, normalizes feature statistics while preserving phase,
//! and trains the whole pipeline with identity, center-cluster, consistency,
//! and adversarial modality-confusion losses on a from-scratch reverse-mode
//! tape. Everything runs in f64 on CPU and is deterministic for a fixed seed.

pub mod ablate;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fft;
pub mod fourier;
pub mod gradcheck;
pub mod iaf;
pub mod io;
pub mod losses;
pub mod model;
pub mod ppnorm;
pub mod spectral;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{NodeId, ParamId, ParamStore, Sgd, Tape, Tensor};
