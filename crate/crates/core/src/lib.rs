//! Body weight estimation from music-induced bed vibrations.
//!
//! The crate is organised along the pipeline:
//!
//! - [`plate`]: closed-form modal model of a loaded, simply supported plate
//!   (forward response, transfer function, mass sensitivity, rational fit).
//! - [`dsp`]: time-series synthesis and Welch spectral estimation.
//! - [`excitation`]: weight-sensitive band identification from a chirp response.
//! - [`dataset`]: synthetic cohorts simulated through the plate model.
//! - [`pinn`]: the rational/sine-activation regression network and its trainer.
//! - [`eval`]: cross-validation protocols, metrics, ablations and sweeps.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod excitation;
pub mod jsonl;
pub mod linalg;
pub mod par;
pub mod pinn;
pub mod plate;

pub use error::{Error, ErrorKind, Result};
