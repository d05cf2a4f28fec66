//! Progressive label correction (PLC) for feature-dependent label noise.
//!
//! The crate is organized around the experiment pipeline:
//!
//! - [`datagen`]: Gaussian-mixture data with an exact posterior oracle.
//! - [`noise`]: poly-margin diminishing (PMD) noise, transition-matrix noise and calibration.
//! - [`model`]: a small softmax MLP trained with mini-batch SGD.
//! - [`plc`]: the progressive correction loop and the no-correction baseline.
//! - [`theory`]: purity, pure level sets, margin densities and the parameter calculators.
//! - [`harness`]: configuration, seeded pipelines, sweeps and report emission.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the `parallel`
//! feature is enabled and runs sequentially otherwise. Results are bit-identical
//! either way.

pub mod datagen;
pub mod error;
pub mod harness;
pub mod model;
pub mod noise;
pub mod par;
pub mod plc;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
