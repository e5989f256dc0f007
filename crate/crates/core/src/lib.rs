//! Desk-scale simulator and learning pipeline for initial-access beam
//! management on sub-6 GHz massive MIMO.
//!
//! The crate simulates a single-sector base station with an `N_X x N_Y`
//! uniform planar array sweeping synchronization signal block (SSB) beams
//! over a population of moving users. Users report only the index of their
//! strongest beam and its RSRP. From that limited feedback the pipeline
//! builds beamspace observations, trains a small convolutional autoencoder
//! (with hand-rolled backpropagation) against SVD-optimal beam labels, and
//! deploys the resulting site-specific SSB codebook, comparing it against a
//! DFT grid-of-beams baseline and a perfect-CSI SVD upper bound.
//!
//! All numeric kernels are generic over the scalar type ([`Scalar`], either
//! `f32` or `f64`). Channel simulation and evaluation run at `f64`
//! ([`SimScalar`]); network parameters, datasets and model files are stored
//! at `f32` ([`NetScalar`]); gradient checks instantiate the same kernels at
//! `f64`.

pub mod array_geometry;
pub mod channel;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod initial_access;
pub mod neural;
pub mod observation;
pub mod rng;
pub mod scalar;
pub mod ssb_encoder;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision complex sample.
pub type C32 = num_complex::Complex<f32>;
/// Double-precision complex sample.
pub type C64 = num_complex::Complex<f64>;

/// Precision used for channel generation and metric evaluation.
pub type SimScalar = f64;
/// Storage precision for network parameters, datasets and model files.
pub type NetScalar = f32;

/// Network model at storage precision.
pub type Model32 = neural::Model<f32>;
/// Network model at gradient-check precision.
pub type Model64 = neural::Model<f64>;
