//! Statistical Lagrangian motion atlas construction from tagged volumetric
//! image sequences.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`field`]: grid containers, interpolation, differences, FFT and volume I/O.
//! * [`phantom`]: synthetic tagged/cine cohorts with analytic ground truth.
//! * [`harp`]: harmonic phase extraction and wrapped-phase algebra.
//! * [`pvira`]: phase-based incompressible diffeomorphic motion tracking.
//! * [`atlas`]: unbiased groupwise template construction.
//! * [`transport`]: conjugation of subject motion into atlas coordinates.
//! * [`mechanics`]: Lagrangian strain and region statistics.
//! * [`statmodel`]: PCA motion model via the Gram matrix.

pub mod atlas;
pub mod error;
pub mod field;
pub mod harp;
pub mod mechanics;
pub mod phantom;
pub mod pvira;
pub mod statmodel;
pub mod transport;

pub use error::{Error, Result};
