//! Numerical toolkit for anomalous dissipation driven by transport noise
//! supported on dyadic shells of the torus lattice.
//!
//! The crate is layered bottom-up:
//!
//! * [`lattice`] builds shell wave vectors, divergence-free bases and
//!   complex Brownian drivers;
//! * [`spectral`] holds Fourier-truncated fields on `T^d`, FFT transforms,
//!   Sobolev norms and the Leray projection;
//! * [`corrector`] evaluates the Itô–Stratonovich corrector and its
//!   shell-average constants;
//! * [`velocity`] advances the transport, Ornstein–Uhlenbeck and
//!   Navier–Stokes velocity models;
//! * [`solver`] integrates advected scalars and vector fields and records
//!   energy ledgers;
//! * [`schedule`] validates multi-stage parameter schedules;
//! * [`experiment`] wires everything into reproducible runs and sweeps.

pub mod corrector;
pub mod error;
pub mod experiment;
pub mod expm;
pub mod lattice;
pub mod noise;
pub mod schedule;
pub mod solver;
pub mod spectral;
pub mod velocity;

pub use error::{Error, Result};
pub use lattice::{Dim, NoiseBasis, WaveVector};
pub use spectral::{Grid, SpectralField};
