//! Simulation and analysis toolkit for two-photon interference experiments in
//! which one wing of an entangled pair meets a remote projective element
//! (a spectral filter or a polarization analyzer) while the other wing is
//! scanned through an interferometer.
//!
//! The crate is organized in three layers:
//!
//! * analytic predictions — [`spectra`], [`biphoton`], [`geometry`], and
//!   [`models`] compute noise-free interference patterns under two competing
//!   physics backends (standard unitary quantum mechanics and a parametric
//!   finite-speed-collapse model);
//! * event-level Monte Carlo — [`montecarlo`] generates timestamped detection
//!   records with detector imperfections, coincidence pairing, and herald
//!   gating, reproducibly and in parallel;
//! * estimation and experiment design — [`analysis`] fits fringe visibilities,
//!   compares patterns, runs the projective-element distance scan that bounds
//!   the conjectured collapse propagation speed, and sizes experiments.
//!
//! The [`config`] and [`commands`] modules expose the whole pipeline through a
//! JSON-configured command-line tool.

pub mod analysis;
pub mod biphoton;
pub mod commands;
pub mod config;
pub mod models;
pub mod montecarlo;
pub mod geometry;
pub mod spectra;
mod stats;
