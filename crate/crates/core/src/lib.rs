//! Core building blocks for the somnoline polysomnography platform.
//!
//! * [`edf`] reads and writes EDF/EDF+ recordings and splits multi-night files.
//! * [`staging`] holds sleep stages, hypnograms and hypnodensities.
//! * [`scoring`] produces hypnodensities from a recording.
//! * [`gray`] tags low-certainty epochs ("gray areas").
//! * [`agreement`] computes Fleiss' kappa and the per-technologist reports.

pub mod agreement;
pub mod edf;
pub mod gray;
pub mod scoring;
pub mod staging;
