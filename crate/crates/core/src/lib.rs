//! Placement of collocated sensor/actuator pairs on a flexible cantilever
//! from simulated vibration data.
//!
//! The pipeline runs a modal truth model, fits a time-delay DMD surrogate,
//! ranks node pairs by the Hankel singular values of the surrogate output,
//! corrects the modal model for the added mass of the chosen pair and
//! iterates to a self-consistent placement. Placements are then compared
//! under LQR control.

pub mod anc;
pub mod cli;
pub mod config;
pub mod control;
pub mod design;
pub mod dmd;
pub mod error;
pub mod hankel;
mod linalg;
pub mod placement;
pub mod spectrum;
pub mod stages;
pub mod truth;

pub use error::{Error, Result};
