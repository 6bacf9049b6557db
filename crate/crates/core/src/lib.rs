//! Surrogate-model offloading for time-dependent simulations.
//!
//! A server runs a high-fidelity reference model of the 2D heat equation
//! together with a mirror of the cheap surrogate model executed on a mobile
//! client. It decides per time step whether the client's own result is good
//! enough (a certification), or whether the client needs the full reference
//! state or just a handful of corrected points. Partial point updates are
//! folded into the surrogate state with an ensemble Kalman filter.
//!
//! Module map:
//! - [`grid`]: nested uniform grids, state vectors, restriction between levels
//! - [`solvers`]: explicit FTCS and Peaceman–Rachford ADI time steppers
//! - [`quality`]: per-step quality, chain quality, violation point selection
//! - [`enkf`]: deterministic member generation, forecast, Kalman gain, analysis
//! - [`protocol`]: the binary wire format
//! - [`transport`]: token-bucket channel emulation, virtual clock, TCP framing
//! - [`nodes`]: server and client pipelines for all strategies
//! - [`bench`]: scenarios, synthetic update injection, CSV output

pub mod bench;
pub mod enkf;
pub mod error;
pub mod grid;
pub mod nodes;
pub mod protocol;
pub mod quality;
pub mod solvers;
pub mod transport;

pub use error::{Error, Result};
