//! Degradation-aware day-ahead dispatch of a fast-charging-station battery.
//!
//! The battery trades against day-ahead prices while serving the station
//! load; wear is priced by a power-law penalty on per-step SoC change.

pub mod degradation;
pub mod domain;
pub mod error;
pub mod io;
pub mod model;
pub mod rolling;
pub mod solver;

pub use error::{Error, Result};
