//! File formats, configuration, synthetic inputs, sweeps, audits and run
//! reports.

pub mod audit;
pub mod config;
pub mod report;
pub mod series;
pub mod sweep;
pub mod synth;
