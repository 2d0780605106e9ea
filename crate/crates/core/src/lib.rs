//! Power flow, RMS simulation and Monte Carlo fault survivability for an
//! actively controlled medium-voltage distribution grid.

pub mod control;
pub mod dynamics;
pub mod fault;
pub mod montecarlo;
pub mod network;
pub mod powerflow;
pub mod report;
pub mod scenario;
pub mod svg;
pub mod units;
pub mod validate;
pub mod ybus;
