//! Microgrid energy-management benchmark toolkit.
//!
//! A small home microgrid (battery, electrical hot-water tank, heated
//! envelope, solar panel) is driven over one day by three online policies —
//! a cut-based stochastic dynamic-programming policy (SDDP), receding-horizon
//! deterministic optimization (MPC) and a thermostat-style rule — and the
//! policies are compared out of sample with paired Monte Carlo simulation.

pub mod cli;
pub mod config;
pub mod deterministic;
pub mod io;
pub mod lp;
pub mod scenarios;
pub mod sddp;
pub mod sim;
pub mod value_fn;
pub mod physics;
pub mod pipeline;
pub mod policy;
pub mod problem;

pub use physics::{Control, PhysicalParams, State, TimeGrid, Uncertainty, WeatherTrace};
pub use problem::{CostParams, Problem};
