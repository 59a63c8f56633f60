//! Simulation and diagnostics for stochastic differential equations driven
//! jointly by a Brownian motion and a fractional Brownian motion with Hurst
//! index `H > 1/2`.

pub mod cli;
pub mod density;
pub mod exprlang;
pub mod fields;
pub mod flow;
pub mod hormander;
pub mod malliavin;
pub mod noise;
pub mod norris;
pub mod paths;
pub mod sde;
pub mod stats;
