//! Simulation and analysis toolkit for credence-goods markets: experts who
//! know what a consumer needs compete on posted prices, then choose a
//! treatment and a charge that the consumer cannot verify.

pub mod agents;
pub mod bridge;
pub mod config;
pub mod equilibrium;
pub mod market;
pub mod metrics;
pub mod money;
pub mod rng;
pub mod sim;
