//! Discrete-block simulator for the CoMMA two-phase DEX ordering protocol
//! and the sandwich attacks it is designed to stop.

pub mod agents;
pub mod amm;
pub mod audit;
pub mod chain;
pub mod metrics;
pub mod model;
pub mod protocol;
pub mod scenario;
