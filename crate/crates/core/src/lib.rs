//! Simulator and library for jamming-aided route manipulation in multi-hop
//! wireless networks, with Bayesian interference detection and a
//! security-performance mitigation optimizer.

pub mod attacker;
pub mod defender;
pub mod detection;
pub mod error;
pub mod harness;
pub mod mitigation;
pub mod netmodel;

pub use error::{Error, Result};
