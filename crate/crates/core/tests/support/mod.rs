//! Brute-force oracles shared by the integration tests and the acceptance
//! suite.
#![allow(dead_code)]

pub mod gradient;
pub mod metrics;
pub mod mining;
