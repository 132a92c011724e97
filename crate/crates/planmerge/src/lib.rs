//! Deterministic simulator for operators that merge maintenance plan
//! recommendations on a desk-scale factory.
//!
//! Node agents hide an optimal plan; operator agents propose plans for them,
//! learning from noisy execution feedback and from reputation-weighted
//! recommendations exchanged with peers. Four merging policies turn own
//! history and peer recommendations into the plan actually executed. The
//! whole pipeline, from agent initialization to CSV bytes, is a pure
//! function of (configuration, seed).

pub mod agents;
pub mod config;
pub mod engine;
pub mod merging;
pub mod metrics;
pub mod plan;
pub mod reputation;
pub mod rng;
pub mod sim;
