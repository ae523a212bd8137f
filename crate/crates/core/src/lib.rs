//! Responder dispatch for emergency services: online incident prediction,
//! tree-search dispatch over sampled incident chains, and time-dependent
//! routing, with a replay simulator to compare against the nearest-responder
//! policy.

pub mod domain;
pub mod error;
pub mod generator;
pub mod geo;
pub mod network;
pub mod planner;
pub mod seed;
pub mod sim;
pub mod speed;
pub mod survival;
pub mod synth;
pub mod time;

pub use error::{Error, ErrorKind, Result};
