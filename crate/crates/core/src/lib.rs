//! Online adversarial attacks against a differentiable template-matching
//! tracker, with synthetic scenes, baseline attacks and an evaluation harness.

pub mod attack;
pub mod correlate;
pub mod detect;
pub mod error;
pub mod frame;
pub mod geometry;
pub mod gradcheck;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod par;
pub mod rng;
pub mod scene;
pub mod tracker;

pub use error::{Error, Result};
