//! Desk-scale laboratory for heterogeneously observable imitation learning:
//! dual-observation MDPs, adversarial discriminators with importance
//! weighting, learning with rejection, the budgeted-query training pipeline,
//! reference baselines, and a seeded experiment harness.

pub mod approx;
pub mod baselines;
pub mod container;
pub mod data;
pub mod density;
pub mod env;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod iwre;
pub mod plot;
pub mod rejection;
pub mod rng;

pub use error::{HoilError, Result};
