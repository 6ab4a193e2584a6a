//! Robust indirect inference for sampled CARMA(p, q) processes.

pub mod aux_ar;
pub mod contamination;
pub mod error;
pub mod experiment;
pub mod gm;
pub mod indirect;
pub mod levy;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod qmle;
pub mod report;
pub mod rng;
pub mod validation;

pub use error::{Error, Result};
