//! Confounder-aware refinement of drug safety signals mined from
//! longitudinal primary-care records.

pub mod basket;
pub mod codes;
pub mod error;
pub mod events;
pub mod mining;
pub mod refine;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};
