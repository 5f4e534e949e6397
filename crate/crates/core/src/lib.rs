//! Rectified-flow velocity models on low-dimensional synthetic data, with a
//! learned positive-incentive noise head ("rectified noise") injected into
//! the velocity field.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod infodiag;
pub mod interpolant;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod sampling;
pub mod training;

pub use error::{Error, Result};
