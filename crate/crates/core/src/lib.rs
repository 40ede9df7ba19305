//! Reconstruction of real-valued images from multilook, speckle-corrupted,
//! undersampled complex measurements.
//!
//! The estimator minimises the exact multilook negative log-likelihood with
//! projected gradient descent. The projection is an average of deep-decoder
//! fits over several non-overlapping patch tilings, and the covariance
//! inverse needed by the gradient is carried across iterations with single
//! Newton-Schulz steps.

pub mod bagging;
pub mod cxla;
pub mod decoder;
pub mod error;
pub mod invtrack;
pub mod likelihood;
pub mod metrics;
pub mod pgd;
pub mod sensing;

pub use error::{Error, Result};
