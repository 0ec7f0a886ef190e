//! AutoRec and explainable AutoRec (E-AutoRec) collaborative-filtering
//! autoencoders.
//!
//! The explainable variant feeds each user's row of a neighborhood
//! explainability matrix to the encoder next to their ratings. Modules:
//!
//! - [`dataset`]: rating-file parsing, the sparse rating matrix and the holdout split.
//! - [`neighborhood`]: cosine neighborhoods and the explainability matrix.
//! - [`autoencoder`]: model parameters, forward pass, loss, gradients and training.
//! - [`metrics`]: RMSE, MAP@n and MEP@n.
//! - [`harness`]: experiment sweeps and CSV reports.

pub mod autoencoder;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod neighborhood;

pub use error::{Error, Result};
