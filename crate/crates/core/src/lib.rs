//! Learning sub-pixel target signatures from bag-labeled hyperspectral data.
//!
//! The crate is organized around the processing chain:
//!
//! * [`data`]: bags, datasets, dictionaries and their file formats;
//! * [`simulator`]: synthetic linear-mixture bags with known ground truth;
//! * [`sparse`]: Lasso sparse coding by ISTA;
//! * [`mihe`]: the multiple instance hybrid estimator objective and trainer;
//! * [`detect`]: ACE and hybrid sub-pixel detection statistics;
//! * [`eval`]: ROC curves, AUC and normalized partial AUC.

pub mod cli;
pub mod data;
pub mod detect;
pub mod error;
pub mod eval;
pub mod mihe;
pub mod simulator;
pub mod sparse;

pub use error::{Error, Result};
