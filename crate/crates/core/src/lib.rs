//! Two-out-of-Three selective prediction.
//!
//! A classifier's original prediction is checked against predictions on
//! (blurred) ROI crops and against a third prediction derived from clustered
//! hidden features. The engine certifies the original answer, replaces it with
//! a corroborated alternative, or abstains.

pub mod backends;
pub mod cli;
pub mod decision;
pub mod domain;
pub mod error;
pub mod harness;
pub mod preprocess;
pub mod symbolizer;

pub use domain::{BBox, ClassId, ClassTaxonomy, ImageBuf, Prediction, ToTConfig};
pub use error::{Error, Result};
