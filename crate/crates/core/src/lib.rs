//! Workbench for accelerated multi-coil MRI reconstruction under
//! distribution shift.

pub mod classical;
pub mod datasets;
pub mod error;
pub mod harness;
pub mod image;
pub mod kspace;
pub mod learned;
pub mod metrics;
pub mod par;
pub mod seed;
pub mod tensor;
pub mod toy;

pub use error::{Error, Result};
