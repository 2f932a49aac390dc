//! Construction and numerical validation of Green functions for the
//! parabolic interior transmission problem.

pub mod acceptance;
pub mod error;
pub mod geometry;
pub mod kernels;
pub mod levi;
pub mod linalg;
pub mod parametrix;
pub mod refsolver;
pub mod sampling;
pub mod symbols;

pub use error::{ItpError, Result};
pub use geometry::{Contrast, MetricField, MetricKind};
pub use num_complex::Complex64;
