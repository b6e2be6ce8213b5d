//! Nearly coconvex approximation of periodic functions by splines and
//! trigonometric polynomials, with numerical shape verification.

pub mod error;
pub mod kernels;
pub mod periodic;
pub mod poly;
pub mod spline;
pub mod verify;

pub use error::{Result, ShapeError};
