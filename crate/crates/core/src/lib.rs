//! Computational tools for concrete operator systems, their kernels,
//! quotients, duals and tensor products.

pub mod conic;
pub mod dual;
pub mod error;
pub mod gallery;
pub mod linalg;
pub mod quotient;
pub mod system;
pub mod tensor;

pub use error::{Error, Result};
