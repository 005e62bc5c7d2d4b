//! P1 finite elements for a weighted elliptic problem with measure data and a
//! monotone nonlinear boundary flux, plus the numerical studies built on it.

pub mod cs_extension;
pub mod error;
pub mod linalg;
pub mod measure;
pub mod mesh;
pub mod quadrature;
pub mod regularity;
pub mod solver;
pub mod weight;

pub use error::{Error, Result};
