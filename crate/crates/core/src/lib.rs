//! Numerical laboratory for generalized Ricci flow with B-field torsion
//! coupled to dilaton flows.

pub mod entropy;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod heat;
pub mod isoperimetric;
pub mod soliton;
pub mod spectral;

pub use error::{LabError, Result};
