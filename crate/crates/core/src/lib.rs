//! Discrete exterior calculus on regular Cartesian grids: Hodge and
//! boundary-induced graph (BIG) Laplacians of sublevel sets, their spectra,
//! persistent variants along filtrations, and molecular featurization.

pub mod eigen;
pub mod error;
pub mod features;
pub mod field;
pub mod grid;
pub mod laplacian;
pub mod molio;
pub mod persistence;
pub mod presets;
pub mod sparse;
pub mod spectrum;
pub mod star;
pub mod support;
pub mod topology;
pub mod validate;

pub use error::{Error, Result};
