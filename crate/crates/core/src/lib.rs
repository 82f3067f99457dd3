//! Bubble-enriched quadratic finite elements for the three-dimensional
//! elliptic obstacle problem on box domains.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod bench;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod io;
pub mod mesh;
pub mod quadrature;
pub mod solver;
pub mod space;
pub mod sparse;

pub use error::{FemError, Result};
pub use geometry::Point3;
