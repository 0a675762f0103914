//! Isosurface extraction from occupancy fields: marching cubes on a lattice
//! and multiresolution refinement that only evaluates the field near the
//! decision boundary.

mod marching;
mod mise;
mod tables;

pub use marching::{marching_cubes, ScalarGrid};
pub use mise::{mise_extract, refinement_levels, FnField, MiseConfig, MiseOutput, OccupancyField};
