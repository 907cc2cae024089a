//! Topology optimization of 2D structured grids with linearized-buckling
//! constraints, where the eigenproblem is approximated through a grid
//! hierarchy: an exact eigensolve on the coarsest level, mode prolongation
//! with Kaczmarz smoothing on intermediate levels, and a single
//! preconditioned inverse-iteration step on the fine level.

pub mod config;
pub mod design;
pub mod diagnostics;
pub mod eigen;
pub mod export;
pub mod fem;
pub mod geometry;
pub mod grid;
pub mod lba;
pub mod mma;
pub mod optimizer;
pub mod sensitivity;
pub mod solver;
