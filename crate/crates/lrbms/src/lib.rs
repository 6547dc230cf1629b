//! Two-phase incompressible flow in heterogeneous porous media, solved by a
//! sequential (pressure / transport) splitting: a symmetric weighted
//! interior-penalty DG discretization of the pressure equation with a
//! conservative lowest-order Raviart-Thomas velocity reconstruction, an
//! explicit upwind-DG saturation update with a slope limiter, and a
//! steady time-of-flight solver.
//!
//! On top of the fine-grid scheme, the crate implements a localized
//! reduced-basis multiscale surrogate of the pressure equation: mobility is
//! approximated in a fixed low-dimensional profile basis, pressure snapshots
//! are collected by a greedy loop, localized to a coarse partition,
//! optionally compressed by POD, and projected once so that every online
//! pressure solve reduces to a small dense system independent of the fine
//! grid.

pub mod error;
pub mod field;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod mobility;
pub mod offline;
pub mod pressure;
pub mod rom;
pub mod scenario;
pub mod scheme;
pub mod tof;
pub mod transport;
pub mod velocity;
pub mod vtk;

pub use error::{Error, Result};
