//! Mixed finite element solver for the matched-density Cahn-Hilliard-Navier-Stokes system
//! using a second-order Crank-Nicolson / Adams-Bashforth convex-splitting time stepper.
//!
//! Phase field, chemical potential and pressure live in continuous P1; velocity lives in
//! continuous P2 with homogeneous Dirichlet data (Taylor-Hood).

pub mod assembly;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod gronwall;
pub mod linsolve;
pub mod mesh;
pub mod mms;
pub mod projections;
pub mod quadrature;
pub mod scheme;
pub mod space;
pub mod sparse;

pub use error::{Error, Result};
pub use mesh::{Mesh, Rect};
pub use projections::ProjectionContext;
pub use scheme::{PhysParams, Scheme, SchemeState, TimeGrid};
pub use space::{FieldVector, FunctionSpace, SpaceKind};
pub use sparse::SparseMatrix;
