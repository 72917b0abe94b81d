//! Space-mapping optimization of interacting particle systems.
//!
//! The fine model is a particle ODE system ([`micro`]), the coarse model a
//! finite-volume advection–diffusion solver ([`macroscopic`]). Both come with
//! discrete adjoints ([`adjoint`]); [`optim`] provides the nonlinear CG
//! driver and [`spacemap`] the parameter extraction and ASM loop. Ready-made
//! experiments live in [`scenario`].

pub mod adjoint;
pub mod eikonal;
mod error;
pub mod geom;
pub mod grid;
pub mod macroscopic;
pub mod micro;
pub mod optim;
pub mod par;
pub mod scenario;
pub mod spacemap;

pub use error::{Error, Result};
pub use geom::{Mat2, Rect, Segment, Vec2};
pub use grid::{CellKind, Grid, ObstacleSpec};
pub use par::Parallelism;
