//! Desk-scale mixed-precision benchmark pipeline.
//!
//! Builds the 27-point stencil system on a block-partitioned 3D grid, solves it
//! with restarted GMRES preconditioned by a 4-level geometric multigrid V-cycle
//! (multicolor Gauss-Seidel smoothing, injection restriction), either fully in
//! `f64` or as `f32`/`f64` GMRES-IR, and reports penalized throughput.
//!
//! Ranks are in-process workers connected by FIFO mailboxes (see [`comm`]);
//! every collective uses a fixed reduction order so results are bitwise
//! reproducible for a given rank count.

pub mod bench;
pub mod coloring;
pub mod comm;
pub mod geometry;
pub mod krylov;
pub mod metrics;
pub mod multigrid;
pub mod problem;
pub mod real;
pub mod smoother;

pub use bench::{BenchConfig, BenchError, ValidationMode, ValidationOutcome};
pub use coloring::{Coloring, Strategy};
pub use comm::{Communicator, HaloPlan, RankWorld};
pub use geometry::{GlobalProblem, LocalDomain};
pub use krylov::{GmresOptions, Precision, SolveResult};
pub use metrics::{BenchReport, Motif, MotifTally};
pub use multigrid::{MgHierarchy, MgLevel};
pub use problem::EllMatrix;
pub use real::Real;
