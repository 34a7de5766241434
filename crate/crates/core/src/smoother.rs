//! Forward Gauss-Seidel over a multicolor ordering.
//!
//! The matrix must already be permuted so that each color is a contiguous
//! block of rows. Colors are processed in order; rows inside a color read no
//! same-color unknowns, so their updates are independent. Couplings to other
//! ranks read the halo values exchanged before the sweep.

use thiserror::Error;

use crate::coloring::Coloring;
use crate::comm::{Communicator, HaloPlan, OverlapSchedule};
use crate::problem::{EllMatrix, STENCIL_WIDTH};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SmootherError {
    #[error("zero diagonal in row {row}")]
    SingularDiagonal { row: usize },
    #[error("sweep counts must be at least 1 (pre {pre}, post {post}, coarsest {coarsest})")]
    InvalidSweeps {
        pre: usize,
        post: usize,
        coarsest: usize,
    },
}

/// Pre-, post- and coarsest-level sweep counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sweeps {
    pub pre: usize,
    pub post: usize,
    pub coarsest: usize,
}

impl Default for Sweeps {
    fn default() -> Self {
        Self {
            pre: 1,
            post: 1,
            coarsest: 1,
        }
    }
}

impl Sweeps {
    pub fn new(pre: usize, post: usize, coarsest: usize) -> Result<Self, SmootherError> {
        if pre == 0 || post == 0 || coarsest == 0 {
            return Err(SmootherError::InvalidSweeps {
                pre,
                post,
                coarsest,
            });
        }
        Ok(Self {
            pre,
            post,
            coarsest,
        })
    }
}

/// How the halo of `z` is refreshed before a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaloMode {
    Blocking,
    /// Interior rows of the first color run while the exchange is in flight.
    Overlapped,
    /// `z` is entirely zero, halo included; no exchange needed.
    AssumeZero,
}

/// `z_i <- (r_i - sum_{j != i} a_ij z_j) / a_ii`. Returns the counted flops.
#[inline]
fn relax_row<T: Real>(
    a: &EllMatrix<T>,
    r: &[T],
    z: &mut [T],
    row: usize,
) -> Result<u64, SmootherError> {
    let p = &a.pattern;
    let base = row * STENCIL_WIDTH;
    let nnz = p.row_nnz[row] as usize;
    let d = p.diag_pos[row] as usize;
    let cols = &p.col_idx[base..base + nnz];
    let vals = &a.values[base..base + nnz];
    let mut s = r[row];
    for e in 0..nnz {
        if e != d {
            s -= vals[e] * z[cols[e] as usize];
        }
    }
    let diag = vals[d];
    if diag == T::zero() {
        return Err(SmootherError::SingularDiagonal { row });
    }
    z[row] = s / diag;
    Ok(2 * nnz as u64 + 1)
}

fn relax_rows<T: Real>(
    a: &EllMatrix<T>,
    r: &[T],
    z: &mut [T],
    rows: impl IntoIterator<Item = usize>,
) -> Result<u64, SmootherError> {
    let mut flops = 0;
    for row in rows {
        flops += relax_row(a, r, z, row)?;
    }
    Ok(flops)
}

/// One forward multicolor Gauss-Seidel sweep on `z` (halo-extended) for
/// right-hand side `r`. Returns the flops counted by the kernel.
#[allow(clippy::too_many_arguments)]
pub fn forward_gs_sweep<T: Real>(
    comm: &mut Communicator,
    a: &EllMatrix<T>,
    coloring: &Coloring,
    plan: &HaloPlan,
    schedule: &OverlapSchedule,
    r: &[T],
    z: &mut [T],
    halo: HaloMode,
) -> Result<u64, SmootherError> {
    debug_assert_eq!(z.len(), a.n_cols_ext());
    let mut flops = 0;
    let mut first_color = 0;
    match halo {
        HaloMode::Blocking => comm.exchange(z, plan),
        HaloMode::AssumeZero => {
            debug_assert!(z.iter().all(|&v| v == T::zero()));
        }
        HaloMode::Overlapped => {
            let mut interior = Ok(0);
            comm.exchange_overlapped(z, plan, |z| {
                interior = relax_rows(a, r, z, schedule.first_color_interior.iter().copied());
            });
            flops += interior?;
            flops += relax_rows(a, r, z, schedule.first_color_boundary.iter().copied())?;
            first_color = 1;
        }
    }
    for c in first_color..coloring.num_colors {
        flops += relax_rows(a, r, z, coloring.color_range(c))?;
    }
    Ok(flops)
}
