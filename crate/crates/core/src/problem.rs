//! 27-point stencil system in padded ELL storage.
//!
//! Rows hold up to [`STENCIL_WIDTH`] entries stored row-major (a row's slots are
//! contiguous). Unused slots carry value 0 and column [`PAD`]; kernels stop at
//! `row_nnz` so padding is never read. Entries within a row are sorted by
//! ascending global column, which fixes every kernel's summation order.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::{self, Write};
use std::sync::Arc;

use crate::geometry::LocalDomain;
use crate::real::Real;

pub const STENCIL_WIDTH: usize = 27;
/// Column marker for padding slots.
pub const PAD: i32 = -1;
/// Column marker for an off-rank coupling not yet mapped to a halo slot.
pub const UNRESOLVED: i32 = -2;

pub const DIAGONAL: f64 = 26.0;
pub const OFF_DIAGONAL: f64 = -1.0;

/// Sparsity structure shared by the high- and low-precision copies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EllPattern {
    pub n_rows: usize,
    /// `n_rows` plus the halo size once the halo plan has been built.
    pub n_cols_ext: usize,
    pub col_idx: Vec<i32>,
    /// Global column of every stored entry, `-1` on padding.
    pub col_global: Vec<i64>,
    pub row_nnz: Vec<u8>,
    pub diag_pos: Vec<u8>,
}

impl EllPattern {
    pub fn nnz(&self) -> usize {
        self.row_nnz.iter().map(|&n| n as usize).sum()
    }

    #[inline]
    pub fn row_cols(&self, row: usize) -> &[i32] {
        let base = row * STENCIL_WIDTH;
        &self.col_idx[base..base + self.row_nnz[row] as usize]
    }

    #[inline]
    pub fn row_globals(&self, row: usize) -> &[i64] {
        let base = row * STENCIL_WIDTH;
        &self.col_global[base..base + self.row_nnz[row] as usize]
    }

    /// True if the row reads any halo column.
    pub fn row_touches_halo(&self, row: usize) -> bool {
        self.row_cols(row)
            .iter()
            .any(|&c| c as usize >= self.n_rows || c < 0)
    }

    /// Digest of the structure; equal for copies that share column layout.
    pub fn structure_digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.n_rows.hash(&mut h);
        self.n_cols_ext.hash(&mut h);
        self.col_idx.hash(&mut h);
        self.row_nnz.hash(&mut h);
        self.diag_pos.hash(&mut h);
        h.finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllMatrix<T> {
    pub pattern: Arc<EllPattern>,
    pub values: Vec<T>,
}

impl<T: Real> EllMatrix<T> {
    pub fn n_rows(&self) -> usize {
        self.pattern.n_rows
    }

    pub fn n_cols_ext(&self) -> usize {
        self.pattern.n_cols_ext
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    #[inline]
    pub fn row_values(&self, row: usize) -> &[T] {
        let base = row * STENCIL_WIDTH;
        &self.values[base..base + self.pattern.row_nnz[row] as usize]
    }

    #[inline]
    pub fn diagonal(&self, row: usize) -> T {
        self.values[row * STENCIL_WIDTH + self.pattern.diag_pos[row] as usize]
    }

    /// `(row, column, value)` for every stored entry, in local indices.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.n_rows()).flat_map(move |row| {
            self.pattern
                .row_cols(row)
                .iter()
                .zip(self.row_values(row))
                .map(move |(&c, &v)| (row, c as usize, v))
        })
    }

    /// Entries in global indices; `row_global[i]` is the global id of local row `i`.
    pub fn global_triplets(&self, row_global: &[usize]) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for row in 0..self.n_rows() {
            for (&g, &v) in self
                .pattern
                .row_globals(row)
                .iter()
                .zip(self.row_values(row))
            {
                out.push((row_global[row], g as usize, v.to_f64()));
            }
        }
        out
    }
}

/// Assembles this rank's rows of the stencil matrix.
///
/// Couplings to points owned by other ranks keep their global column in
/// `col_global` and are marked [`UNRESOLVED`] until
/// [`crate::comm::build_halo_plan`] maps them to halo slots.
pub fn generate_matrix(domain: &LocalDomain) -> EllMatrix<f64> {
    let n = domain.num_rows();
    let mut col_idx = vec![PAD; n * STENCIL_WIDTH];
    let mut col_global = vec![-1i64; n * STENCIL_WIDTH];
    let mut values = vec![0.0f64; n * STENCIL_WIDTH];
    let mut row_nnz = vec![0u8; n];
    let mut diag_pos = vec![0u8; n];
    let [nx, ny, nz] = domain.global;

    for row in 0..n {
        let [i, j, k] = domain.local_coords(row);
        let g = [
            domain.offset[0] + i,
            domain.offset[1] + j,
            domain.offset[2] + k,
        ];
        let base = row * STENCIL_WIDTH;
        let mut e = 0;
        // z outermost, x innermost: ascending global column.
        for dz in -1i64..=1 {
            let gz = g[2] as i64 + dz;
            if gz < 0 || gz >= nz as i64 {
                continue;
            }
            for dy in -1i64..=1 {
                let gy = g[1] as i64 + dy;
                if gy < 0 || gy >= ny as i64 {
                    continue;
                }
                for dx in -1i64..=1 {
                    let gx = g[0] as i64 + dx;
                    if gx < 0 || gx >= nx as i64 {
                        continue;
                    }
                    let gc = [gx as usize, gy as usize, gz as usize];
                    col_global[base + e] = domain.global_index(gc) as i64;
                    col_idx[base + e] = match domain.global_to_local(gc) {
                        Some(l) => l as i32,
                        None => UNRESOLVED,
                    };
                    if dx == 0 && dy == 0 && dz == 0 {
                        values[base + e] = DIAGONAL;
                        diag_pos[row] = e as u8;
                    } else {
                        values[base + e] = OFF_DIAGONAL;
                    }
                    e += 1;
                }
            }
        }
        row_nnz[row] = e as u8;
    }

    EllMatrix {
        pattern: Arc::new(EllPattern {
            n_rows: n,
            n_cols_ext: n,
            col_idx,
            col_global,
            row_nnz,
            diag_pos,
        }),
        values,
    }
}

/// Right-hand side and iterates for `A x = b` with the all-ones exact solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemVectors {
    pub b: Vec<f64>,
    pub x_exact: Vec<f64>,
    /// Zero initial guess, halo-extended.
    pub x: Vec<f64>,
}

/// `b = A * 1`, i.e. the row sums (the halo copy of the ones vector is all ones).
pub fn generate_rhs(a: &EllMatrix<f64>) -> ProblemVectors {
    let n = a.n_rows();
    let b = (0..n)
        .map(|row| a.row_values(row).iter().fold(0.0, |s, &v| s + v * 1.0))
        .collect();
    ProblemVectors {
        b,
        x_exact: vec![1.0; n],
        x: vec![0.0; a.n_cols_ext()],
    }
}

/// Rounds the values to `f32` (round-to-nearest-even); the structure is shared.
pub fn to_low_precision(a: &EllMatrix<f64>) -> EllMatrix<f32> {
    EllMatrix {
        pattern: Arc::clone(&a.pattern),
        values: a.values.iter().map(|&v| v as f32).collect(),
    }
}

/// Writes entries as a MatrixMarket coordinate file (1-based indices).
pub fn write_matrix_market<W: Write>(
    mut w: W,
    n: usize,
    entries: &[(usize, usize, f64)],
) -> io::Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{n} {n} {}", entries.len())?;
    for &(r, c, v) in entries {
        writeln!(w, "{} {} {}", r + 1, c + 1, v)?;
    }
    Ok(())
}
