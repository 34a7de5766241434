//! Multicolor (independent set) ordering of a rank's local rows.
//!
//! Only couplings between owned rows constrain the colors; halo couplings are
//! ignored, so every subdomain is reordered without communication.

use std::str::FromStr;
use std::sync::Arc;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::problem::{EllMatrix, EllPattern, STENCIL_WIDTH};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// First-fit over ascending row index. Deterministic; the seed is ignored.
    #[default]
    Greedy,
    /// Jones-Plassmann-Luby rounds with seeded random priorities.
    Jpl,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "jpl" => Ok(Strategy::Jpl),
            other => Err(format!("unknown coloring strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coloring {
    /// Color of every row in the original ordering.
    pub color: Vec<u32>,
    pub num_colors: usize,
    /// Rows `color_offsets[c]..color_offsets[c + 1]` of the permuted system have color `c`.
    pub color_offsets: Vec<usize>,
    /// `perm[new] = old`.
    pub perm: Vec<usize>,
    /// `iperm[old] = new`.
    pub iperm: Vec<usize>,
}

impl Coloring {
    /// Builds the (color, original index) ordering from a color assignment.
    pub fn from_colors(color: Vec<u32>) -> Self {
        let n = color.len();
        let num_colors = color.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
        let mut counts = vec![0usize; num_colors + 1];
        for &c in &color {
            counts[c as usize + 1] += 1;
        }
        for c in 0..num_colors {
            counts[c + 1] += counts[c];
        }
        let color_offsets = counts.clone();
        let mut next = counts;
        let mut perm = vec![0usize; n];
        for (old, &c) in color.iter().enumerate() {
            perm[next[c as usize]] = old;
            next[c as usize] += 1;
        }
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        Self {
            color,
            num_colors,
            color_offsets,
            perm,
            iperm,
        }
    }

    pub fn color_range(&self, c: usize) -> std::ops::Range<usize> {
        self.color_offsets[c]..self.color_offsets[c + 1]
    }

    /// Coloring of an already permuted system: same blocks, identity maps.
    pub fn permuted(&self) -> Coloring {
        let n = self.color.len();
        let mut color = vec![0u32; n];
        for c in 0..self.num_colors {
            for r in self.color_range(c) {
                color[r] = c as u32;
            }
        }
        Coloring {
            color,
            num_colors: self.num_colors,
            color_offsets: self.color_offsets.clone(),
            perm: (0..n).collect(),
            iperm: (0..n).collect(),
        }
    }

    /// Checks that no two coupled owned rows share a color.
    pub fn is_valid_for(&self, pattern: &EllPattern) -> bool {
        (0..pattern.n_rows).all(|row| {
            pattern.row_cols(row).iter().all(|&c| {
                let c = c as usize;
                c == row || c >= pattern.n_rows || self.color[c] != self.color[row]
            })
        })
    }
}

/// Symmetrized owned-row adjacency, self loops and halo columns dropped.
fn local_adjacency(pattern: &EllPattern) -> Vec<Vec<u32>> {
    let n = pattern.n_rows;
    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
    for row in 0..n {
        for &c in pattern.row_cols(row) {
            if c >= 0 && (c as usize) < n && c as usize != row {
                adj[row].push(c as u32);
                adj[c as usize].push(row as u32);
            }
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    adj
}

fn smallest_free(adj: &[u32], color: &[u32], used: &mut Vec<bool>) -> u32 {
    used.iter_mut().for_each(|u| *u = false);
    for &j in adj {
        let c = color[j as usize];
        if c != u32::MAX {
            let c = c as usize;
            if c >= used.len() {
                used.resize(c + 1, false);
            }
            used[c] = true;
        }
    }
    used.iter().position(|&u| !u).unwrap_or(used.len()) as u32
}

pub fn color<T: Real>(a: &EllMatrix<T>, strategy: Strategy, seed: u64) -> Coloring {
    color_pattern(&a.pattern, strategy, seed)
}

pub fn color_pattern(pattern: &EllPattern, strategy: Strategy, seed: u64) -> Coloring {
    let adj = local_adjacency(pattern);
    let n = adj.len();
    let mut color = vec![u32::MAX; n];
    let mut used = Vec::with_capacity(STENCIL_WIDTH);

    match strategy {
        Strategy::Greedy => {
            for row in 0..n {
                color[row] = smallest_free(&adj[row], &color, &mut used);
            }
        }
        Strategy::Jpl => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let weight: Vec<u64> = (0..n).map(|_| rng.next_u64()).collect();
            // Ties on weight fall back to the row index.
            let beats = |i: usize, j: usize| (weight[i], i) > (weight[j], j);
            let mut remaining: Vec<usize> = (0..n).collect();
            while !remaining.is_empty() {
                let selected: Vec<usize> = remaining
                    .iter()
                    .copied()
                    .filter(|&i| {
                        adj[i]
                            .iter()
                            .all(|&j| color[j as usize] != u32::MAX || beats(i, j as usize))
                    })
                    .collect();
                // Selected rows are pairwise uncoupled, so assign independently.
                for &i in &selected {
                    color[i] = smallest_free(&adj[i], &color, &mut used);
                }
                remaining.retain(|&i| color[i] == u32::MAX);
            }
        }
    }
    Coloring::from_colors(color)
}

/// Symmetric permutation of the owned block: row `new` of the result is row
/// `perm[new]` of `a`, owned columns are renamed through `iperm`, halo
/// columns are left alone. Global columns are unchanged, so rows stay sorted.
pub fn permute_matrix<T: Real>(a: &EllMatrix<T>, perm: &[usize], iperm: &[usize]) -> EllMatrix<T> {
    let p = &a.pattern;
    let n = p.n_rows;
    assert_eq!(perm.len(), n);
    let mut pattern = EllPattern {
        n_rows: n,
        n_cols_ext: p.n_cols_ext,
        col_idx: vec![0; p.col_idx.len()],
        col_global: vec![0; p.col_global.len()],
        row_nnz: vec![0; n],
        diag_pos: vec![0; n],
    };
    let mut values = vec![T::zero(); a.values.len()];
    for (new, &old) in perm.iter().enumerate() {
        let (src, dst) = (old * STENCIL_WIDTH, new * STENCIL_WIDTH);
        for e in 0..STENCIL_WIDTH {
            let c = p.col_idx[src + e];
            pattern.col_idx[dst + e] = if c >= 0 && (c as usize) < n {
                iperm[c as usize] as i32
            } else {
                c
            };
        }
        pattern.col_global[dst..dst + STENCIL_WIDTH]
            .copy_from_slice(&p.col_global[src..src + STENCIL_WIDTH]);
        values[dst..dst + STENCIL_WIDTH].copy_from_slice(&a.values[src..src + STENCIL_WIDTH]);
        pattern.row_nnz[new] = p.row_nnz[old];
        pattern.diag_pos[new] = p.diag_pos[old];
    }
    EllMatrix {
        pattern: Arc::new(pattern),
        values,
    }
}

pub fn permute_system<T: Real>(a: &EllMatrix<T>, coloring: &Coloring) -> EllMatrix<T> {
    permute_matrix(a, &coloring.perm, &coloring.iperm)
}

/// `out[new] = v[perm[new]]` on the owned part; any halo tail is copied as is.
pub fn permute_vector<T: Copy>(v: &[T], perm: &[usize]) -> Vec<T> {
    let n = perm.len();
    let mut out: Vec<T> = perm.iter().map(|&old| v[old]).collect();
    out.extend_from_slice(&v[n..]);
    out
}

/// Inverse of [`permute_vector`].
pub fn unpermute_vector<T: Copy>(v: &[T], perm: &[usize]) -> Vec<T> {
    let mut out = v.to_vec();
    for (new, &old) in perm.iter().enumerate() {
        out[old] = v[new];
    }
    out
}
