//! Global grid, rank grid and local subdomain index arithmetic.
//!
//! Points are ordered x-fastest both globally (`gx + nx*(gy + ny*gz)`) and
//! locally; ranks are ordered the same way over the rank grid.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    fn from_index(i: usize) -> Axis {
        Self::ALL[i]
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("cannot coarsen: local {axis} dimension {dim} is odd")]
    Coarsening { axis: Axis, dim: usize },
    #[error("local coordinate ({i}, {j}, {k}) outside local box {dims:?}")]
    OutOfRange {
        i: usize,
        j: usize,
        k: usize,
        dims: [usize; 3],
    },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// Factors `p` ranks into a 3D rank grid.
///
/// Picks the triple with the smallest max/min ratio; ties prefer the ascending
/// triple `npx <= npy <= npz`, then the lexicographically smallest one.
pub fn factor_ranks(p: usize) -> [usize; 3] {
    assert!(p >= 1, "rank count must be positive");
    let mut best: Option<[usize; 3]> = None;
    for a in 1..=p {
        if !p.is_multiple_of(a) {
            continue;
        }
        for b in a..=p / a {
            if !(p / a).is_multiple_of(b) {
                continue;
            }
            let c = p / a / b;
            if c < b {
                continue;
            }
            let cand = [a, b, c];
            best = match best {
                None => Some(cand),
                // c/a < C/A  <=>  c*A < C*a
                Some(cur) => {
                    let lhs = cand[2] * cur[0];
                    let rhs = cur[2] * cand[0];
                    if lhs < rhs || (lhs == rhs && cand < cur) {
                        Some(cand)
                    } else {
                        Some(cur)
                    }
                }
            };
        }
    }
    best.expect("p >= 1 always has the factorization (1, 1, p)")
}

/// Global problem: grid dimensions, rank grid and per-rank box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlobalProblem {
    pub global: [usize; 3],
    pub ranks: [usize; 3],
    pub local: [usize; 3],
}

impl GlobalProblem {
    /// Weak-scaled problem: every rank owns a `local` box; `ranks` is factored
    /// with [`factor_ranks`].
    pub fn new(local: [usize; 3], ranks: usize) -> Result<Self, GeometryError> {
        if ranks == 0 {
            return Err(GeometryError::InvalidGrid(
                "rank count must be positive".into(),
            ));
        }
        Self::with_rank_grid(local, factor_ranks(ranks))
    }

    pub fn with_rank_grid(local: [usize; 3], ranks: [usize; 3]) -> Result<Self, GeometryError> {
        if local.contains(&0) || ranks.contains(&0) {
            return Err(GeometryError::InvalidGrid(format!(
                "local dims {local:?} and rank grid {ranks:?} must be positive"
            )));
        }
        let global = [
            local[0] * ranks[0],
            local[1] * ranks[1],
            local[2] * ranks[2],
        ];
        Ok(Self {
            global,
            ranks,
            local,
        })
    }

    pub fn num_ranks(&self) -> usize {
        self.ranks.iter().product()
    }

    pub fn num_points(&self) -> usize {
        self.global.iter().product()
    }

    pub fn rank_coords(&self, rank: usize) -> [usize; 3] {
        let [px, py, _] = self.ranks;
        [rank % px, (rank / px) % py, rank / (px * py)]
    }

    pub fn domain(&self, rank: usize) -> LocalDomain {
        assert!(rank < self.num_ranks(), "rank {rank} out of range");
        let coords = self.rank_coords(rank);
        LocalDomain {
            rank,
            coords,
            offset: [
                coords[0] * self.local[0],
                coords[1] * self.local[1],
                coords[2] * self.local[2],
            ],
            local: self.local,
            global: self.global,
            ranks: self.ranks,
            level: 0,
        }
    }

    /// Checks that the local box survives `levels - 1` halvings.
    pub fn check_levels(&self, levels: usize) -> Result<(), GeometryError> {
        let mut d = self.domain(0);
        for _ in 1..levels {
            d = d.coarsen()?;
        }
        Ok(())
    }
}

/// One rank's box on one multigrid level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalDomain {
    pub rank: usize,
    pub coords: [usize; 3],
    pub offset: [usize; 3],
    pub local: [usize; 3],
    pub global: [usize; 3],
    pub ranks: [usize; 3],
    /// 0 is the finest level.
    pub level: usize,
}

impl LocalDomain {
    pub fn num_rows(&self) -> usize {
        self.local.iter().product()
    }

    pub fn num_ranks(&self) -> usize {
        self.ranks.iter().product()
    }

    #[inline]
    pub fn local_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.local[0] * (j + self.local[1] * k)
    }

    #[inline]
    pub fn local_coords(&self, row: usize) -> [usize; 3] {
        let [lx, ly, _] = self.local;
        [row % lx, (row / lx) % ly, row / (lx * ly)]
    }

    pub fn local_to_global(&self, i: usize, j: usize, k: usize) -> Result<usize, GeometryError> {
        if i >= self.local[0] || j >= self.local[1] || k >= self.local[2] {
            return Err(GeometryError::OutOfRange {
                i,
                j,
                k,
                dims: self.local,
            });
        }
        Ok(self.global_index([self.offset[0] + i, self.offset[1] + j, self.offset[2] + k]))
    }

    /// Global row of an owned local row.
    #[inline]
    pub fn row_global(&self, row: usize) -> usize {
        let [i, j, k] = self.local_coords(row);
        self.global_index([self.offset[0] + i, self.offset[1] + j, self.offset[2] + k])
    }

    #[inline]
    pub fn global_index(&self, g: [usize; 3]) -> usize {
        g[0] + self.global[0] * (g[1] + self.global[1] * g[2])
    }

    #[inline]
    pub fn global_coords(&self, gid: usize) -> [usize; 3] {
        let [nx, ny, _] = self.global;
        [gid % nx, (gid / nx) % ny, gid / (nx * ny)]
    }

    /// Local row of a global point, if this rank owns it.
    pub fn global_to_local(&self, g: [usize; 3]) -> Option<usize> {
        let mut l = [0usize; 3];
        for a in 0..3 {
            if g[a] < self.offset[a] || g[a] >= self.offset[a] + self.local[a] {
                return None;
            }
            l[a] = g[a] - self.offset[a];
        }
        Some(self.local_index(l[0], l[1], l[2]))
    }

    pub fn owner_coords(&self, g: [usize; 3]) -> [usize; 3] {
        [
            g[0] / self.local[0],
            g[1] / self.local[1],
            g[2] / self.local[2],
        ]
    }

    pub fn rank_of(&self, coords: [usize; 3]) -> usize {
        coords[0] + self.ranks[0] * (coords[1] + self.ranks[1] * coords[2])
    }

    /// Halves every local dimension (and the offsets) for the next coarser level.
    pub fn coarsen(&self) -> Result<LocalDomain, GeometryError> {
        for (a, &d) in self.local.iter().enumerate() {
            if d % 2 != 0 {
                return Err(GeometryError::Coarsening {
                    axis: Axis::from_index(a),
                    dim: d,
                });
            }
        }
        let half = |v: [usize; 3]| [v[0] / 2, v[1] / 2, v[2] / 2];
        Ok(LocalDomain {
            rank: self.rank,
            coords: self.coords,
            offset: half(self.offset),
            local: half(self.local),
            global: half(self.global),
            ranks: self.ranks,
            level: self.level + 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Enumerates every ordered triple and keeps the minimum-ratio ones.
    fn factor_oracle(p: usize) -> [usize; 3] {
        let mut triples = Vec::new();
        for a in 1..=p {
            for b in 1..=p {
                for c in 1..=p {
                    if a * b * c == p {
                        triples.push([a, b, c]);
                    }
                }
            }
        }
        let ratio = |t: &[usize; 3]| {
            let mx = *t.iter().max().unwrap() as f64;
            let mn = *t.iter().min().unwrap() as f64;
            mx / mn
        };
        let best = triples.iter().map(ratio).fold(f64::INFINITY, f64::min);
        let mut winners: Vec<_> = triples
            .into_iter()
            .filter(|t| ratio(t) == best && t[0] <= t[1] && t[1] <= t[2])
            .collect();
        winners.sort();
        winners[0]
    }

    #[test]
    fn factor_examples() {
        assert_eq!(factor_ranks(8), [2, 2, 2]);
        assert_eq!(factor_ranks(1), [1, 1, 1]);
        assert_eq!(factor_oracle(12), [2, 2, 3]);
        assert_eq!(factor_ranks(12), [2, 2, 3]);
        assert_eq!(factor_ranks(7), [1, 1, 7]);
    }

    #[test]
    fn factor_matches_oracle() {
        for p in 1..=64 {
            assert_eq!(factor_ranks(p), factor_oracle(p), "p = {p}");
        }
    }

    #[test]
    fn local_to_global_examples() {
        let one = GlobalProblem::new([4, 4, 4], 1).unwrap().domain(0);
        assert_eq!(one.local_to_global(0, 0, 0).unwrap(), 0);
        assert_eq!(one.local_to_global(1, 0, 0).unwrap(), 1);

        let prob = GlobalProblem::new([2, 2, 2], 8).unwrap();
        assert_eq!(prob.global, [4, 4, 4]);
        let d = prob.domain(1);
        assert_eq!(d.coords, [1, 0, 0]);
        assert_eq!(d.local_to_global(0, 0, 0).unwrap(), 2);
    }

    #[test]
    fn local_to_global_rejects_out_of_range() {
        let d = GlobalProblem::new([4, 4, 4], 1).unwrap().domain(0);
        assert!(matches!(
            d.local_to_global(4, 0, 0),
            Err(GeometryError::OutOfRange { .. })
        ));
    }

    #[test]
    fn global_numbering_is_bijective_across_ranks() {
        let prob = GlobalProblem::new([2, 3, 2], 6).unwrap();
        let mut seen = vec![false; prob.num_points()];
        for r in 0..prob.num_ranks() {
            let d = prob.domain(r);
            for row in 0..d.num_rows() {
                let g = d.row_global(row);
                assert!(!seen[g]);
                seen[g] = true;
                assert_eq!(d.global_to_local(d.global_coords(g)), Some(row));
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn coarsen_examples() {
        let d = GlobalProblem::new([16, 16, 16], 1).unwrap().domain(0);
        assert_eq!(d.coarsen().unwrap().local, [8, 8, 8]);

        let mut d = GlobalProblem::new([8, 8, 8], 1).unwrap().domain(0);
        for _ in 0..3 {
            d = d.coarsen().unwrap();
        }
        assert_eq!(d.local, [1, 1, 1]);
        assert_eq!(d.level, 3);

        let d = GlobalProblem::new([6, 8, 8], 1).unwrap().domain(0);
        let d = d.coarsen().unwrap();
        assert_eq!(
            d.coarsen(),
            Err(GeometryError::Coarsening {
                axis: Axis::X,
                dim: 3
            })
        );
    }

    #[test]
    fn coarsen_halves_offsets() {
        let prob = GlobalProblem::new([4, 4, 4], 8).unwrap();
        let d = prob.domain(7).coarsen().unwrap();
        assert_eq!(d.offset, [2, 2, 2]);
        assert_eq!(d.global, [4, 4, 4]);
    }

    proptest! {
        #[test]
        fn round_trip_local_global(lx in 1usize..6, ly in 1usize..6, lz in 1usize..6, p in 1usize..9) {
            let prob = GlobalProblem::new([lx, ly, lz], p).unwrap();
            for r in 0..prob.num_ranks() {
                let d = prob.domain(r);
                for row in 0..d.num_rows() {
                    let [i, j, k] = d.local_coords(row);
                    let g = d.local_to_global(i, j, k).unwrap();
                    prop_assert_eq!(d.global_to_local(d.global_coords(g)), Some(row));
                }
            }
        }

        #[test]
        fn coarsening_iff_divisible(lx in 1usize..40, ly in 1usize..40, lz in 1usize..40, levels in 1usize..5) {
            let prob = GlobalProblem::new([lx, ly, lz], 1).unwrap();
            let div = 1usize << (levels - 1);
            let expect = lx % div == 0 && ly % div == 0 && lz % div == 0;
            prop_assert_eq!(prob.check_levels(levels).is_ok(), expect);
        }
    }
}
