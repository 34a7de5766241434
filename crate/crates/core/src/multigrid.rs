//! Geometric multigrid hierarchy and the V-cycle preconditioner.
//!
//! Restriction is injection from the even-coordinate fine points and
//! prolongation its transpose. Neither is stored as a matrix: each fine level
//! keeps `f2c`, the fine row of every coarse row, already expressed in both
//! levels' color-permuted orderings.

use std::time::Instant;

use thiserror::Error;

use crate::coloring::{color, permute_system, Coloring, Strategy};
use crate::comm::{build_halo_plan, Communicator, HaloPlan, OverlapSchedule, TopologyError};
use crate::geometry::{GeometryError, LocalDomain};
use crate::metrics::{count_bytes, Kernel, Motif, MotifTally};
use crate::problem::{generate_matrix, to_low_precision, EllMatrix, STENCIL_WIDTH};
use crate::real::Real;
use crate::smoother::{forward_gs_sweep, HaloMode, SmootherError, Sweeps};

/// Number of levels used by the benchmark.
pub const DEFAULT_LEVELS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MultigridError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Smoother(#[from] SmootherError),
    #[error("a hierarchy needs at least one level")]
    NoLevels,
}

#[derive(Debug, Clone)]
pub struct MgLevel {
    pub domain: LocalDomain,
    pub a_hi: EllMatrix<f64>,
    pub a_lo: EllMatrix<f32>,
    /// Coloring computed on the natural ordering; the matrices are permuted by it.
    pub coloring: Coloring,
    pub plan: HaloPlan,
    pub schedule: OverlapSchedule,
    /// Global id of every (permuted) owned row.
    pub row_global: Vec<usize>,
    /// Fine row of each coarse row of the next level; empty on the coarsest level.
    pub f2c: Vec<usize>,
}

impl MgLevel {
    /// Assembles, plans, colors and permutes one level.
    pub fn build(
        domain: LocalDomain,
        strategy: Strategy,
        seed: u64,
    ) -> Result<Self, MultigridError> {
        let mut a = generate_matrix(&domain);
        let plan = build_halo_plan(&domain, &mut a)?;
        let coloring = color(&a, strategy, seed.wrapping_add(domain.level as u64));
        let a_hi = permute_system(&a, &coloring);
        let plan = plan.permute_rows(&coloring.iperm);
        let a_lo = to_low_precision(&a_hi);
        let schedule = OverlapSchedule::new(&a_hi.pattern, coloring.color_range(0));
        let row_global = coloring
            .perm
            .iter()
            .map(|&old| domain.row_global(old))
            .collect();
        Ok(Self {
            domain,
            a_hi,
            a_lo,
            coloring,
            plan,
            schedule,
            row_global,
            f2c: Vec::new(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.a_hi.n_rows()
    }

    pub fn n_ext(&self) -> usize {
        self.plan.n_ext()
    }

    pub fn matrix<T: Real>(&self) -> &EllMatrix<T> {
        T::select(&self.a_hi, &self.a_lo)
    }
}

/// Coarse row -> fine row in natural (unpermuted) local orderings.
pub fn injection_map_natural(fine: &LocalDomain, coarse: &LocalDomain) -> Vec<usize> {
    (0..coarse.num_rows())
        .map(|c| {
            let [x, y, z] = coarse.local_coords(c);
            fine.local_index(2 * x, 2 * y, 2 * z)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MgHierarchy {
    /// Finest first.
    pub levels: Vec<MgLevel>,
    pub sweeps: Sweeps,
}

impl MgHierarchy {
    pub fn build(
        fine: LocalDomain,
        num_levels: usize,
        strategy: Strategy,
        seed: u64,
        sweeps: Sweeps,
    ) -> Result<Self, MultigridError> {
        if num_levels == 0 {
            return Err(MultigridError::NoLevels);
        }
        let mut domains = vec![fine];
        for _ in 1..num_levels {
            let next = domains.last().unwrap().coarsen()?;
            domains.push(next);
        }
        let mut levels = domains
            .into_iter()
            .map(|d| MgLevel::build(d, strategy, seed))
            .collect::<Result<Vec<_>, _>>()?;
        for l in 0..num_levels - 1 {
            let natural = injection_map_natural(&levels[l].domain, &levels[l + 1].domain);
            let coarse_perm = &levels[l + 1].coloring.perm;
            let fine_iperm = &levels[l].coloring.iperm;
            levels[l].f2c = coarse_perm
                .iter()
                .map(|&c_old| fine_iperm[natural[c_old]])
                .collect();
        }
        Ok(Self { levels, sweeps })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn finest(&self) -> &MgLevel {
        &self.levels[0]
    }
}

/// `v_c[i] = v_f[f2c[i]]`.
pub fn restrict_inject<T: Copy>(v_f: &[T], f2c: &[usize]) -> Vec<T> {
    f2c.iter().map(|&f| v_f[f]).collect()
}

/// Residual `b - A x` evaluated only at the injection points, written to `r_c`.
/// `x_f` must hold current halo values. Returns the counted flops.
pub fn fused_residual_restrict<T: Real>(
    a: &EllMatrix<T>,
    b_f: &[T],
    x_f: &[T],
    f2c: &[usize],
    r_c: &mut [T],
) -> u64 {
    let p = &a.pattern;
    let mut flops = 0u64;
    for (rc, &f) in r_c.iter_mut().zip(f2c) {
        let base = f * STENCIL_WIDTH;
        let nnz = p.row_nnz[f] as usize;
        let mut s = T::zero();
        for e in base..base + nnz {
            s += a.values[e] * x_f[p.col_idx[e] as usize];
        }
        *rc = b_f[f] - s;
        flops += 2 * nnz as u64 + 1;
    }
    flops
}

/// `x_f[f2c[i]] += x_c[i]`; every other fine entry is left alone.
pub fn prolong_add<T: Real>(x_f: &mut [T], x_c: &[T], f2c: &[usize]) -> u64 {
    for (&f, &c) in f2c.iter().zip(x_c) {
        x_f[f] += c;
    }
    f2c.len() as u64
}

/// Per-level scratch vectors for one precision.
#[derive(Debug, Clone)]
pub struct MgWorkspace<T> {
    /// Coarse right-hand sides, indexed by level (slot 0 unused).
    r: Vec<Vec<T>>,
    /// Coarse corrections (halo-extended), indexed by level (slot 0 unused).
    z: Vec<Vec<T>>,
}

impl<T: Real> MgWorkspace<T> {
    pub fn new(h: &MgHierarchy) -> Self {
        let r = h
            .levels
            .iter()
            .enumerate()
            .map(|(l, lev)| {
                if l == 0 {
                    Vec::new()
                } else {
                    vec![T::zero(); lev.n_rows()]
                }
            })
            .collect();
        let z = h
            .levels
            .iter()
            .enumerate()
            .map(|(l, lev)| {
                if l == 0 {
                    Vec::new()
                } else {
                    vec![T::zero(); lev.n_ext()]
                }
            })
            .collect();
        Self { r, z }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VcycleOptions {
    /// Overlap the first color of every non-zero-start sweep with its exchange.
    pub overlap: bool,
}

impl Default for VcycleOptions {
    fn default() -> Self {
        Self { overlap: true }
    }
}

/// Applies one V-cycle with zero initial guess: `z = M^{-1} r` on the finest
/// level. `z` is halo-extended; its previous contents are discarded.
pub fn mg_vcycle<T: Real>(
    comm: &mut Communicator,
    h: &MgHierarchy,
    r: &[T],
    z: &mut [T],
    ws: &mut MgWorkspace<T>,
    opts: VcycleOptions,
    tally: &mut MotifTally,
) -> Result<(), MultigridError> {
    let (ws_r, ws_z) = (&mut ws.r[1..], &mut ws.z[1..]);
    vcycle_level(comm, h, 0, r, z, ws_r, ws_z, opts, tally)
}

#[allow(clippy::too_many_arguments)]
fn vcycle_level<T: Real>(
    comm: &mut Communicator,
    h: &MgHierarchy,
    level: usize,
    r: &[T],
    z: &mut [T],
    ws_r: &mut [Vec<T>],
    ws_z: &mut [Vec<T>],
    opts: VcycleOptions,
    tally: &mut MotifTally,
) -> Result<(), MultigridError> {
    let lev = &h.levels[level];
    let a = lev.matrix::<T>();
    let later = if opts.overlap {
        HaloMode::Overlapped
    } else {
        HaloMode::Blocking
    };
    let gs = Kernel::GsSweep {
        nnz: a.nnz(),
        n_rows: a.n_rows(),
        n_ext: a.n_cols_ext(),
    };
    let sweep = |comm: &mut Communicator, z: &mut [T], mode: HaloMode, tally: &mut MotifTally| {
        let t0 = Instant::now();
        let flops = forward_gs_sweep(comm, a, &lev.coloring, &lev.plan, &lev.schedule, r, z, mode)?;
        tally.record(
            Motif::Gs,
            t0.elapsed().as_secs_f64(),
            flops,
            count_bytes(gs, T::BYTES),
        );
        Ok::<(), MultigridError>(())
    };

    z.fill(T::zero());
    let coarsest = level + 1 == h.num_levels();
    let first_sweeps = if coarsest {
        h.sweeps.coarsest
    } else {
        h.sweeps.pre
    };
    for s in 0..first_sweeps {
        sweep(
            comm,
            z,
            if s == 0 { HaloMode::AssumeZero } else { later },
            tally,
        )?;
    }
    if coarsest {
        return Ok(());
    }

    let (r_c, ws_r_rest) = ws_r.split_first_mut().expect("workspace per level");
    let (z_c, ws_z_rest) = ws_z.split_first_mut().expect("workspace per level");

    let t0 = Instant::now();
    comm.exchange(z, &lev.plan);
    let flops = fused_residual_restrict(a, r, z, &lev.f2c, r_c);
    let row_nnz_sum = lev.f2c.iter().map(|&f| a.pattern.row_nnz[f] as usize).sum();
    let k = Kernel::FusedResidualRestrict {
        row_nnz_sum,
        n_coarse: lev.f2c.len(),
    };
    tally.record(
        Motif::Restriction,
        t0.elapsed().as_secs_f64(),
        flops,
        count_bytes(k, T::BYTES),
    );

    vcycle_level(
        comm,
        h,
        level + 1,
        r_c,
        z_c,
        ws_r_rest,
        ws_z_rest,
        opts,
        tally,
    )?;

    let t0 = Instant::now();
    let flops = prolong_add(z, z_c, &lev.f2c);
    let k = Kernel::ProlongAdd {
        n_coarse: lev.f2c.len(),
    };
    tally.record(
        Motif::Prolongation,
        t0.elapsed().as_secs_f64(),
        flops,
        count_bytes(k, T::BYTES),
    );

    for _ in 0..h.sweeps.post {
        sweep(comm, z, later, tally)?;
    }
    Ok(())
}
