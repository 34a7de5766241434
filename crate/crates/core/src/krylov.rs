//! Right-preconditioned restarted GMRES with CGS2 and Givens-rotation QR, in
//! two precision modes sharing one code path.
//!
//! In [`Precision::Mixed`] the Krylov basis, Hessenberg matrix, rotations, the
//! projected right-hand side and the whole V-cycle live in `f32`; the outer
//! residual `b - A x`, its norm and the solution update stay in `f64`, so both
//! modes are held to the same convergence test. [`Precision::Double`] runs the
//! identical algorithm with `f64` storage throughout.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::comm::{Communicator, HaloPlan, OverlapSchedule};
use crate::metrics::{count_bytes, Kernel, Motif, MotifTally};
use crate::multigrid::{mg_vcycle, MgHierarchy, MgWorkspace, MultigridError, VcycleOptions};
use crate::problem::{EllMatrix, STENCIL_WIDTH};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KrylovError {
    /// The rotated Hessenberg column vanished (`mu == 0`).
    #[error("GMRES breakdown at inner step {step}")]
    Breakdown { step: usize },
    #[error(transparent)]
    Multigrid(#[from] MultigridError),
    #[error("invalid GMRES options: {0}")]
    InvalidOptions(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Double,
    Mixed,
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "double" => Ok(Precision::Double),
            "mixed" => Ok(Precision::Mixed),
            other => Err(format!("unknown precision mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresOptions {
    /// Restart length `m`.
    pub restart: usize,
    /// Relative residual target; `0.0` runs exactly `max_iters` inner steps.
    pub tol: f64,
    /// Cap on total inner iterations across restarts.
    pub max_iters: usize,
    /// Overlap halo exchanges with interior work in SpMV and Gauss-Seidel.
    pub overlap: bool,
    /// Record `max |Q^T Q - I|` at the end of every cycle (extra reductions).
    pub probe_orthogonality: bool,
    /// Record a digest of the replicated `H`, `t`, `c`, `s` after every step.
    pub trace_replicas: bool,
    /// Apply the multigrid V-cycle; `false` runs plain GMRES.
    pub preconditioned: bool,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self {
            restart: 30,
            tol: 1e-9,
            max_iters: 300,
            overlap: true,
            probe_orthogonality: false,
            trace_replicas: false,
            preconditioned: true,
        }
    }
}

/// Givens recurrence against the explicitly computed residual at a restart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualCheck {
    pub recurrence: f64,
    pub explicit: f64,
}

impl ResidualCheck {
    pub fn relative_gap(&self) -> f64 {
        (self.recurrence - self.explicit).abs() / self.explicit
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    /// Total inner (Arnoldi) iterations.
    pub iterations: usize,
    pub restarts: usize,
    /// Final `||b - A x|| / ||b||`, from the explicit residual.
    pub relative_residual: f64,
    pub converged: bool,
    /// Relative recurrence residual after each inner step.
    pub recurrence: Vec<f64>,
    /// Inner step count of each cycle.
    pub cycle_lengths: Vec<usize>,
    pub restart_checks: Vec<ResidualCheck>,
    pub orthogonality_loss: Vec<f64>,
    pub replica_digests: Vec<u64>,
    pub breakdown: bool,
    pub tally: MotifTally,
}

/// `y = A x` on the owned rows, refreshing the halo of `x` first. Returns
/// the counted flops.
#[allow(clippy::too_many_arguments)]
pub fn spmv<T: Real>(
    comm: &mut Communicator,
    a: &EllMatrix<T>,
    plan: &HaloPlan,
    schedule: &OverlapSchedule,
    x: &mut [T],
    y: &mut [T],
    overlap: bool,
) -> u64 {
    if overlap {
        let mut flops = 0;
        comm.exchange_overlapped(x, plan, |x| {
            flops += spmv_rows(a, x, y, schedule.interior.iter().copied());
        });
        flops + spmv_rows(a, x, y, schedule.boundary.iter().copied())
    } else {
        comm.exchange(x, plan);
        spmv_rows(a, x, y, 0..a.n_rows())
    }
}

/// SpMV restricted to `rows`; `x` must already hold current halo values.
pub fn spmv_rows<T: Real>(
    a: &EllMatrix<T>,
    x: &[T],
    y: &mut [T],
    rows: impl IntoIterator<Item = usize>,
) -> u64 {
    let p = &a.pattern;
    let mut flops = 0u64;
    for row in rows {
        let base = row * STENCIL_WIDTH;
        let nnz = p.row_nnz[row] as usize;
        let mut s = T::zero();
        for e in base..base + nnz {
            s += a.values[e] * x[p.col_idx[e] as usize];
        }
        y[row] = s;
        flops += 2 * nnz as u64;
    }
    flops
}

#[inline]
fn local_dot<T: Real>(a: &[T], b: &[T]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0.0f64; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += xa[l].to_f64() * xb[l].to_f64();
        }
    }
    let tail = ra
        .iter()
        .zip(rb)
        .fold(0.0, |s, (&x, &y)| s + x.to_f64() * y.to_f64());
    acc.iter().sum::<f64>() + tail
}

/// Global 2-norm; local sums accumulate in `f64`.
pub fn norm2<T: Real>(comm: &mut Communicator, v: &[T]) -> f64 {
    comm.all_reduce_sum(local_dot(v, v)).sqrt()
}

const BLOCK: usize = 256;

/// Two passes of classical Gram-Schmidt of `w` against `basis`
/// (`h <- Q^T w; w <- w - Q h`), summing both passes' coefficients into
/// `h_out`. Each pass reduces its `k` inner products in one collective.
/// Returns the counted flops.
pub fn cgs2_orthogonalize<T: Real>(
    comm: &mut Communicator,
    basis: &[Vec<T>],
    w: &mut [T],
    h_out: &mut [f64],
) -> u64 {
    let k = basis.len();
    let n = w.len();
    h_out[..k].fill(0.0);
    let mut h = vec![0.0f64; k];
    let mut h_t = vec![T::zero(); k];
    let mut flops = 0u64;
    for _pass in 0..2 {
        for (hj, q) in h.iter_mut().zip(basis) {
            *hj = local_dot(&q[..n], w);
            flops += 2 * n as u64;
        }
        comm.all_reduce_sum_slice(&mut h);
        for (ht, &hj) in h_t.iter_mut().zip(&h) {
            *ht = T::from_f64(hj);
        }
        for (blk, wb) in w.chunks_mut(BLOCK).enumerate() {
            let lo = blk * BLOCK;
            let mut acc = [T::zero(); BLOCK];
            let acc = &mut acc[..wb.len()];
            for (q, &hj) in basis.iter().zip(&h_t) {
                for (a, &qi) in acc.iter_mut().zip(&q[lo..lo + wb.len()]) {
                    *a += qi * hj;
                }
            }
            for (wi, &a) in wb.iter_mut().zip(acc.iter()) {
                *wi -= a;
            }
        }
        flops += (2 * n * k + n) as u64;
        for (o, &hj) in h_out.iter_mut().zip(&h) {
            *o += hj;
        }
    }
    flops
}

/// Applies the previous rotations to Hessenberg column `k` (entries
/// `0..=k+1`), then builds rotation `k` to annihilate `h[k+1]` and updates
/// `t`. Arithmetic is done in `f64`; results are stored back at `T`.
/// Returns the new residual estimate `|t[k+1]|`.
pub fn givens_update<T: Real>(
    hcol: &mut [T],
    t: &mut [T],
    c: &mut [T],
    s: &mut [T],
    k: usize,
) -> Result<f64, KrylovError> {
    for j in 0..k {
        let (cj, sj) = (c[j].to_f64(), s[j].to_f64());
        let (a, b) = (hcol[j].to_f64(), hcol[j + 1].to_f64());
        hcol[j] = T::from_f64(cj * a + sj * b);
        hcol[j + 1] = T::from_f64(-sj * a + cj * b);
    }
    let (a, b) = (hcol[k].to_f64(), hcol[k + 1].to_f64());
    let mu = a.hypot(b);
    if mu == 0.0 {
        return Err(KrylovError::Breakdown { step: k });
    }
    let (ck, sk) = (a / mu, b / mu);
    c[k] = T::from_f64(ck);
    s[k] = T::from_f64(sk);
    hcol[k] = T::from_f64(mu);
    hcol[k + 1] = T::zero();
    let tk = t[k].to_f64();
    t[k + 1] = T::from_f64(-sk * tk);
    t[k] = T::from_f64(ck * tk);
    Ok(t[k + 1].to_f64().abs())
}

/// Solves the `k x k` upper-triangular system `R y = t` in `f64`; column `j`
/// of `R` is `cols[j][..=j]`.
pub fn back_substitute<T: Real>(cols: &[Vec<T>], t: &[T], k: usize) -> Vec<f64> {
    let mut y: Vec<f64> = t[..k].iter().map(|v| v.to_f64()).collect();
    for i in (0..k).rev() {
        y[i] /= cols[i][i].to_f64();
        let yi = y[i];
        for (r, yr) in y.iter_mut().enumerate().take(i) {
            *yr -= cols[i][r].to_f64() * yi;
        }
    }
    y
}

/// Krylov storage for one precision.
#[derive(Debug, Clone)]
pub struct GmresWorkspace<T> {
    pub m: usize,
    /// `m + 1` basis vectors over the owned rows.
    pub q: Vec<Vec<T>>,
    /// `m` Hessenberg columns of length `m + 1`.
    pub h: Vec<Vec<T>>,
    pub t: Vec<T>,
    pub c: Vec<T>,
    pub s: Vec<T>,
    /// Preconditioned vector, halo-extended.
    pub z: Vec<T>,
    pub w: Vec<T>,
    pub mg: MgWorkspace<T>,
}

impl<T: Real> GmresWorkspace<T> {
    pub fn new(h: &MgHierarchy, m: usize) -> Self {
        let n = h.finest().n_rows();
        let n_ext = h.finest().n_ext();
        Self {
            m,
            q: vec![vec![T::zero(); n]; m + 1],
            h: vec![vec![T::zero(); m + 1]; m],
            t: vec![T::zero(); m + 1],
            c: vec![T::zero(); m + 1],
            s: vec![T::zero(); m + 1],
            z: vec![T::zero(); n_ext],
            w: vec![T::zero(); n],
            mg: MgWorkspace::new(h),
        }
    }

    fn digest(&self, k: usize) -> u64 {
        let mut hasher = DefaultHasher::new();
        for col in &self.h[..=k] {
            for v in col {
                v.to_f64().to_bits().hash(&mut hasher);
            }
        }
        for arr in [&self.t, &self.c, &self.s] {
            for v in arr.iter() {
                v.to_f64().to_bits().hash(&mut hasher);
            }
        }
        hasher.finish()
    }
}

/// Solves `A x = b` from the initial guess in `x` (halo-extended, `f64`).
pub fn gmres_solve(
    comm: &mut Communicator,
    h: &MgHierarchy,
    b: &[f64],
    x: &mut [f64],
    precision: Precision,
    opts: &GmresOptions,
) -> Result<SolveResult, KrylovError> {
    match precision {
        Precision::Double => {
            let mut ws = GmresWorkspace::<f64>::new(h, opts.restart);
            gmres_solve_with(comm, h, b, x, &mut ws, opts)
        }
        Precision::Mixed => {
            let mut ws = GmresWorkspace::<f32>::new(h, opts.restart);
            gmres_solve_with(comm, h, b, x, &mut ws, opts)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn apply_preconditioner<T: Real>(
    comm: &mut Communicator,
    h: &MgHierarchy,
    r: &[T],
    z: &mut [T],
    mg: &mut MgWorkspace<T>,
    opts: &GmresOptions,
    tally: &mut MotifTally,
) -> Result<(), KrylovError> {
    if opts.preconditioned {
        let vopts = VcycleOptions {
            overlap: opts.overlap,
        };
        mg_vcycle(comm, h, r, z, mg, vopts, tally)?;
    } else {
        z[..r.len()].copy_from_slice(r);
    }
    Ok(())
}

fn time<R>(tally: &mut MotifTally, motif: Motif, bytes: u64, f: impl FnOnce() -> (R, u64)) -> R {
    let t0 = Instant::now();
    let (out, flops) = f();
    tally.record(motif, t0.elapsed().as_secs_f64(), flops, bytes);
    out
}

/// [`gmres_solve`] with caller-provided storage; `T` selects the mode.
pub fn gmres_solve_with<T: Real>(
    comm: &mut Communicator,
    h: &MgHierarchy,
    b: &[f64],
    x: &mut [f64],
    ws: &mut GmresWorkspace<T>,
    opts: &GmresOptions,
) -> Result<SolveResult, KrylovError> {
    if opts.restart == 0 {
        return Err(KrylovError::InvalidOptions(
            "restart length must be positive".into(),
        ));
    }
    if ws.m != opts.restart {
        return Err(KrylovError::InvalidOptions(format!(
            "workspace restart {} != options restart {}",
            ws.m, opts.restart
        )));
    }
    let fine = h.finest();
    let n = fine.n_rows();
    let a_hi = &fine.a_hi;
    let a_t = fine.matrix::<T>();
    let m = opts.restart;
    let vb = T::BYTES;
    let mut tally = MotifTally::default();

    let mut res = SolveResult {
        iterations: 0,
        restarts: 0,
        relative_residual: 0.0,
        converged: false,
        recurrence: Vec::new(),
        cycle_lengths: Vec::new(),
        restart_checks: Vec::new(),
        orthogonality_loss: Vec::new(),
        replica_digests: Vec::new(),
        breakdown: false,
        tally: MotifTally::default(),
    };

    let rho0 = time(
        &mut tally,
        Motif::VectorOps,
        count_bytes(Kernel::Norm { n }, 8),
        || (norm2(comm, &b[..n]), 2 * n as u64),
    );
    if rho0 == 0.0 {
        x[..n].fill(0.0);
        res.converged = true;
        res.tally = tally;
        return Ok(res);
    }

    let spmv_hi = Kernel::Spmv {
        nnz: a_hi.nnz(),
        n_rows: n,
        n_ext: fine.n_ext(),
    };
    let mut r_hi = vec![0.0f64; n];
    let mut last_recurrence: Option<f64> = None;
    let mut h_coeffs = vec![0.0f64; m + 1];

    loop {
        // Explicit residual in f64.
        time(&mut tally, Motif::Spmv, count_bytes(spmv_hi, 8), || {
            (
                (),
                spmv(
                    comm,
                    a_hi,
                    &fine.plan,
                    &fine.schedule,
                    x,
                    &mut r_hi,
                    opts.overlap,
                ),
            )
        });
        time(
            &mut tally,
            Motif::VectorOps,
            count_bytes(Kernel::Waxpby { n }, 8),
            || {
                for (r, &bi) in r_hi.iter_mut().zip(b) {
                    *r = bi - *r;
                }
                ((), 3 * n as u64)
            },
        );
        let rho = time(
            &mut tally,
            Motif::VectorOps,
            count_bytes(Kernel::Norm { n }, 8),
            || (norm2(comm, &r_hi), 2 * n as u64),
        );
        if let Some(rec) = last_recurrence.take() {
            res.restart_checks.push(ResidualCheck {
                recurrence: rec,
                explicit: rho,
            });
        }
        res.relative_residual = rho / rho0;
        if rho / rho0 < opts.tol || rho == 0.0 {
            res.converged = true;
            break;
        }
        if res.iterations >= opts.max_iters || res.breakdown {
            break;
        }
        if !res.cycle_lengths.is_empty() {
            res.restarts += 1;
        }

        time(
            &mut tally,
            Motif::VectorOps,
            count_bytes(Kernel::Scale { n }, vb),
            || {
                for (q, &r) in ws.q[0].iter_mut().zip(&r_hi) {
                    *q = T::from_f64(r / rho);
                }
                ((), n as u64)
            },
        );
        ws.t.fill(T::zero());
        ws.c.fill(T::zero());
        ws.s.fill(T::zero());
        for col in ws.h.iter_mut() {
            col.fill(T::zero());
        }
        ws.t[0] = T::from_f64(rho);

        let mut rho_k = rho;
        let mut k = 0;
        while k < m {
            if rho_k / rho0 < opts.tol || res.iterations >= opts.max_iters {
                break;
            }
            apply_preconditioner(comm, h, &ws.q[k], &mut ws.z, &mut ws.mg, opts, &mut tally)?;

            let spmv_t = Kernel::Spmv {
                nnz: a_t.nnz(),
                n_rows: n,
                n_ext: fine.n_ext(),
            };
            time(&mut tally, Motif::Spmv, count_bytes(spmv_t, vb), || {
                (
                    (),
                    spmv(
                        comm,
                        a_t,
                        &fine.plan,
                        &fine.schedule,
                        &mut ws.z,
                        &mut ws.w,
                        opts.overlap,
                    ),
                )
            });

            let (done, rest) = ws.q.split_at_mut(k + 1);
            let w = &mut ws.w;
            time(
                &mut tally,
                Motif::Ortho,
                count_bytes(Kernel::Cgs2 { n, k: k + 1 }, vb),
                || ((), cgs2_orthogonalize(comm, done, w, &mut h_coeffs)),
            );
            let beta = time(
                &mut tally,
                Motif::Ortho,
                count_bytes(Kernel::Norm { n }, vb),
                || (norm2(comm, w), 2 * n as u64),
            );
            let next = &mut rest[0];
            time(
                &mut tally,
                Motif::Ortho,
                count_bytes(Kernel::Scale { n }, vb),
                || {
                    if beta > 0.0 {
                        for (q, &wi) in next.iter_mut().zip(w.iter()) {
                            *q = T::from_f64(wi.to_f64() / beta);
                        }
                    } else {
                        next.fill(T::zero());
                    }
                    ((), n as u64)
                },
            );

            let col = &mut ws.h[k];
            for (dst, &src) in col.iter_mut().zip(&h_coeffs[..=k]) {
                *dst = T::from_f64(src);
            }
            col[k + 1] = T::from_f64(beta);

            match givens_update(col, &mut ws.t, &mut ws.c, &mut ws.s, k) {
                Ok(r) => rho_k = r,
                Err(KrylovError::Breakdown { .. }) => {
                    res.breakdown = true;
                    break;
                }
                Err(e) => return Err(e),
            }
            if opts.trace_replicas {
                res.replica_digests.push(ws.digest(k));
            }
            res.iterations += 1;
            res.recurrence.push(rho_k / rho0);
            k += 1;
            if beta == 0.0 {
                break;
            }
        }
        res.cycle_lengths.push(k);

        if opts.probe_orthogonality && k > 0 {
            res.orthogonality_loss
                .push(orthogonality_loss(comm, &ws.q[..=k]));
        }
        if k == 0 {
            continue;
        }

        // Least-squares solution, basis combination, preconditioned update.
        let y = back_substitute(&ws.h, &ws.t, k);
        let q = &ws.q;
        let w = &mut ws.w;
        time(
            &mut tally,
            Motif::Ortho,
            count_bytes(Kernel::BasisCombination { n, k }, vb),
            || {
                let yt: Vec<T> = y.iter().map(|&v| T::from_f64(v)).collect();
                w.fill(T::zero());
                for (blk, wb) in w.chunks_mut(BLOCK).enumerate() {
                    let (lo, len) = (blk * BLOCK, wb.len());
                    for (qj, &yj) in q[..k].iter().zip(&yt) {
                        for (wi, &qi) in wb.iter_mut().zip(&qj[lo..lo + len]) {
                            *wi += qi * yj;
                        }
                    }
                }
                ((), (2 * n * k) as u64)
            },
        );
        apply_preconditioner(comm, h, &ws.w, &mut ws.z, &mut ws.mg, opts, &mut tally)?;
        let z = &ws.z;
        time(
            &mut tally,
            Motif::VectorOps,
            count_bytes(Kernel::Waxpby { n }, 8),
            || {
                for (xi, zi) in x[..n].iter_mut().zip(z) {
                    *xi += zi.to_f64();
                }
                ((), 3 * n as u64)
            },
        );
        last_recurrence = Some(rho_k);
    }

    res.tally = tally;
    Ok(res)
}

/// `max |Q^T Q - I|` over the given basis vectors.
pub fn orthogonality_loss<T: Real>(comm: &mut Communicator, q: &[Vec<T>]) -> f64 {
    let k = q.len();
    let mut g = vec![0.0f64; k * k];
    for i in 0..k {
        for j in 0..=i {
            g[i * k + j] = local_dot(&q[i], &q[j]);
        }
    }
    comm.all_reduce_sum_slice(&mut g);
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..=i {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[i * k + j] - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coloring::Strategy;
    use crate::geometry::GlobalProblem;
    use crate::problem::generate_rhs;
    use crate::smoother::Sweeps;

    fn hierarchy(dims: [usize; 3], levels: usize) -> MgHierarchy {
        let d = GlobalProblem::new(dims, 1).unwrap().domain(0);
        MgHierarchy::build(d, levels, Strategy::Greedy, 0, Sweeps::default()).unwrap()
    }

    fn dense(a: &EllMatrix<f64>) -> Vec<Vec<f64>> {
        let n = a.n_rows();
        let mut d = vec![vec![0.0; n]; n];
        for (r, c, v) in a.triplets() {
            d[r][c] += v;
        }
        d
    }

    #[test]
    fn spmv_examples() {
        let h = hierarchy([4, 4, 4], 1);
        let lev = h.finest();
        let n = lev.n_rows();
        let mut comm = Communicator::solo();
        let mut y = vec![0.0; n];

        let mut ones = vec![1.0; n];
        spmv(
            &mut comm,
            &lev.a_hi,
            &lev.plan,
            &lev.schedule,
            &mut ones,
            &mut y,
            false,
        );
        assert_eq!(y, generate_rhs(&lev.a_hi).b);

        let mut zeros = vec![0.0; n];
        spmv(
            &mut comm,
            &lev.a_hi,
            &lev.plan,
            &lev.schedule,
            &mut zeros,
            &mut y,
            true,
        );
        assert!(y.iter().all(|&v| v == 0.0));

        let mut x: Vec<f64> = (0..n).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let flops = spmv(
            &mut comm,
            &lev.a_hi,
            &lev.plan,
            &lev.schedule,
            &mut x,
            &mut y,
            true,
        );
        let d = dense(&lev.a_hi);
        for i in 0..n {
            let oracle: f64 = (0..n).map(|j| d[i][j] * x[j]).sum();
            assert_eq!(y[i].to_bits(), oracle.to_bits());
        }
        assert_eq!(flops, 2 * lev.a_hi.nnz() as u64);
    }

    #[test]
    fn cgs2_examples() {
        let mut comm = Communicator::solo();
        let q1 = vec![vec![1.0f64, 0.0, 0.0]];
        let mut w = vec![0.0, 2.0, -1.0];
        let mut h = vec![0.0; 2];
        cgs2_orthogonalize(&mut comm, &q1, &mut w, &mut h);
        assert_eq!(h[0], 0.0);
        assert_eq!(w, vec![0.0, 2.0, -1.0]);

        let v = [0.3f64, -0.5, 0.2, 0.7, 0.1];
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let q: Vec<f64> = v.iter().map(|x| x / nv).collect();
        let mut w = q.clone();
        cgs2_orthogonalize(&mut comm, std::slice::from_ref(&q), &mut w, &mut h);
        assert!((h[0] - 1.0).abs() < 1e-15);
        let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(wn <= 1e-14, "{wn}");
    }

    #[test]
    fn givens_examples() {
        // Already triangular column: identity rotation.
        let mut col = vec![2.0f64, 0.0];
        let mut t = vec![5.0, 0.0];
        let (mut c, mut s) = (vec![0.0; 2], vec![0.0; 2]);
        let rho = givens_update(&mut col, &mut t, &mut c, &mut s, 0).unwrap();
        assert_eq!((c[0], s[0]), (1.0, 0.0));
        assert_eq!(t[0], 5.0);
        assert_eq!(rho, 0.0);

        let mut col = vec![3.0f64, 4.0];
        let rho0 = 10.0;
        let mut t = vec![rho0, 0.0];
        let (mut c, mut s) = (vec![0.0; 2], vec![0.0; 2]);
        let rho = givens_update(&mut col, &mut t, &mut c, &mut s, 0).unwrap();
        assert_eq!(col, vec![5.0, 0.0]);
        assert!((c[0] - 0.6).abs() < 1e-15 && (s[0] - 0.8).abs() < 1e-15);
        assert!((t[1] + rho0 * 0.8).abs() < 1e-14);
        assert!((rho - 8.0).abs() < 1e-14);

        let mut col = vec![0.0f64, 0.0];
        assert_eq!(
            givens_update(&mut col, &mut t, &mut c, &mut s, 0),
            Err(KrylovError::Breakdown { step: 0 })
        );
    }

    #[test]
    fn back_substitution() {
        // R = [[2, 1], [0, 4]], t = [4, 8] -> y = [1, 2]
        let cols = vec![vec![2.0f64, 0.0, 0.0], vec![1.0, 4.0, 0.0]];
        let y = back_substitute(&cols, &[4.0, 8.0, 0.0], 2);
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn zero_rhs_converges_immediately() {
        let h = hierarchy([4, 4, 4], 2);
        let n = h.finest().n_rows();
        let b = vec![0.0; n];
        let mut x = vec![0.0; h.finest().n_ext()];
        let mut comm = Communicator::solo();
        for p in [Precision::Double, Precision::Mixed] {
            let r = gmres_solve(&mut comm, &h, &b, &mut x, p, &GmresOptions::default()).unwrap();
            assert!(r.converged);
            assert_eq!(r.iterations, 0);
            assert_eq!(r.relative_residual, 0.0);
        }
    }

    #[test]
    fn full_restart_converges_within_n_steps() {
        let h = hierarchy([2, 2, 2], 1);
        let n = h.finest().n_rows();
        let b = generate_rhs(&h.finest().a_hi).b;
        let mut x = vec![0.0; h.finest().n_ext()];
        let opts = GmresOptions {
            restart: n,
            tol: 1e-12,
            max_iters: n,
            ..Default::default()
        };
        let mut comm = Communicator::solo();
        let r = gmres_solve(&mut comm, &h, &b, &mut x, Precision::Double, &opts).unwrap();
        assert!(r.converged, "{r:?}");
        assert!(r.iterations <= n);
    }

    #[test]
    fn double_mode_recurrence_is_monotone_within_cycle() {
        let h = hierarchy([8, 8, 8], 3);
        let b = generate_rhs(&h.finest().a_hi).b;
        let mut x = vec![0.0; h.finest().n_ext()];
        let opts = GmresOptions {
            restart: 5,
            tol: 1e-10,
            ..Default::default()
        };
        let mut comm = Communicator::solo();
        let r = gmres_solve(&mut comm, &h, &b, &mut x, Precision::Double, &opts).unwrap();
        assert!(r.converged);
        let mut start = 0;
        for &len in &r.cycle_lengths {
            let cyc = &r.recurrence[start..start + len];
            assert!(cyc.windows(2).all(|w| w[1] <= w[0]));
            start += len;
        }
        assert!(r.restarts >= 1);
        assert!(r.relative_residual < 1e-10);
    }

    #[test]
    fn preconditioning_beats_plain_gmres() {
        let h = hierarchy([16, 16, 16], 4);
        let b = generate_rhs(&h.finest().a_hi).b;
        let mut comm = Communicator::solo();
        let run = |comm: &mut Communicator, preconditioned| {
            let opts = GmresOptions {
                preconditioned,
                max_iters: 2000,
                ..Default::default()
            };
            let mut x = vec![0.0; h.finest().n_ext()];
            gmres_solve(comm, &h, &b, &mut x, Precision::Double, &opts).unwrap()
        };
        let with = run(&mut comm, true);
        let without = run(&mut comm, false);
        assert!(with.converged && without.converged);
        assert!(
            with.iterations < without.iterations,
            "{} vs {}",
            with.iterations,
            without.iterations
        );
    }
}
