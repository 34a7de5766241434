//! Benchmark driver: validation, the timed mixed-precision phase and the
//! double-precision reference phase.

use std::fs::File;
use std::io::{self, BufWriter};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::coloring::Strategy;
use crate::comm::{Communicator, RankWorld, WorldError};
use crate::geometry::{GeometryError, GlobalProblem};
use crate::krylov::{gmres_solve, norm2, GmresOptions, KrylovError, Precision};
use crate::metrics::{phase_report, BenchReport, ConfigEcho, Motif, MotifTally, ValidationReport};
use crate::multigrid::{MgHierarchy, MultigridError, DEFAULT_LEVELS};
use crate::problem::{generate_matrix, generate_rhs, write_matrix_market};
use crate::smoother::Sweeps;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValidationMode {
    /// Double and mixed solves to the tolerance on a small rank subset.
    #[default]
    Standard,
    /// Double solve on all ranks, capped at `nd_cap` iterations; mixed solve
    /// to whatever residual that reached.
    Fullscale,
}

impl ValidationMode {
    pub fn name(self) -> &'static str {
        match self {
            ValidationMode::Standard => "standard",
            ValidationMode::Fullscale => "fullscale",
        }
    }
}

impl FromStr for ValidationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(ValidationMode::Standard),
            "fullscale" => Ok(ValidationMode::Fullscale),
            other => Err(format!("unknown validation mode `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("internal protocol error: {0}")]
    Protocol(#[from] WorldError),
    #[error("solver error: {0}")]
    Solver(#[from] KrylovError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::Validation(_) => 3,
            BenchError::Protocol(_) => 4,
            BenchError::Solver(_) | BenchError::Io(_) => 1,
        }
    }
}

impl From<GeometryError> for BenchError {
    fn from(e: GeometryError) -> Self {
        BenchError::Config(e.to_string())
    }
}

impl From<MultigridError> for BenchError {
    fn from(e: MultigridError) -> Self {
        match e {
            MultigridError::Geometry(g) => g.into(),
            other => BenchError::Solver(other.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub local: [usize; 3],
    pub ranks: usize,
    pub levels: usize,
    pub restart: usize,
    /// Validation tolerance.
    pub tol: f64,
    /// Inner iterations per benchmark repetition.
    pub max_iters: usize,
    /// Validation iteration cap.
    pub nd_cap: usize,
    pub validation: ValidationMode,
    /// Ranks used by standard validation.
    pub validation_ranks: usize,
    /// Wall time the mixed phase keeps repeating for.
    pub time_seconds: f64,
    pub coloring: Strategy,
    pub seed: u64,
    pub overlap: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            local: [16, 16, 16],
            ranks: 1,
            levels: DEFAULT_LEVELS,
            restart: 30,
            tol: 1e-9,
            max_iters: 300,
            nd_cap: 10_000,
            validation: ValidationMode::Standard,
            validation_ranks: 1,
            time_seconds: 5.0,
            coloring: Strategy::Greedy,
            seed: 0,
            overlap: true,
        }
    }
}

impl BenchConfig {
    pub fn problem(&self) -> Result<GlobalProblem, BenchError> {
        Ok(GlobalProblem::new(self.local, self.ranks)?)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::Config(m.to_string()));
        if self.ranks == 0 || self.validation_ranks == 0 {
            return bad("rank counts must be positive");
        }
        if self.levels == 0 {
            return bad("at least one multigrid level is required");
        }
        if self.restart == 0 || self.max_iters == 0 || self.nd_cap == 0 {
            return bad("restart length and iteration limits must be positive");
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad("tolerance must lie in (0, 1)");
        }
        if !(self.time_seconds >= 0.0) || !self.time_seconds.is_finite() {
            return bad("time budget must be a finite non-negative number");
        }
        self.problem()?.check_levels(self.levels)?;
        Ok(())
    }

    fn echo(&self, problem: &GlobalProblem) -> ConfigEcho {
        ConfigEcho {
            local: self.local,
            ranks: self.ranks,
            rank_grid: problem.ranks,
            global: problem.global,
            levels: self.levels,
            restart: self.restart,
            tol: self.tol,
            max_iters: self.max_iters,
            time_seconds: self.time_seconds,
            coloring: match self.coloring {
                Strategy::Greedy => "greedy",
                Strategy::Jpl => "jpl",
            }
            .to_string(),
            seed: self.seed,
            overlap: self.overlap,
            validation_ranks: self.validation_ranks,
            nd_cap: self.nd_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOutcome {
    pub mode: ValidationMode,
    pub n_d: usize,
    pub n_ir: usize,
    /// `n_d / n_ir`, unclamped.
    pub ratio: f64,
    /// Relative residual reached by the double solve.
    pub residual: f64,
    pub mixed_converged: bool,
}

impl ValidationOutcome {
    pub fn report(&self) -> ValidationReport {
        ValidationReport {
            mode: self.mode.name().to_string(),
            n_d: self.n_d,
            n_ir: self.n_ir,
            ratio: self.ratio,
            residual: self.residual,
        }
    }
}

/// One rank's assembled system.
pub struct RankSystem {
    pub hierarchy: MgHierarchy,
    pub b: Vec<f64>,
}

impl RankSystem {
    pub fn build(
        problem: &GlobalProblem,
        rank: usize,
        config: &BenchConfig,
    ) -> Result<Self, BenchError> {
        let hierarchy = MgHierarchy::build(
            problem.domain(rank),
            config.levels,
            config.coloring,
            config.seed,
            Sweeps::default(),
        )?;
        let b = generate_rhs(&hierarchy.finest().a_hi).b;
        Ok(Self { hierarchy, b })
    }

    pub fn zero_guess(&self) -> Vec<f64> {
        vec![0.0; self.hierarchy.finest().n_ext()]
    }
}

fn solver_options(config: &BenchConfig, tol: f64, max_iters: usize) -> GmresOptions {
    GmresOptions {
        restart: config.restart,
        tol,
        max_iters,
        overlap: config.overlap,
        ..Default::default()
    }
}

/// Validation body, executed collectively by every rank of the world.
fn validate_on_rank(
    comm: &mut Communicator,
    sys: &RankSystem,
    config: &BenchConfig,
    mode: ValidationMode,
) -> Result<ValidationOutcome, BenchError> {
    let mut x = sys.zero_guess();
    let double = gmres_solve(
        comm,
        &sys.hierarchy,
        &sys.b,
        &mut x,
        Precision::Double,
        &solver_options(config, config.tol, config.nd_cap),
    )?;
    if mode == ValidationMode::Standard && !double.converged {
        return Err(BenchError::Validation(format!(
            "double-precision GMRES reached only {:.3e} after {} iterations",
            double.relative_residual, double.iterations
        )));
    }
    let target = if double.converged {
        config.tol
    } else {
        double.relative_residual
    };
    let mut x = sys.zero_guess();
    let mixed = gmres_solve(
        comm,
        &sys.hierarchy,
        &sys.b,
        &mut x,
        Precision::Mixed,
        &solver_options(config, target, config.nd_cap),
    )?;
    let (n_d, n_ir) = (double.iterations.max(1), mixed.iterations.max(1));
    Ok(ValidationOutcome {
        mode,
        n_d,
        n_ir,
        ratio: n_d as f64 / n_ir as f64,
        residual: double.relative_residual,
        mixed_converged: mixed.converged,
    })
}

fn first_error<T>(results: Vec<Result<T, BenchError>>) -> Result<Vec<T>, BenchError> {
    results.into_iter().collect()
}

/// Runs the validation phase in the configured mode.
pub fn run_validation(config: &BenchConfig) -> Result<ValidationOutcome, BenchError> {
    config.validate()?;
    let ranks = match config.validation {
        ValidationMode::Standard => config.validation_ranks,
        ValidationMode::Fullscale => config.ranks,
    };
    let problem = GlobalProblem::new(config.local, ranks)?;
    problem.check_levels(config.levels)?;
    let out = RankWorld::run(ranks, |comm| {
        let sys = RankSystem::build(&problem, comm.rank(), config)?;
        validate_on_rank(comm, &sys, config, config.validation)
    })?;
    Ok(first_error(out)?.swap_remove(0))
}

/// Results of one timed phase, reduced over ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOutcome {
    /// Per-motif flops summed over ranks, seconds maximized over ranks.
    pub tally: MotifTally,
    pub wall_seconds: f64,
    pub repetitions: usize,
    pub iterations: usize,
}

fn reduce_tally(comm: &mut Communicator, local: &MotifTally) -> MotifTally {
    let mut flops: Vec<f64> = Motif::ALL
        .iter()
        .map(|&m| local.get(m).flops as f64)
        .collect();
    let mut bytes: Vec<f64> = Motif::ALL
        .iter()
        .map(|&m| local.get(m).bytes as f64)
        .collect();
    comm.all_reduce_sum_slice(&mut flops);
    comm.all_reduce_sum_slice(&mut bytes);
    let mut out = MotifTally::default();
    for (i, &m) in Motif::ALL.iter().enumerate() {
        let secs = comm.all_reduce_max(local.get(m).seconds);
        out.record(m, secs, flops[i] as u64, bytes[i] as u64);
    }
    out
}

/// Repeats solves from a zero guess. With `reps = None` it repeats until the
/// time budget is spent (rank 0's clock decides, at least once); otherwise it
/// runs exactly `reps` solves.
fn timed_phase(
    comm: &mut Communicator,
    sys: &RankSystem,
    config: &BenchConfig,
    precision: Precision,
    reps: Option<usize>,
) -> Result<PhaseOutcome, BenchError> {
    // Tolerance 0: every repetition runs exactly `max_iters` inner steps.
    let opts = solver_options(config, 0.0, config.max_iters);
    let mut tally = MotifTally::default();
    let mut repetitions = 0;
    let mut iterations = 0;
    let start = Instant::now();
    loop {
        let mut x = sys.zero_guess();
        debug_assert_eq!(norm2(comm, &x[..sys.b.len()]), 0.0);
        let res = gmres_solve(comm, &sys.hierarchy, &sys.b, &mut x, precision, &opts)?;
        tally.merge(&res.tally);
        repetitions += 1;
        iterations += res.iterations;
        let done = match reps {
            Some(n) => repetitions >= n,
            None => {
                let expired = start.elapsed().as_secs_f64() >= config.time_seconds;
                comm.broadcast_from_root(if expired { 1.0 } else { 0.0 }) == 1.0
            }
        };
        if done {
            break;
        }
    }
    let wall = comm.all_reduce_max(start.elapsed().as_secs_f64());
    Ok(PhaseOutcome {
        tally: reduce_tally(comm, &tally),
        wall_seconds: wall,
        repetitions,
        iterations,
    })
}

struct RankOutcome {
    validation: ValidationOutcome,
    mxp: PhaseOutcome,
    double: PhaseOutcome,
}

fn rank_main(
    comm: &mut Communicator,
    problem: &GlobalProblem,
    config: &BenchConfig,
    validation: Option<&ValidationOutcome>,
) -> Result<RankOutcome, BenchError> {
    let sys = RankSystem::build(problem, comm.rank(), config)?;
    let validation = match validation {
        Some(v) => v.clone(),
        None => validate_on_rank(comm, &sys, config, ValidationMode::Fullscale)?,
    };
    let mxp = timed_phase(comm, &sys, config, Precision::Mixed, None)?;
    let double = timed_phase(comm, &sys, config, Precision::Double, Some(mxp.repetitions))?;
    Ok(RankOutcome {
        validation,
        mxp,
        double,
    })
}

/// Runs the timed phases given a completed validation.
pub fn run_benchmark(
    config: &BenchConfig,
    validation: &ValidationOutcome,
) -> Result<BenchReport, BenchError> {
    config.validate()?;
    let problem = config.problem()?;
    let out = RankWorld::run(config.ranks, |comm| {
        rank_main(comm, &problem, config, Some(validation))
    })?;
    Ok(assemble(config, &problem, first_error(out)?.swap_remove(0)))
}

/// All three phases. Full-scale validation runs inside the benchmark's rank
/// world; standard validation runs on its own smaller world first.
pub fn run(config: &BenchConfig) -> Result<BenchReport, BenchError> {
    config.validate()?;
    match config.validation {
        ValidationMode::Standard => {
            let v = run_validation(config)?;
            run_benchmark(config, &v)
        }
        ValidationMode::Fullscale => {
            let problem = config.problem()?;
            let out = RankWorld::run(config.ranks, |comm| rank_main(comm, &problem, config, None))?;
            Ok(assemble(config, &problem, first_error(out)?.swap_remove(0)))
        }
    }
}

fn assemble(config: &BenchConfig, problem: &GlobalProblem, r: RankOutcome) -> BenchReport {
    BenchReport::assemble(
        config.echo(problem),
        r.validation.report(),
        phase_report(&r.mxp.tally, r.mxp.wall_seconds),
        phase_report(&r.double.tally, r.double.wall_seconds),
        r.mxp.repetitions,
        r.mxp.iterations,
        r.double.iterations,
    )
}

/// Writes the finest-level global matrix as MatrixMarket.
pub fn dump_matrix(config: &BenchConfig, path: &Path) -> Result<(), BenchError> {
    let problem = config.problem()?;
    let mut entries = Vec::new();
    for rank in 0..problem.num_ranks() {
        let d = problem.domain(rank);
        let a = generate_matrix(&d);
        let rows: Vec<usize> = (0..d.num_rows()).map(|r| d.row_global(r)).collect();
        entries.extend(a.global_triplets(&rows));
    }
    entries.sort_by_key(|&(r, c, _)| (r, c));
    let w = BufWriter::new(File::create(path)?);
    write_matrix_market(w, problem.num_points(), &entries)?;
    Ok(())
}
