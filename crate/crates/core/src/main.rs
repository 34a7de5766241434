use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hpgmxp::bench::{self, BenchConfig, BenchError, ValidationMode};
use hpgmxp::coloring::Strategy;
use hpgmxp::metrics::emit_report;

/// Mixed-precision GMRES + multigrid benchmark on a 27-point 3D stencil.
#[derive(Debug, Parser)]
#[command(name = "hpgmxp", version)]
struct Cli {
    #[arg(long, default_value_t = 16)]
    local_nx: usize,
    #[arg(long, default_value_t = 16)]
    local_ny: usize,
    #[arg(long, default_value_t = 16)]
    local_nz: usize,
    /// Number of simulated ranks (threads).
    #[arg(long, default_value_t = 1)]
    ranks: usize,
    #[arg(long, default_value_t = 4)]
    levels: usize,
    #[arg(long, default_value_t = 30)]
    restart: usize,
    /// Validation tolerance.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Inner iterations per timed repetition.
    #[arg(long, default_value_t = 300)]
    max_iters: usize,
    /// Iteration cap for validation solves.
    #[arg(long, default_value_t = 10_000)]
    nd_cap: usize,
    /// Minimum wall time for the mixed-precision phase.
    #[arg(long, default_value_t = 5.0)]
    time_seconds: f64,
    #[arg(long, default_value = "standard")]
    validation: ValidationMode,
    /// Ranks used by standard validation.
    #[arg(long, default_value_t = 1)]
    validation_ranks: usize,
    #[arg(long, default_value = "greedy")]
    coloring: Strategy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable communication/computation overlap.
    #[arg(long)]
    no_overlap: bool,
    /// Also write the JSON report here.
    #[arg(long)]
    report_path: Option<PathBuf>,
    /// Write the fine-level matrix in MatrixMarket format and exit.
    #[arg(long)]
    dump_matrix: Option<PathBuf>,
}

impl Cli {
    fn config(&self) -> BenchConfig {
        BenchConfig {
            local: [self.local_nx, self.local_ny, self.local_nz],
            ranks: self.ranks,
            levels: self.levels,
            restart: self.restart,
            tol: self.tol,
            max_iters: self.max_iters,
            nd_cap: self.nd_cap,
            validation: self.validation,
            validation_ranks: self.validation_ranks,
            time_seconds: self.time_seconds,
            coloring: self.coloring,
            seed: self.seed,
            overlap: !self.no_overlap,
        }
    }
}

fn execute(cli: &Cli) -> Result<(), BenchError> {
    let config = cli.config();
    if let Some(path) = &cli.dump_matrix {
        config.validate()?;
        return bench::dump_matrix(&config, path);
    }
    let report = bench::run(&config)?;
    let json = emit_report(&report);
    if let Some(path) = &cli.report_path {
        std::fs::write(path, &json)?;
    }
    println!("{json}");
    let s = &report.summary;
    eprintln!(
        "raw {:.3} GFLOP/s, penalty {:.4}, penalized {:.3} GFLOP/s, speedup {:.3}",
        s.raw_gflops, s.penalty, s.penalized_gflops, s.speedup
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
