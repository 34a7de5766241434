//! Flop and byte accounting, per-motif timers, the iteration-ratio penalty and
//! the benchmark report.
//!
//! Operations of either precision count the same. Counting rules per kernel
//! (`n` rows, `k` basis vectors, `nnz` stored entries):
//!
//! | kernel                 | flops                         |
//! |------------------------|-------------------------------|
//! | SpMV                   | `2 nnz`                       |
//! | Gauss-Seidel sweep     | `2 nnz + n`                   |
//! | dot, norm              | `2 n`                         |
//! | waxpby                 | `3 n`                         |
//! | scale                  | `n`                           |
//! | CGS2 step              | `2 (2 n k) + 2 (2 n k + n)`   |
//! | basis combination Q t  | `2 n k`                       |
//! | fused residual-restrict| `sum over coarse rows of 2 row_nnz + 1` |
//! | prolongation           | `n_coarse`                    |
//!
//! Givens rotations and the small triangular solve are not counted.
//! Bytes count matrix values at their native width, column indices at 4
//! bytes and every vector once per kernel.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("iteration counts must be positive (n_d = {n_d}, n_ir = {n_ir})")]
    NonPositiveCount { n_d: i64, n_ir: i64 },
    #[error("elapsed time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("unknown motif `{0}`")]
    UnknownMotif(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Motif {
    Gs,
    Spmv,
    Ortho,
    Restriction,
    Prolongation,
    VectorOps,
}

impl Motif {
    pub const ALL: [Motif; 6] = [
        Motif::Gs,
        Motif::Spmv,
        Motif::Ortho,
        Motif::Restriction,
        Motif::Prolongation,
        Motif::VectorOps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Motif::Gs => "gs",
            Motif::Spmv => "spmv",
            Motif::Ortho => "ortho",
            Motif::Restriction => "restriction",
            Motif::Prolongation => "prolongation",
            Motif::VectorOps => "vector_ops",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Motif {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Motif {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Motif::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| MetricsError::UnknownMotif(s.to_string()))
    }
}

/// Sizes of one kernel invocation, as fed to the flop and byte model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Spmv {
        nnz: usize,
        n_rows: usize,
        n_ext: usize,
    },
    GsSweep {
        nnz: usize,
        n_rows: usize,
        n_ext: usize,
    },
    Dot {
        n: usize,
    },
    Norm {
        n: usize,
    },
    Waxpby {
        n: usize,
    },
    Scale {
        n: usize,
    },
    Cgs2 {
        n: usize,
        k: usize,
    },
    BasisCombination {
        n: usize,
        k: usize,
    },
    FusedResidualRestrict {
        row_nnz_sum: usize,
        n_coarse: usize,
    },
    ProlongAdd {
        n_coarse: usize,
    },
}

impl Kernel {
    pub fn motif(self) -> Motif {
        match self {
            Kernel::Spmv { .. } => Motif::Spmv,
            Kernel::GsSweep { .. } => Motif::Gs,
            Kernel::Dot { .. }
            | Kernel::Norm { .. }
            | Kernel::Waxpby { .. }
            | Kernel::Scale { .. } => Motif::VectorOps,
            Kernel::Cgs2 { .. } | Kernel::BasisCombination { .. } => Motif::Ortho,
            Kernel::FusedResidualRestrict { .. } => Motif::Restriction,
            Kernel::ProlongAdd { .. } => Motif::Prolongation,
        }
    }
}

pub fn count_flops(kernel: Kernel) -> u64 {
    let f = match kernel {
        Kernel::Spmv { nnz, .. } => 2 * nnz,
        Kernel::GsSweep { nnz, n_rows, .. } => 2 * nnz + n_rows,
        Kernel::Dot { n } | Kernel::Norm { n } => 2 * n,
        Kernel::Waxpby { n } => 3 * n,
        Kernel::Scale { n } => n,
        Kernel::Cgs2 { n, k } => 2 * (2 * n * k) + 2 * (2 * n * k + n),
        Kernel::BasisCombination { n, k } => 2 * n * k,
        Kernel::FusedResidualRestrict {
            row_nnz_sum,
            n_coarse,
        } => 2 * row_nnz_sum + n_coarse,
        Kernel::ProlongAdd { n_coarse } => n_coarse,
    };
    f as u64
}

/// Modeled memory traffic for values of `value_bytes` width.
pub fn count_bytes(kernel: Kernel, value_bytes: usize) -> u64 {
    const IDX: usize = 4;
    let vb = value_bytes;
    let b = match kernel {
        Kernel::Spmv { nnz, n_rows, n_ext } => nnz * (vb + IDX) + (n_ext + n_rows) * vb,
        Kernel::GsSweep { nnz, n_rows, n_ext } => nnz * (vb + IDX) + (n_ext + 2 * n_rows) * vb,
        Kernel::Dot { n } => 2 * n * vb,
        Kernel::Norm { n } => n * vb,
        Kernel::Waxpby { n } => 3 * n * vb,
        Kernel::Scale { n } => 2 * n * vb,
        Kernel::Cgs2 { n, k } => 2 * (2 * n * k + 3 * n) * vb,
        Kernel::BasisCombination { n, k } => (n * k + n) * vb,
        Kernel::FusedResidualRestrict {
            row_nnz_sum,
            n_coarse,
        } => row_nnz_sum * (2 * vb + IDX) + n_coarse * (2 * vb + IDX),
        Kernel::ProlongAdd { n_coarse } => n_coarse * (3 * vb + IDX),
    };
    b as u64
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MotifStats {
    pub seconds: f64,
    pub flops: u64,
    pub bytes: u64,
}

/// Per-rank additive tallies, one slot per motif.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MotifTally {
    stats: [MotifStats; 6],
}

impl MotifTally {
    pub fn record(&mut self, motif: Motif, seconds: f64, flops: u64, bytes: u64) {
        let s = &mut self.stats[motif.index()];
        s.seconds += seconds;
        s.flops += flops;
        s.bytes += bytes;
    }

    /// Records a kernel invocation using the model's flop and byte counts.
    pub fn record_kernel(&mut self, kernel: Kernel, value_bytes: usize, seconds: f64) {
        self.record(
            kernel.motif(),
            seconds,
            count_flops(kernel),
            count_bytes(kernel, value_bytes),
        );
    }

    pub fn get(&self, motif: Motif) -> MotifStats {
        self.stats[motif.index()]
    }

    pub fn merge(&mut self, other: &MotifTally) {
        for m in Motif::ALL {
            let o = other.get(m);
            self.record(m, o.seconds, o.flops, o.bytes);
        }
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn total_flops(&self) -> u64 {
        self.stats.iter().map(|s| s.flops).sum()
    }

    pub fn total_seconds(&self) -> f64 {
        self.stats.iter().map(|s| s.seconds).sum()
    }
}

/// `min(1, n_d / n_ir)`.
pub fn penalty_factor(n_d: i64, n_ir: i64) -> Result<f64, MetricsError> {
    if n_d <= 0 || n_ir <= 0 {
        return Err(MetricsError::NonPositiveCount { n_d, n_ir });
    }
    if n_d >= n_ir {
        Ok(1.0)
    } else {
        Ok(n_d as f64 / n_ir as f64)
    }
}

pub fn gflops(flops: f64, seconds: f64) -> Result<f64, MetricsError> {
    if !(seconds > 0.0) {
        return Err(MetricsError::NonPositiveTime(seconds));
    }
    Ok(flops / seconds / 1e9)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub local: [usize; 3],
    pub ranks: usize,
    pub rank_grid: [usize; 3],
    pub global: [usize; 3],
    pub levels: usize,
    pub restart: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub time_seconds: f64,
    pub coloring: String,
    pub seed: u64,
    pub overlap: bool,
    pub validation_ranks: usize,
    pub nd_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub mode: String,
    pub n_d: usize,
    pub n_ir: usize,
    pub ratio: f64,
    /// Relative residual both solvers were driven to.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotifReport {
    pub seconds: f64,
    pub flops: u64,
    pub gflops: f64,
}

/// Keys are motif names plus `total`.
pub type PhaseReport = BTreeMap<String, MotifReport>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub raw_gflops: f64,
    pub penalty: f64,
    pub penalized_gflops: f64,
    /// Penalized mixed total over double total.
    pub speedup: f64,
    pub motif_speedup: BTreeMap<String, f64>,
    pub repetitions: usize,
    pub mxp_iterations: usize,
    pub double_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: ConfigEcho,
    pub validation: ValidationReport,
    pub mxp: PhaseReport,
    pub double: PhaseReport,
    pub summary: Summary,
}

/// Per-motif and total rows of a phase. `seconds` are the wall-clock maxima
/// over ranks and `flops` the sums.
pub fn phase_report(tally: &MotifTally, wall_seconds: f64) -> PhaseReport {
    let rate = |flops: u64, s: f64| gflops(flops as f64, s).unwrap_or(0.0);
    let mut out = PhaseReport::new();
    for m in Motif::ALL {
        let s = tally.get(m);
        out.insert(
            m.name().to_string(),
            MotifReport {
                seconds: s.seconds,
                flops: s.flops,
                gflops: rate(s.flops, s.seconds),
            },
        );
    }
    let total = tally.total_flops();
    out.insert(
        "total".to_string(),
        MotifReport {
            seconds: wall_seconds,
            flops: total,
            gflops: rate(total, wall_seconds),
        },
    );
    out
}

impl BenchReport {
    pub fn assemble(
        config: ConfigEcho,
        validation: ValidationReport,
        mxp: PhaseReport,
        double: PhaseReport,
        repetitions: usize,
        mxp_iterations: usize,
        double_iterations: usize,
    ) -> Self {
        let penalty = validation.ratio.min(1.0);
        let raw_gflops = mxp["total"].gflops;
        let ratio = |m: f64, d: f64| if d > 0.0 { m * penalty / d } else { 0.0 };
        let motif_speedup = mxp
            .iter()
            .filter(|(k, _)| k.as_str() != "total")
            .map(|(k, v)| (k.clone(), ratio(v.gflops, double[k].gflops)))
            .collect();
        let summary = Summary {
            raw_gflops,
            penalty,
            penalized_gflops: raw_gflops * penalty,
            speedup: ratio(raw_gflops, double["total"].gflops),
            motif_speedup,
            repetitions,
            mxp_iterations,
            double_iterations,
        };
        Self {
            config,
            validation,
            mxp,
            double,
            summary,
        }
    }

    /// Copy with every timing-derived field zeroed.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for phase in [&mut r.mxp, &mut r.double] {
            for v in phase.values_mut() {
                v.seconds = 0.0;
                v.gflops = 0.0;
            }
        }
        r.summary.raw_gflops = 0.0;
        r.summary.penalized_gflops = 0.0;
        r.summary.speedup = 0.0;
        r.summary.motif_speedup.values_mut().for_each(|v| *v = 0.0);
        r
    }
}

pub fn emit_report(report: &BenchReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

pub fn parse_report(text: &str) -> Result<BenchReport, serde_json::Error> {
    serde_json::from_str(text)
}
