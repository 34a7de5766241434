use hpgmxp::coloring::Strategy;
use hpgmxp::comm::Communicator;
use hpgmxp::geometry::GlobalProblem;
use hpgmxp::krylov::{cgs2_orthogonalize, gmres_solve, spmv, GmresOptions, Precision};
use hpgmxp::metrics::{count_bytes, count_flops, Kernel, Motif};
use hpgmxp::multigrid::{fused_residual_restrict, prolong_add, MgHierarchy};
use hpgmxp::problem::generate_rhs;
use hpgmxp::smoother::{forward_gs_sweep, HaloMode, Sweeps};

fn hierarchy(local: [usize; 3], levels: usize) -> MgHierarchy {
    let d = GlobalProblem::new(local, 1).unwrap().domain(0);
    MgHierarchy::build(d, levels, Strategy::Greedy, 0, Sweeps::default()).unwrap()
}

#[test]
fn kernel_counters_match_model() {
    let h = hierarchy([4, 4, 4], 2);
    let lev = &h.levels[0];
    let (n, nnz, n_ext) = (lev.n_rows(), lev.a_hi.nnz(), lev.n_ext());
    let mut comm = Communicator::solo();

    let mut x = vec![1.0; n_ext];
    let mut y = vec![0.0; n];
    let f = spmv(
        &mut comm,
        &lev.a_hi,
        &lev.plan,
        &lev.schedule,
        &mut x,
        &mut y,
        true,
    );
    assert_eq!(
        f,
        count_flops(Kernel::Spmv {
            nnz,
            n_rows: n,
            n_ext
        })
    );

    let mut z = vec![0.0; n_ext];
    let f = forward_gs_sweep(
        &mut comm,
        &lev.a_hi,
        &lev.coloring,
        &lev.plan,
        &lev.schedule,
        &y,
        &mut z,
        HaloMode::Blocking,
    )
    .unwrap();
    assert_eq!(
        f,
        count_flops(Kernel::GsSweep {
            nnz,
            n_rows: n,
            n_ext
        })
    );

    let basis: Vec<Vec<f64>> = (0..3)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut w: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let mut hc = vec![0.0; 4];
    let f = cgs2_orthogonalize(&mut comm, &basis, &mut w, &mut hc);
    assert_eq!(f, count_flops(Kernel::Cgs2 { n, k: 3 }));

    let n_c = lev.f2c.len();
    let row_nnz_sum: usize = lev
        .f2c
        .iter()
        .map(|&r| lev.a_hi.pattern.row_nnz[r] as usize)
        .sum();
    let mut rc = vec![0.0; n_c];
    let f = fused_residual_restrict(&lev.a_hi, &y, &x, &lev.f2c, &mut rc);
    assert_eq!(
        f,
        count_flops(Kernel::FusedResidualRestrict {
            row_nnz_sum,
            n_coarse: n_c
        })
    );

    let f = prolong_add(&mut x, &rc, &lev.f2c);
    assert_eq!(f, count_flops(Kernel::ProlongAdd { n_coarse: n_c }));
}

#[test]
fn solve_tally_matches_model() {
    let h = hierarchy([4, 4, 4], 2);
    let (f, c) = (&h.levels[0], &h.levels[1]);
    let (n, nnz, n_ext) = (f.n_rows(), f.a_hi.nnz(), f.n_ext());
    let (nc, nnzc, nc_ext) = (c.n_rows(), c.a_hi.nnz(), c.n_ext());
    let row_nnz_sum: usize = f
        .f2c
        .iter()
        .map(|&r| f.a_hi.pattern.row_nnz[r] as usize)
        .sum();
    let b = generate_rhs(&f.a_hi).b;
    let k = 4;
    for precision in [Precision::Double, Precision::Mixed] {
        let mut x = vec![0.0; n_ext];
        let opts = GmresOptions {
            tol: 0.0,
            max_iters: k,
            ..Default::default()
        };
        let res = gmres_solve(&mut Communicator::solo(), &h, &b, &mut x, precision, &opts).unwrap();
        assert_eq!(res.iterations, k);
        let t = &res.tally;
        // k inner steps plus one final update: k + 1 V-cycles.
        let vcycles = (k + 1) as u64;
        let gs_fine = count_flops(Kernel::GsSweep {
            nnz,
            n_rows: n,
            n_ext,
        });
        let gs_coarse = count_flops(Kernel::GsSweep {
            nnz: nnzc,
            n_rows: nc,
            n_ext: nc_ext,
        });
        assert_eq!(t.get(Motif::Gs).flops, vcycles * (2 * gs_fine + gs_coarse));
        assert_eq!(
            t.get(Motif::Restriction).flops,
            vcycles
                * count_flops(Kernel::FusedResidualRestrict {
                    row_nnz_sum,
                    n_coarse: nc
                })
        );
        assert_eq!(t.get(Motif::Prolongation).flops, vcycles * nc as u64);
        // Two explicit residuals (start and end) plus k basis SpMVs.
        let spmv = count_flops(Kernel::Spmv {
            nnz,
            n_rows: n,
            n_ext,
        });
        assert_eq!(t.get(Motif::Spmv).flops, (k as u64 + 2) * spmv);
        let ortho: u64 = (1..=k)
            .map(|j| {
                count_flops(Kernel::Cgs2 { n, k: j })
                    + count_flops(Kernel::Norm { n })
                    + count_flops(Kernel::Scale { n })
            })
            .sum::<u64>()
            + count_flops(Kernel::BasisCombination { n, k });
        assert_eq!(t.get(Motif::Ortho).flops, ortho);
    }
}

#[test]
fn low_precision_moves_fewer_bytes() {
    for (nnz, n, n_ext) in [(1000, 64, 100), (27 * 4096, 4096, 4096 + 1000)] {
        for k in [
            Kernel::Spmv {
                nnz,
                n_rows: n,
                n_ext,
            },
            Kernel::GsSweep {
                nnz,
                n_rows: n,
                n_ext,
            },
        ] {
            let ratio = count_bytes(k, 4) as f64 / count_bytes(k, 8) as f64;
            assert!(ratio > 0.5 && ratio < 1.0, "{k:?}: {ratio}");
        }
    }
}
