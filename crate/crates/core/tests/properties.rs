mod common;

use blocktri::acoustic::{LaguerreParams, PhiAccumulator};
use blocktri::build_partition_tree;
use blocktri::harness::{predict_preprocess_comm, predict_solve_comm, solve_on_ranks, CostModelParams, Mode};
use blocktri::schur::band::{probing_build, BandMatrix};
use blocktri::schur::{schur_apply, schur_solve, two_layer_problem, Preconditioner, SchurOptions};
use blocktri::{plan_build, plan_solve};
use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn plan_matches_dense(seed in any::<u64>(), n in 2usize..40, m in 1usize..5, p in 1usize..12) {
        let p = p.min(n);
        let mut r = rng(seed);
        let a = dominant(&mut r, n, m);
        let f = random_vector(&mut r, n, m);
        let plan = plan_build(&a, p).unwrap();
        let x = plan_solve(&plan, std::slice::from_ref(&f)).unwrap().remove(0).to_flat();
        let want = dense_solve(dense_of(&a), f.to_flat());
        prop_assert!(rel_inf(&x, &want) <= 1e-9);
    }

    #[test]
    fn harness_matches_plan_bitwise(seed in any::<u64>(), n in 2usize..30, m in 1usize..4, p in 1usize..10) {
        let p = p.min(n);
        let mut r = rng(seed);
        let a = dominant(&mut r, n, m);
        let f = random_vector(&mut r, n, m);
        let plan = plan_build(&a, p).unwrap();
        let direct = plan.solve(&f).unwrap().to_flat();
        let (seq, ts) = solve_on_ranks(&plan, &f, Mode::Sequential).unwrap();
        let (par, tp) = solve_on_ranks(&plan, &f, Mode::Parallel).unwrap();
        prop_assert_eq!(&ts, &tp);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&seq.to_flat()), bits(&par.to_flat()));
        prop_assert!(rel_inf(&seq.to_flat(), &direct) <= 1e-12);
    }

    #[test]
    fn stage_count_is_ceil_log2(p in 1usize..600) {
        let want = if p == 1 { 0 } else { (p as f64).log2().ceil() as usize };
        prop_assert_eq!(build_partition_tree(p).exchange_stages(), want);
    }

    #[test]
    fn cost_models_monotone(alpha in 0.0f64..1e-3, beta in 0.0f64..1e-6, m in 1usize..64, p in 2usize..4096) {
        let at = |m, p| CostModelParams { alpha, beta, m, p };
        let (a, b) = (at(m, p), at(m + 1, p));
        prop_assert!(predict_preprocess_comm(&b).unwrap() >= predict_preprocess_comm(&a).unwrap());
        prop_assert!(predict_solve_comm(&b).unwrap() >= predict_solve_comm(&a).unwrap());
        prop_assert!(predict_solve_comm(&at(m, 2 * p)).unwrap() >= predict_solve_comm(&a).unwrap());
    }

    #[test]
    fn probing_recovers_band(seed in any::<u64>(), n in 1usize..120, d in 0usize..6) {
        prop_assume!(2 * d < n);
        use rand::Rng;
        let mut r = rng(seed);
        let mut b = BandMatrix::zeros(n, d);
        for i in 0..n {
            b.set(i, i, r.gen_range(1.0..2.0));
            for j in i.saturating_sub(d)..i {
                let v = r.gen_range(-1.0..1.0);
                b.set(i, j, v);
                b.set(j, i, v);
            }
        }
        let got = probing_build(|x| Ok(b.matvec(x)), d, n).unwrap();
        for i in 0..n {
            for j in i.saturating_sub(d)..=(i + d).min(n - 1) {
                prop_assert!((got.get(i, j) - b.get(i, j)).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn incremental_phi_matches_direct(alpha in 0u32..6, eta in 0.5f64..50.0, xs in prop::collection::vec(0.1f64..2.0, 1..40)) {
        let lp = LaguerreParams::new(alpha, eta, xs.len()).unwrap();
        let mut acc = PhiAccumulator::new(1);
        for (m, &x) in xs.iter().enumerate() {
            acc.push(&lp, &[x]).unwrap();
            let direct: f64 = (0..=m).map(|k| lp.phi_scale(m) * lp.weight(k) * xs[k]).sum();
            prop_assert!((acc.phi(&lp)[0] - direct).abs() <= 1e-12 * direct.abs());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn schur_operator_symmetric(nx in 2usize..14, nz0 in 1usize..8, nz1 in 1usize..8, k1 in 0.1f64..20.0, seed in any::<u64>()) {
        use rand::Rng;
        let sys = two_layer_problem(nx, (nz0, nz1), (1.0, k1), 0.05).unwrap();
        let mut r = rng(seed);
        let x: Vec<f64> = (0..nx).map(|_| r.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..nx).map(|_| r.gen_range(-1.0..1.0)).collect();
        let sx = schur_apply(&sys, &x).unwrap();
        let sy = schur_apply(&sys, &y).unwrap();
        let xy: f64 = sx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yx: f64 = sy.iter().zip(&x).map(|(a, b)| a * b).sum();
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!((xy - yx).abs() <= 1e-10 * norm(&x) * norm(&y));
    }

    #[test]
    fn elimination_matches_monolithic(nx in 2usize..16, nz0 in 1usize..10, nz1 in 1usize..10, k1 in 0.1f64..20.0, seed in any::<u64>()) {
        use rand::Rng;
        let sys = two_layer_problem(nx, (nz0, nz1), (1.0, k1), 0.0).unwrap();
        let a = sys.assemble().unwrap().to_dense();
        let n = sys.dim();
        let mut r = rng(seed);
        let f: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let opts = SchurOptions { tol: 1e-14, maxit: Some(500), precond: Preconditioner::Diagonal, ..SchurOptions::default() };
        let x = schur_solve(&sys, &f, &opts).unwrap().to_flat();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
        let want = dense_solve(rows, f);
        prop_assert!(rel_inf(&x, &want) <= 1e-8);
    }
}
