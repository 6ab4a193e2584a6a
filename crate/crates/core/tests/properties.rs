use proptest::prelude::*;

use carma_indirect::aux_ar;
use carma_indirect::contamination::{self, OutlierConfig, OutlierMode, Temporal};
use carma_indirect::experiment::{ConfigFile, EstimatorKind, EstimatorOutcome, ReplicationTrace};
use carma_indirect::gm::{self, GmConfig, PsiSpec};
use carma_indirect::indirect::{IndirectConfig, IndirectObjective, LinkMode};
use carma_indirect::levy::{simulate_carma_path, DriverConfig, SampledSeries};
use carma_indirect::linalg;
use carma_indirect::model::{self, AcfTable, ModelFamily, ThetaParam};
use carma_indirect::report::ReportTable;
use carma_indirect::rng::{stream, StreamRole};

fn car1_path(theta: f64, n: usize, seed: u64) -> SampledSeries {
    let spec = model::build_state_space_raw(&[theta], &ModelFamily::car1()).unwrap();
    simulate_carma_path(&spec, n, 1.0, &DriverConfig::brownian(1.0), &mut stream(seed, 0, StreamRole::Auxiliary)).unwrap()
}

/// CARMA(3,1) parameter with AR roots `-l1, -l2, -l3`.
fn carma31_from_roots(l: [f64; 3], c1: f64, c0: f64) -> Vec<f64> {
    let a1 = l[0] + l[1] + l[2];
    let a2 = l[0] * l[1] + l[0] * l[2] + l[1] * l[2];
    let a3 = l[0] * l[1] * l[2];
    vec![-a3, -a2, -a1, c1, c0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn huber_is_odd_and_bounded(u in -50.0f64..50.0, k in 0.5f64..10.0) {
        let p = PsiSpec::huber(k);
        prop_assert_eq!(p.psi(u), -p.psi(-u));
        prop_assert!(p.psi(u).abs() <= k);
    }

    #[test]
    fn bisquare_is_odd_with_compact_support(u in -50.0f64..50.0, k in 0.5f64..10.0) {
        let p = PsiSpec::bisquare(k);
        prop_assert_eq!(p.psi(u), -p.psi(-u));
        prop_assert!(p.psi(u).abs() <= k);
        if u.abs() >= k {
            prop_assert_eq!(p.psi(u), 0.0);
        }
    }

    #[test]
    fn car1_link_is_exponential(theta in -5.0f64..-0.05, h in 0.1f64..2.0) {
        let a = aux_ar::link_function(&ThetaParam::unbounded(vec![theta]), &ModelFamily::car1(), h, 3).unwrap();
        prop_assert!((a.pis[0] - (theta * h).exp()).abs() <= 1e-10);
        prop_assert!(a.pis[1].abs() <= 1e-10 && a.pis[2].abs() <= 1e-10);
    }

    #[test]
    fn lyapunov_residual_is_tiny(l1 in 0.2f64..3.0, l2 in 0.2f64..3.0, l3 in 0.2f64..3.0, c1 in -2.0f64..2.0, c0 in 0.1f64..3.0) {
        let th = carma31_from_roots([l1, l2, l3], c1, c0);
        let spec = model::build_state_space_raw(&th, &ModelFamily::carma31()).unwrap();
        prop_assert!(model::check_stationarity(&spec).unwrap());
        let sigma = model::stationary_state_cov(&spec).unwrap();
        let q = model::noise_input_cov(&spec);
        prop_assert!(linalg::lyapunov_residual(&spec.a, &sigma, &q) / q.norm() < 1e-10);
        prop_assert!((&sigma - sigma.transpose()).amax() < 1e-12 * sigma.amax());
    }

    #[test]
    fn toeplitz_of_exact_acf_is_positive_definite(l1 in 0.2f64..3.0, l2 in 0.2f64..3.0, l3 in 0.2f64..3.0, c1 in -2.0f64..2.0, c0 in 0.1f64..3.0) {
        let th = carma31_from_roots([l1, l2, l3], c1, c0);
        let spec = model::build_state_space_raw(&th, &ModelFamily::carma31()).unwrap();
        let acf = AcfTable::compute(&spec, 1.0, 6).unwrap();
        prop_assert!(acf.values[0] > 0.0);
        prop_assert!(acf.toeplitz(6).cholesky().is_some());
    }

    #[test]
    fn zero_gamma_contamination_is_identity(seed in 0u64..1000, replacement in any::<bool>(), xi in -20.0f64..20.0) {
        let s = car1_path(-1.0, 200, seed);
        let mut cfg = OutlierConfig::additive(xi, 0.0);
        if replacement {
            cfg.mode = OutlierMode::Replacement;
        }
        let out = contamination::contaminate(&s, &cfg, &mut stream(seed, 0, StreamRole::Contamination)).unwrap();
        prop_assert_eq!(out.values, s.values);
    }

    #[test]
    fn patchy_indicators_come_in_runs(seed in 0u64..200, l in 1usize..6) {
        let cfg = OutlierConfig { temporal: Temporal::Patchy { l, epsilon: 0.02 }, ..OutlierConfig::additive(5.0, 0.0) };
        let v = contamination::indicators(20_000, &cfg, &mut stream(seed, 0, StreamRole::Contamination));
        let ones = v.iter().filter(|&&b| b).count();
        let stay = v.windows(2).filter(|w| w[0] && w[1]).count();
        let p = ones as f64 / v.len() as f64;
        let cond = stay as f64 / ones.max(1) as f64;
        prop_assert!(cond > p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gm_is_scale_equivariant(seed in 0u64..500, c in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0]) {
        let s = car1_path(-0.7, 400, seed);
        let scaled = SampledSeries::new(1.0, s.values.iter().map(|x| c * x).collect()).unwrap();
        let a = gm::gm_estimate(&s, 2, &GmConfig::default()).unwrap();
        let b = gm::gm_estimate(&scaled, 2, &GmConfig::default()).unwrap();
        for (x, y) in a.aux.pis.iter().zip(&b.aux.pis) {
            prop_assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
        prop_assert!((b.aux.sigma - c.abs() * a.aux.sigma).abs() < 1e-6 * b.aux.sigma);
    }

    #[test]
    fn omega_scaling_keeps_the_grid_argmin(seed in 0u64..500, c in 0.01f64..100.0) {
        let fam = ModelFamily::car1();
        let s = car1_path(-2.0, 500, seed);
        let pi = gm::gm_estimate(&s, 1, &GmConfig::default()).unwrap().aux;
        let mut base = IndirectConfig::new(1, 1, DriverConfig::brownian(1.0));
        base.mode = LinkMode::Analytic;
        let mut scaled = base.clone();
        scaled.omega = Some(vec![vec![c, 0.0], vec![0.0, c]]);
        let f = IndirectObjective::new(&fam, 1.0, &pi, &base, None).unwrap();
        let g = IndirectObjective::new(&fam, 1.0, &pi, &scaled, None).unwrap();
        let grid = [-3.0, -2.5, -2.0, -1.5, -1.0];
        let fv: Vec<f64> = grid.iter().map(|&t| f.value(&[t])).collect();
        let gv: Vec<f64> = grid.iter().map(|&t| g.value(&[t])).collect();
        for (a, b) in fv.iter().zip(&gv) {
            prop_assert!((c * a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
        let argmin = |v: &[f64]| (0..v.len()).min_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap();
        prop_assert_eq!(argmin(&fv), argmin(&gv));
    }

    #[test]
    fn report_rows_satisfy_accounting(values in prop::collection::vec(prop::option::of(-5.0f64..5.0), 1..12)) {
        let spec = ConfigFile::parse(
            "[model]\nfamily = \"car1\"\ntheta0 = [-2.0]\nscale = \"nuisance\"\n[driver]\nkind = \"brownian\"\nsigma_l2 = 1.0\n\
             [estimators]\nlist = [\"ls\"]\nr = 1\n[run]\nn = 100\nreplications = 1\n",
        )
        .unwrap()
        .expand()
        .unwrap()
        .remove(0);
        let traces: Vec<ReplicationTrace> = values
            .iter()
            .enumerate()
            .map(|(k, v)| ReplicationTrace {
                replication: k,
                outcomes: vec![EstimatorOutcome {
                    estimator: EstimatorKind::Ls,
                    values: v.map(|x| vec![x]),
                    failed: v.is_none(),
                    error: None,
                }],
            })
            .collect();
        let t = ReportTable::aggregate(&spec, &traces).unwrap();
        prop_assert_eq!(t.rows.len(), 1);
        let row = &t.rows[0];
        prop_assert_eq!(row.successes + row.failures, row.replications);
        prop_assert_eq!(row.replications, values.len());
        if row.successes > 0 {
            prop_assert_eq!(row.bias, row.mean - row.true_value);
            prop_assert!(row.var >= 0.0);
        } else {
            prop_assert!(row.mean.is_nan());
        }
    }
}
