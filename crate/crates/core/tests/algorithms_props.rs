use gtsim::algorithms::{gt_dsgd_step, run, Algorithm, AlgorithmState, RunSpec, StepContext, StepSchedule};
use gtsim::costs::{make_synthetic_quadratics, CostEnsemble, HeterogeneityProfile, SyntheticSpec};
use gtsim::noise::OracleSpec;
use gtsim::topology::{generate_graph, metropolis_hastings, GraphKind, MixingMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn setup(n: usize, d: usize, seed: u64) -> (CostEnsemble, MixingMatrix) {
    let e = CostEnsemble::quadratic(
        make_synthetic_quadratics(&SyntheticSpec::new(n, d, HeterogeneityProfile::GaussianOffsets, seed)).unwrap(),
    )
    .unwrap();
    let w = metropolis_hastings(&generate_graph(GraphKind::ErdosRenyi { p: 0.5 }, n, seed).unwrap()).unwrap();
    (e, w)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tracker_mean_equals_gradient_mean(n in 2usize..9, d in 1usize..5, seed in any::<u64>(), std in 0.0f64..2.0) {
        let (e, w) = setup(n, d, seed);
        let o = OracleSpec::gaussian(std);
        let sched = StepSchedule::Constant { alpha: 0.1 / e.smoothness_constant() };
        let ctx = StepContext { w: &w, oracle: &o, ensemble: &e, schedule: &sched, seed, run: 0, want_exact: false };
        let mut s = AlgorithmState::new(DMatrix::zeros(n, d));
        for _ in 0..100 {
            let out = gt_dsgd_step(&mut s, &ctx).unwrap();
            prop_assert!((s.y.row_mean() - out.g.row_mean()).norm() <= 1e-10);
        }
    }

    #[test]
    fn runs_are_reproducible(seed in any::<u64>(), run_id in 0u64..100) {
        let (e, w) = setup(4, 3, 1);
        let o = OracleSpec::gaussian(1.0);
        let spec = RunSpec::new(&w, &e, &o, StepSchedule::Constant { alpha: 0.05 }, 30);
        for alg in [Algorithm::GtDsgd, Algorithm::Dsgd] {
            let a = run(alg, &spec, seed, run_id).unwrap();
            let b = run(alg, &spec, seed, run_id).unwrap();
            prop_assert_eq!(a.to_csv(), b.to_csv());
            prop_assert_eq!(&a.final_state, &b.final_state);
        }
    }

    #[test]
    fn noise_is_shared_between_algorithms_at_common_points(seed in any::<u64>()) {
        // at t = 1 both algorithms query the oracle at x^1, so the draws coincide
        let (e, w) = setup(5, 2, 2);
        let o = OracleSpec::gaussian(1.0);
        let spec = RunSpec::new(&w, &e, &o, StepSchedule::Constant { alpha: 0.05 }, 1).with_traces();
        let gt = run(Algorithm::GtDsgd, &spec, seed, 0).unwrap();
        let ds = run(Algorithm::Dsgd, &spec, seed, 0).unwrap();
        prop_assert_eq!(&gt.noise.as_ref().unwrap()[0], &ds.noise.as_ref().unwrap()[0]);
    }
}

#[test]
fn record_rows_describe_models_before_each_step() {
    let (e, w) = setup(4, 3, 5);
    let o = OracleSpec::gaussian(0.5);
    let spec = RunSpec::new(&w, &e, &o, StepSchedule::Constant { alpha: 0.05 }, 20).with_traces();
    let rec = run(Algorithm::GtDsgd, &spec, 1, 0).unwrap();
    let x_star = e.optimum().unwrap();
    for t in 1..=rec.len() {
        let x = rec.models_at(t).unwrap();
        let mse = (0..4)
            .map(|i| (x.row(i).transpose() - x_star).norm_squared())
            .sum::<f64>()
            / 4.0;
        assert!((rec.mse_to_opt.as_ref().unwrap()[t - 1] - mse).abs() <= 1e-12);
        assert!((rec.consensus_gap[t - 1] - gtsim::metrics::consensus_gap(x)).abs() <= 1e-12);
    }
    assert_eq!(rec.models_at(rec.len() + 1), Some(&rec.final_state.x));
}
