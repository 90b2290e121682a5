use gtsim::algorithms::{run, Algorithm, RunSpec, StepSchedule};
use gtsim::costs::{make_synthetic_quadratics, CostEnsemble, HeterogeneityProfile, SyntheticSpec};
use gtsim::metrics::{
    consensus_gap, empirical_mse, empirical_tail_probability, tail_decay_fit, MetricSeries, RunSet, Statistic,
};
use gtsim::noise::OracleSpec;
use gtsim::topology::{generate_graph, metropolis_hastings, GraphKind};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn run_set(alg: Algorithm, runs: u64, seed: u64) -> RunSet {
    let e = CostEnsemble::quadratic(
        make_synthetic_quadratics(&SyntheticSpec::new(4, 3, HeterogeneityProfile::GaussianOffsets, seed)).unwrap(),
    )
    .unwrap();
    let w = metropolis_hastings(&generate_graph(GraphKind::Ring, 4, 0).unwrap()).unwrap();
    let o = OracleSpec::gaussian(1.0);
    let sched = StepSchedule::InverseTime {
        a: 1.0,
        mu: 1.0,
        t0: 4.0,
    };
    let spec = RunSpec::new(&w, &e, &o, sched, 60);
    let records = (0..runs).map(|r| run(alg, &spec, seed + r, r).unwrap()).collect();
    RunSet::new(alg, 4, "test", records).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tail_probability_is_monotone_in_epsilon(seed in 0u64..500, e1 in 1e-3f64..1.0, factor in 1.0f64..10.0) {
        let rs = run_set(Algorithm::GtDsgd, 8, seed);
        for stat in [Statistic::MseToOpt, Statistic::RunningStationarity] {
            let lo = empirical_tail_probability(&rs, stat, e1).unwrap();
            let hi = empirical_tail_probability(&rs, stat, e1 * factor).unwrap();
            prop_assert!(lo.values.iter().zip(&hi.values).all(|(a, b)| a >= b));
        }
    }

    #[test]
    fn tail_probability_obeys_markov(seed in 0u64..500, eps in 1e-3f64..1.0) {
        let rs = run_set(Algorithm::Dsgd, 8, seed);
        let tail = empirical_tail_probability(&rs, Statistic::MseToOpt, eps).unwrap();
        let mse = empirical_mse(&rs).unwrap();
        for t in 1..=tail.len() {
            prop_assert!(tail.at(t) <= mse.at(t) / eps * (1.0 + 1e-12));
        }
    }

    #[test]
    fn consensus_gap_is_translation_invariant(
        rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..8),
        shift in prop::collection::vec(-10.0f64..10.0, 3),
    ) {
        let n = rows.len();
        let x = DMatrix::from_fn(n, 3, |i, k| rows[i][k]);
        let c = DVector::from_vec(shift);
        let moved = DMatrix::from_fn(n, 3, |i, k| x[(i, k)] + c[k]);
        let (a, b) = (consensus_gap(&x), consensus_gap(&moved));
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
    }

    #[test]
    fn exact_exponentials_fit_perfectly(rate in 1e-3f64..0.5, len in 5usize..200) {
        let s = MetricSeries::new("p", (1..=len).map(|t| (-rate * t as f64).exp()).collect());
        let fit = tail_decay_fit(&s, (1, len)).unwrap();
        prop_assert!((fit.slope + rate).abs() <= 1e-9);
        prop_assert!(fit.r_squared >= 1.0 - 1e-9);
    }
}

#[test]
fn single_run_tails_are_indicators() {
    let rs = run_set(Algorithm::GtDsgd, 1, 3);
    let tail = empirical_tail_probability(&rs, Statistic::MseToOpt, 0.05).unwrap();
    assert!(tail.values.iter().all(|&p| p == 0.0 || p == 1.0));
    assert_eq!(tail.resolution, Some(1.0));
}
