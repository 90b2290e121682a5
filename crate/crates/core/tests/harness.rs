use std::path::{Path, PathBuf};

use gtsim::algorithms::Algorithm;
use gtsim::harness::{
    emit_outputs, load_config, run_experiment, ConfigFormat, CostSpec, ExperimentConfig, OutputFormat, ResultEnvelope,
};

const SMALL: &str = r#"
name = "small"
seed = 11
agents = 5
iterations = 40
runs = 6
algorithms = ["gt_dsgd", "dsgd"]

[topology]
kind = "erdos_renyi"
p = 0.6

[costs]
kind = "synthetic_quadratic"
d = 3
profile = "gaussian_offsets"
shift = 1.0

[oracle]
kind = "gaussian"
std = 0.5

[schedule]
kind = "inverse_time"
a = 1.0
mu = 1.0
t0 = 1.0

[metrics]
thresholds = [0.1, 0.01]
"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::parse(SMALL, ConfigFormat::Toml).unwrap()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.path().is_file())
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn envelope_is_independent_of_worker_count() {
    let cfg = small();
    let a = run_experiment(&cfg, 1).unwrap();
    let b = run_experiment(&cfg, 3).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert!(!a.partial);
}

#[test]
fn envelope_embeds_config_and_reloads() {
    let cfg = small();
    let env = run_experiment(&cfg, 2).unwrap();
    assert_eq!(env.config_hash, cfg.hash());
    assert_eq!(env.config.hash(), env.config_hash);
    let back = ResultEnvelope::from_json(&env.to_json()).unwrap();
    assert_eq!(back.to_json(), env.to_json());
    let g = env.group(5).unwrap();
    for alg in [Algorithm::GtDsgd, Algorithm::Dsgd] {
        let a = g.algorithm(alg).unwrap();
        assert_eq!(a.runs_completed, 6);
        for eps in ["0.1", "0.01"] {
            let s = a.series(&format!("tail_{}_mse_eps{eps}", alg.tag())).unwrap();
            assert_eq!(s.len(), 40);
            assert_eq!(s.resolution, Some(1.0 / 6.0));
        }
    }
}

#[test]
fn re_emitting_a_saved_envelope_is_identical() {
    let env = run_experiment(&small(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let formats = [OutputFormat::Csv, OutputFormat::Json, OutputFormat::Svg];
    let first = dir.path().join("first");
    assert!(emit_outputs(&env, &first, &formats).ok());
    let reloaded = ResultEnvelope::load(first.join("envelope.json")).unwrap();
    let second = dir.path().join("second");
    assert!(emit_outputs(&reloaded, &second, &formats).ok());
    let strip = |v: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
        v.into_iter().filter(|(n, _)| n != "timing.json").collect()
    };
    let (a, b) = (strip(read_dir_sorted(&first)), strip(read_dir_sorted(&second)));
    assert_eq!(a, b);
    assert!(a.iter().any(|(n, _)| n == "tail_gt_dsgd_mse_eps0.1_log.svg"));
    assert!(a.iter().any(|(n, _)| n == "mse_dsgd.csv"));
    let csv = a.iter().find(|(n, _)| n == "mse_dsgd.csv").unwrap();
    assert!(std::str::from_utf8(&csv.1).unwrap().starts_with("t,value\n1,"));
}

#[test]
fn no_series_means_envelope_only() {
    let mut env = run_experiment(&small(), 1).unwrap();
    for g in &mut env.groups {
        for a in &mut g.algorithms {
            a.series.clear();
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let report = emit_outputs(
        &env,
        dir.path(),
        &[OutputFormat::Csv, OutputFormat::Json, OutputFormat::Svg],
    );
    assert!(report.ok());
    let names: Vec<String> = read_dir_sorted(dir.path()).into_iter().map(|(n, _)| n).collect();
    assert!(
        names.iter().all(|n| n == "envelope.json" || n == "timing.json"),
        "{names:?}"
    );
}

#[test]
fn unwritable_output_is_reported() {
    let env = run_experiment(&small(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let report = emit_outputs(&env, blocker.join("sub"), &[OutputFormat::Json]);
    assert!(!report.ok());
}

#[test]
fn single_run_tails_are_zero_or_one() {
    let mut cfg = small();
    cfg.runs = 1;
    let env = run_experiment(&cfg, 1).unwrap();
    for s in env.all_series().filter(|s| s.is_tail_probability()) {
        assert!(s.values.iter().all(|&p| p == 0.0 || p == 1.0));
    }
}

#[test]
fn exported_runs_follow_record_stride() {
    let mut cfg = small();
    cfg.export_runs = true;
    cfg.record_stride = 7;
    let env = run_experiment(&cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_outputs(&env, dir.path(), &[OutputFormat::Csv]).ok());
    let text = std::fs::read_to_string(dir.path().join("runs/n5_gt_dsgd_run0.csv")).unwrap();
    let ts: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ts, ["1", "8", "15", "22", "29", "36"]);
}

#[test]
fn checks_run_from_config() {
    let mut cfg = small();
    cfg.topology = gtsim::harness::TopologySpec::Path;
    cfg.agents = 3;
    cfg.schedule = gtsim::algorithms::StepSchedule::Constant { alpha: 1e-4 };
    cfg.checks.descent = true;
    cfg.checks.consensus = true;
    cfg.checks.tracker = true;
    cfg.checks.noise_samples = Some(100_000);
    cfg.algorithms = vec![Algorithm::GtDsgd];
    let env = run_experiment(&cfg, 2).unwrap();
    assert!(!env.partial, "{:?}", env.failures);
    let names: Vec<&str> = env.all_checks().map(|c| c.name.as_str()).collect();
    for expected in ["descent", "consensus_bound", "tracker_recursion"] {
        assert!(names.contains(&expected), "{names:?}");
    }
    assert!(env.all_checks().all(|c| c.passed));
    assert!(env.deterministic_checks_passed());
    assert!(env.groups[0].noise_check.as_ref().unwrap().passed);
}

#[test]
fn committed_configs_load() {
    for name in [
        "fig1_synthetic_tails.toml",
        "fig2_synthetic_speedup.toml",
        "fig3_real_tails.toml",
        "fig4_real_speedup.toml",
    ] {
        let cfg = load_config(configs_dir().join(name)).unwrap();
        assert_eq!(cfg.name, name.trim_end_matches(".toml"));
        assert_eq!(cfg.metrics.thresholds.len(), 2);
    }
    let fig1 = load_config(configs_dir().join("fig1_synthetic_tails.toml")).unwrap();
    assert_eq!(fig1.metrics.thresholds, vec![0.01, 0.001]);
}

#[test]
fn real_data_config_runs_on_a_fixture() {
    let mut cfg = load_config(configs_dir().join("fig3_real_tails.toml")).unwrap();
    cfg.agents = 3;
    cfg.iterations = 25;
    cfg.runs = 4;
    cfg.topology = gtsim::harness::TopologySpec::Complete;
    if let CostSpec::Logistic { path, .. } = &mut cfg.costs {
        *path = fixture("small.libsvm").to_string_lossy().into_owned();
    }
    let a = run_experiment(&cfg, 1).unwrap();
    let b = run_experiment(&cfg, 2).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let g = a.group(3).unwrap();
    let gt = g.algorithm(Algorithm::GtDsgd).unwrap();
    let s = gt.series("tail_gt_dsgd_stationarity_eps0.01").unwrap();
    assert_eq!(s.len(), 25);
    assert!(gt.series("mse_gt_dsgd").is_none());
}

#[test]
fn missing_dataset_is_an_io_error() {
    let mut cfg = load_config(configs_dir().join("fig3_real_tails.toml")).unwrap();
    if let CostSpec::Logistic { path, .. } = &mut cfg.costs {
        *path = "/nonexistent/a9a".into();
    }
    assert!(matches!(run_experiment(&cfg, 1), Err(gtsim::Error::Io { .. })));
}

#[test]
fn mse_statistic_needs_a_known_optimum() {
    let mut cfg = load_config(configs_dir().join("fig3_real_tails.toml")).unwrap();
    cfg.metrics.statistic = gtsim::metrics::Statistic::MseToOpt;
    if let CostSpec::Logistic { path, .. } = &mut cfg.costs {
        *path = fixture("small.libsvm").to_string_lossy().into_owned();
    }
    cfg.agents = 3;
    assert!(run_experiment(&cfg, 1).is_err());
}

#[test]
fn aborted_runs_mark_the_envelope_partial() {
    let mut cfg = small();
    cfg.schedule = gtsim::algorithms::StepSchedule::Constant { alpha: 1e200 };
    let env = run_experiment(&cfg, 2).unwrap();
    assert!(env.partial);
    assert_eq!(env.failures.len(), 12);
    assert!(
        env.failures[0].message.contains("iteration"),
        "{}",
        env.failures[0].message
    );
    assert_eq!(
        ResultEnvelope::from_json(&env.to_json()).unwrap().failures,
        env.failures
    );
}
