use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::{CostSpec, ExperimentConfig, TopologySpec};
use super::ConfigError;
use crate::algorithms::{run, Algorithm, RunSpec, TrajectoryRecord};
use crate::costs::{make_synthetic_quadratics, CostEnsemble, LogisticEnsemble, SyntheticSpec};
use crate::datasets::{load_libsvm, split_uniform, LabeledDataset};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{
    default_tail_window, empirical_mse, empirical_tail_probability, run_average, tail_decay_fit, MetricSeries, RunSet,
    Statistic, TailFit,
};
use crate::rng::{stable_hash, tag_hash};
use crate::theorycheck::{
    check_consensus_bound, check_descent, check_descent_pl, check_noise_properties, check_tracker_recursion,
    CheckReport,
};
use crate::topology::{generate_graph, metropolis_hastings, tune_er_probability, GraphKind, MixingMatrix};

/// Seed of run `run` of `alg`: a stable hash of the master seed, the
/// algorithm tag and the run index.
pub fn run_seed(master: u64, alg: Algorithm, run: u64) -> u64 {
    stable_hash(&[master, tag_hash(alg.tag()), run])
}

fn component_seed(master: u64, what: &str, n: usize) -> u64 {
    stable_hash(&[master, tag_hash(what), n as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub algorithm: Algorithm,
    pub agents: usize,
    pub run: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFitSummary {
    pub series: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<TailFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmResult {
    pub algorithm: Algorithm,
    pub runs_completed: usize,
    pub series: Vec<MetricSeries>,
    pub tail_fits: Vec<TailFitSummary>,
    pub checks: Vec<CheckReport>,
}

impl AlgorithmResult {
    pub fn series(&self, name: &str) -> Option<&MetricSeries> {
        self.series.iter().find(|s| s.name == name)
    }
}

/// Results for one network size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub agents: usize,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_probability: Option<f64>,
    pub smoothness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pl_constant: Option<f64>,
    pub algorithms: Vec<AlgorithmResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_check: Option<CheckReport>,
}

impl GroupResult {
    pub fn algorithm(&self, alg: Algorithm) -> Option<&AlgorithmResult> {
        self.algorithms.iter().find(|a| a.algorithm == alg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub workers: usize,
    pub total_seconds: f64,
    pub group_seconds: Vec<f64>,
}

/// Self-describing result of an experiment. Wall-clock timing and exported
/// run sets are kept out of the serialized form so that it depends only on
/// the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEnvelope {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub partial: bool,
    pub failures: Vec<RunFailure>,
    pub groups: Vec<GroupResult>,
    #[serde(skip)]
    pub timing: Option<Timing>,
    #[serde(skip)]
    pub run_sets: Vec<(usize, RunSet)>,
}

impl ResultEnvelope {
    pub fn group(&self, agents: usize) -> Option<&GroupResult> {
        self.groups.iter().find(|g| g.agents == agents)
    }

    /// Every series of every group, in emission order.
    pub fn all_series(&self) -> impl Iterator<Item = &MetricSeries> {
        self.groups
            .iter()
            .flat_map(|g| g.algorithms.iter())
            .flat_map(|a| a.series.iter())
    }

    pub fn all_checks(&self) -> impl Iterator<Item = &CheckReport> {
        self.groups.iter().flat_map(|g| {
            g.algorithms
                .iter()
                .flat_map(|a| a.checks.iter())
                .chain(g.noise_check.iter())
        })
    }

    /// Whether every pathwise (non-statistical) check passed.
    pub fn deterministic_checks_passed(&self) -> bool {
        self.groups
            .iter()
            .flat_map(|g| g.algorithms.iter())
            .flat_map(|a| a.checks.iter())
            .all(|c| c.passed)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("envelope serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            ConfigError::Schema {
                path: "envelope".into(),
                message: e.to_string(),
            }
            .into()
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// The immutable objects shared by all runs of one network size.
pub struct Problem {
    pub agents: usize,
    pub w: MixingMatrix,
    pub edge_probability: Option<f64>,
    pub ensemble: CostEnsemble,
}

fn build_topology(cfg: &ExperimentConfig, n: usize) -> Result<(MixingMatrix, Option<f64>)> {
    let seed = component_seed(cfg.seed, "topology", n);
    let kind = match &cfg.topology {
        TopologySpec::Ring => GraphKind::Ring,
        TopologySpec::Path => GraphKind::Path,
        TopologySpec::Complete => GraphKind::Complete,
        TopologySpec::ErdosRenyi { p } => GraphKind::ErdosRenyi { p: *p },
        TopologySpec::TunedErdosRenyi { target_lambda, tol } => {
            let tuned = tune_er_probability(n, *target_lambda, *tol, seed)?;
            return Ok((tuned.matrix, Some(tuned.p)));
        }
    };
    let p = match kind {
        GraphKind::ErdosRenyi { p } => Some(p),
        _ => None,
    };
    Ok((metropolis_hastings(&generate_graph(kind, n, seed)?)?, p))
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Option<LabeledDataset>> {
    match &cfg.costs {
        CostSpec::Logistic {
            path,
            dimension,
            scale_features,
            ..
        } => {
            let mut ds = load_libsvm(cfg.resolve(path))?;
            if let Some(d) = dimension {
                ds = ds.with_dimension(*d)?;
            }
            if *scale_features {
                ds.scale_max_abs();
            }
            Ok(Some(ds))
        }
        CostSpec::SyntheticQuadratic { .. } => Ok(None),
    }
}

fn build_ensemble(cfg: &ExperimentConfig, n: usize, data: Option<&LabeledDataset>) -> Result<CostEnsemble> {
    match (&cfg.costs, data) {
        (
            CostSpec::SyntheticQuadratic {
                d,
                profile,
                density,
                shift,
            },
            _,
        ) => {
            let mut spec = SyntheticSpec::new(n, *d, *profile, component_seed(cfg.seed, "costs", n));
            spec.density = *density;
            spec.shift = *shift;
            CostEnsemble::quadratic(make_synthetic_quadratics(&spec)?)
        }
        (CostSpec::Logistic { eta, .. }, Some(ds)) => {
            let parts = split_uniform(ds, n, component_seed(cfg.seed, "split", n))?;
            CostEnsemble::logistic(LogisticEnsemble::from_datasets(&parts, ds.d(), *eta)?)
        }
        (CostSpec::Logistic { .. }, None) => Err(Error::NoDataset),
    }
}

/// Builds the mixing matrix and cost ensemble for every network size and
/// checks that the configured metrics can be computed.
pub fn build_problems(cfg: &ExperimentConfig) -> Result<Vec<Problem>> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    cfg.agent_counts()
        .into_iter()
        .map(|n| {
            let (w, edge_probability) = build_topology(cfg, n)?;
            let ensemble = build_ensemble(cfg, n, data.as_ref())?;
            cfg.oracle.validate(&ensemble)?;
            if cfg.metrics.statistic == Statistic::MseToOpt && ensemble.optimum().is_none() {
                return Err(ConfigError::Invalid(
                    "metrics.statistic = \"mse_to_opt\" needs a cost ensemble with a known optimum".into(),
                )
                .into());
            }
            if cfg.checks.descent_pl && ensemble.pl_constant().is_none() {
                return Err(ConfigError::Invalid("checks.descent_pl needs a known PL constant".into()).into());
            }
            Ok(Problem {
                agents: n,
                w,
                edge_probability,
                ensemble,
            })
        })
        .collect()
}

fn run_checks(cfg: &ExperimentConfig, p: &Problem, rec: &TrajectoryRecord) -> Result<Vec<CheckReport>> {
    let c = &cfg.checks;
    let mut out = Vec::new();
    if c.descent {
        out.push(check_descent(rec, &p.ensemble)?);
    }
    if c.descent_pl {
        out.push(check_descent_pl(rec, &p.ensemble)?);
    }
    if rec.algorithm == Algorithm::GtDsgd {
        if c.consensus {
            out.push(check_consensus_bound(rec, &p.w, &p.ensemble)?);
        }
        if c.tracker {
            out.push(check_tracker_recursion(rec, &p.w, &p.ensemble)?);
        }
    }
    Ok(out)
}

fn series_name(cfg: &ExperimentConfig, n: usize, base: String) -> String {
    if cfg.sweep_agents.is_some() {
        format!("n{n}_{base}")
    } else {
        base
    }
}

fn summarize(cfg: &ExperimentConfig, n: usize, rs: &RunSet, checks: Vec<CheckReport>) -> Result<AlgorithmResult> {
    let mut series = Vec::new();
    let mut tail_fits = Vec::new();
    if rs.runs() > 0 {
        for &eps in &cfg.metrics.thresholds {
            let s = empirical_tail_probability(rs, cfg.metrics.statistic, eps)?;
            let fit = default_tail_window(&s, rs.runs()).and_then(|w| tail_decay_fit(&s, w));
            let name = series_name(cfg, n, s.name.clone());
            tail_fits.push(match fit {
                Ok(fit) => TailFitSummary {
                    series: name.clone(),
                    fit: Some(fit),
                    note: None,
                },
                Err(e) => TailFitSummary {
                    series: name.clone(),
                    fit: None,
                    note: Some(e.to_string()),
                },
            });
            series.push(MetricSeries { name, ..s });
        }
        if rs.records[0].mse_to_opt.is_some() {
            let s = empirical_mse(rs)?;
            series.push(MetricSeries {
                name: series_name(cfg, n, s.name.clone()),
                ..s
            });
        }
        let mut push_avg = |name: &str, col: fn(&TrajectoryRecord) -> &[f64]| {
            let s = run_average(rs, name, col);
            series.push(MetricSeries {
                name: series_name(cfg, n, s.name.clone()),
                ..s
            });
        };
        push_avg("consensus_gap", |r| &r.consensus_gap);
        push_avg("f_avg", |r| &r.f_avg);
        if rs.algorithm == Algorithm::GtDsgd {
            push_avg("tracker_gap", |r| &r.tracker_gap);
        }
    }
    let checks = merge_checks(checks);
    Ok(AlgorithmResult {
        algorithm: rs.algorithm,
        runs_completed: rs.runs(),
        series,
        tail_fits,
        checks,
    })
}

fn merge_checks(reports: Vec<CheckReport>) -> Vec<CheckReport> {
    let mut names: Vec<String> = Vec::new();
    for r in &reports {
        if !names.contains(&r.name) {
            names.push(r.name.clone());
        }
    }
    names
        .iter()
        .map(|name| CheckReport::merge(name, reports.iter().filter(|r| &r.name == name).cloned()))
        .collect()
}

/// Runs the experiment. Runs are distributed over `workers` threads; the
/// envelope does not depend on that number.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<ResultEnvelope> {
    let started = Instant::now();
    let problems = build_problems(cfg)?;
    let exec = Execution::with_workers(workers);
    let hash = cfg.hash();
    let mut groups = Vec::new();
    let mut failures = Vec::new();
    let mut run_sets = Vec::new();
    let mut group_seconds = Vec::new();

    for p in &problems {
        let group_start = Instant::now();
        let mut spec = RunSpec::new(&p.w, &p.ensemble, &cfg.oracle, cfg.schedule, cfg.iterations);
        spec.x0 = DMatrix::zeros(p.agents, p.ensemble.d());
        if cfg.checks.needs_traces() {
            spec = spec.with_traces();
        }
        let mut algorithms = Vec::new();
        for &alg in &cfg.algorithms {
            let outcomes = exec.map(cfg.runs, |r| {
                let r = r as u64;
                let mut rec = run(alg, &spec, run_seed(cfg.seed, alg, r), r)?;
                let checks = run_checks(cfg, p, &rec)?;
                rec.strip();
                Ok::<_, Error>((rec, checks))
            });
            let mut records = Vec::new();
            let mut checks = Vec::new();
            for (r, outcome) in outcomes.into_iter().enumerate() {
                match outcome {
                    Ok((rec, c)) => {
                        records.push(rec);
                        checks.extend(c);
                    }
                    Err(e) => failures.push(RunFailure {
                        algorithm: alg,
                        agents: p.agents,
                        run: r as u64,
                        message: e.to_string(),
                    }),
                }
            }
            let rs = RunSet::new(alg, p.agents, hash.clone(), records)?;
            algorithms.push(summarize(cfg, p.agents, &rs, checks)?);
            if cfg.export_runs {
                run_sets.push((p.agents, rs));
            }
        }
        let noise_check = match cfg.checks.noise_samples {
            Some(samples) => {
                let mut points = vec![DVector::zeros(p.ensemble.d())];
                points.extend(p.ensemble.optimum().cloned());
                Some(check_noise_properties(
                    &cfg.oracle,
                    &p.ensemble,
                    &points,
                    samples,
                    component_seed(cfg.seed, "noise_check", p.agents),
                    exec,
                )?)
            }
            None => None,
        };
        groups.push(GroupResult {
            agents: p.agents,
            lambda: p.w.lambda(),
            edge_probability: p.edge_probability,
            smoothness: p.ensemble.smoothness_constant(),
            pl_constant: p.ensemble.pl_constant(),
            algorithms,
            noise_check,
        });
        group_seconds.push(group_start.elapsed().as_secs_f64());
    }

    Ok(ResultEnvelope {
        config: cfg.clone(),
        config_hash: hash,
        partial: !failures.is_empty(),
        failures,
        groups,
        timing: Some(Timing {
            workers: exec.workers(),
            total_seconds: started.elapsed().as_secs_f64(),
            group_seconds,
        }),
        run_sets,
    })
}
