//! Pathwise inequality checks on recorded trajectories, and Monte-Carlo
//! checks of the sub-Gaussian noise bounds.
//!
//! Deterministic checks report `slack = right side - left side`; anything
//! below [`SLACK_TOL`] is a violation. Statistical checks report the margin
//! `bound + 3 stderr - estimate`, divided by the bound.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algorithms::{row, row_mean, Algorithm, TrajectoryRecord};
use crate::costs::CostEnsemble;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::noise::{self, calibrate_sigma, MeanEstimate, OracleKey, OracleSpec};
use crate::rng::{stable_hash, stream};
use crate::topology::MixingMatrix;

pub const SLACK_TOL: f64 = -1e-9;
pub const MIN_NOISE_SAMPLES: usize = 100_000;
const STEP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    /// `None` when nothing was tested.
    pub worst_slack: Option<f64>,
    /// `(run, t)` pairs with slack below tolerance.
    pub violations: Vec<(u64, usize)>,
    pub passed: bool,
    /// Worst slack of each sub-check, for bundled reports.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subchecks: Vec<(String, Option<f64>)>,
}

impl CheckReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            instances: 0,
            worst_slack: None,
            violations: Vec::new(),
            passed: true,
            subchecks: Vec::new(),
        }
    }

    fn record(&mut self, run: u64, t: usize, slack: f64, tol: f64) {
        self.instances += 1;
        self.worst_slack = Some(worse(self.worst_slack, slack));
        if !(slack >= tol) {
            self.violations.push((run, t));
            self.passed = false;
        }
    }

    /// Folds several reports of the same check (e.g. one per run) together.
    pub fn merge(name: &str, reports: impl IntoIterator<Item = CheckReport>) -> CheckReport {
        let mut out = CheckReport::new(name);
        for r in reports {
            out.instances += r.instances;
            if let Some(s) = r.worst_slack {
                out.worst_slack = Some(worse(out.worst_slack, s));
            }
            out.violations.extend(r.violations);
            out.passed &= r.passed;
            out.subchecks.extend(r.subchecks);
        }
        out
    }
}

// NaN counts as the worst possible slack
fn worse(current: Option<f64>, slack: f64) -> f64 {
    match current {
        Some(c) if slack >= c => c,
        _ if slack.is_nan() => f64::NEG_INFINITY,
        _ => slack,
    }
}

/// Per-iteration quantities shared by the deterministic checks.
struct Step {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    z: DMatrix<f64>,
    alpha: f64,
}

fn steps(rec: &TrajectoryRecord) -> Result<Vec<Step>> {
    let noise = rec
        .noise
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("check needs a recorded noise trace".into()))?;
    (1..=rec.len())
        .map(|t| {
            let snap = rec.snapshot(t).ok_or_else(|| {
                Error::InvalidArgument(format!("check needs a snapshot at every iteration (missing t={t})"))
            })?;
            Ok(Step {
                x: snap.x.clone(),
                y: snap.y.clone(),
                z: noise[t - 1].clone(),
                alpha: rec.alpha[t - 1],
            })
        })
        .collect()
}

fn spread(m: &DMatrix<f64>) -> f64 {
    // sum_i ||m_i - m_bar||^2
    crate::metrics::consensus_gap(m) * m.nrows() as f64
}

fn mean_local_grad(e: &CostEnsemble, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = x.nrows();
    let mut acc = DVector::zeros(x.ncols());
    for i in 0..n {
        acc += e.grad_local(i, &row(x, i))?;
    }
    Ok(acc / n as f64)
}

fn constant_alpha(rec: &TrajectoryRecord) -> Result<f64> {
    let alpha = rec.alpha.first().copied().unwrap_or(0.0);
    if rec.alpha.iter().any(|&a| a != alpha) {
        return Err(Error::StepSize("check requires a constant step size".into()));
    }
    Ok(alpha)
}

fn require_cap(name: &str, alpha: f64, cap: f64) -> Result<()> {
    if alpha > cap * (1.0 + STEP_TOL) {
        return Err(Error::StepSize(format!("{name}: alpha = {alpha} exceeds cap {cap}")));
    }
    Ok(())
}

/// Smooth descent of the average model under a constant step
/// `alpha <= 1/(4L)`:
///
/// ```text
/// f(xb+) <= f(xb) - a/2 |grad f(xb)|^2 - a <grad f(xb), zb> + a^2 L |zb|^2
///           + a L^2/(2n) sum_i |x_i - xb|^2 - a/4 |mean_i grad f_i(x_i)|^2
/// ```
pub fn check_descent(rec: &TrajectoryRecord, e: &CostEnsemble) -> Result<CheckReport> {
    let l = e.smoothness_constant();
    let alpha = constant_alpha(rec)?;
    require_cap("descent", alpha, 1.0 / (4.0 * l))?;
    let steps = steps(rec)?;
    let n = e.n() as f64;
    let mut report = CheckReport::new("descent");
    for (k, s) in steps.iter().enumerate() {
        let t = k + 1;
        let next = rec
            .models_at(t + 1)
            .ok_or_else(|| Error::InvalidArgument(format!("missing models at t={}", t + 1)))?;
        let xb = row_mean(&s.x);
        let grad = e.grad_global_avg(&xb)?;
        let zb = row_mean(&s.z);
        let local = mean_local_grad(e, &s.x)?;
        let rhs = e.value(&xb)? - 0.5 * alpha * grad.norm_squared() - alpha * grad.dot(&zb)
            + alpha * alpha * l * zb.norm_squared()
            + alpha * l * l / (2.0 * n) * spread(&s.x)
            - 0.25 * alpha * local.norm_squared();
        let lhs = e.value(&row_mean(next))?;
        report.record(rec.run, t, rhs - lhs, SLACK_TOL);
    }
    Ok(report)
}

/// PL descent with `alpha_t <= 1/(2L)`:
///
/// ```text
/// f(xb+) - f* <= (1 - a mu)(f(xb) - f*) - a <grad f(xb), zb> + a^2 L |zb|^2
///                + a L^2/(2n) sum_i |x_i - xb|^2
/// ```
pub fn check_descent_pl(rec: &TrajectoryRecord, e: &CostEnsemble) -> Result<CheckReport> {
    let l = e.smoothness_constant();
    let mu = e.pl_constant().ok_or(Error::OptimumUnknown)?;
    let f_star = e.optimal_value().ok_or(Error::OptimumUnknown)?;
    let max_alpha = rec.alpha.iter().copied().fold(0.0, f64::max);
    require_cap("pl descent", max_alpha, 1.0 / (2.0 * l))?;
    let steps = steps(rec)?;
    let n = e.n() as f64;
    let mut report = CheckReport::new("descent_pl");
    for (k, s) in steps.iter().enumerate() {
        let t = k + 1;
        let next = rec
            .models_at(t + 1)
            .ok_or_else(|| Error::InvalidArgument(format!("missing models at t={}", t + 1)))?;
        let a = s.alpha;
        let xb = row_mean(&s.x);
        let grad = e.grad_global_avg(&xb)?;
        let zb = row_mean(&s.z);
        let rhs = (1.0 - a * mu) * (e.value(&xb)? - f_star) - a * grad.dot(&zb)
            + a * a * l * zb.norm_squared()
            + a * l * l / (2.0 * n) * spread(&s.x);
        let lhs = e.value(&row_mean(next))? - f_star;
        report.record(rec.run, t, rhs - lhs, SLACK_TOL);
    }
    Ok(report)
}

fn require_tracking(rec: &TrajectoryRecord) -> Result<()> {
    if rec.algorithm != Algorithm::GtDsgd {
        return Err(Error::InvalidArgument(
            "network checks apply to gradient-tracking runs".into(),
        ));
    }
    Ok(())
}

/// Summed consensus gap against its deterministic bound, for every prefix
/// `1..=T'` of the run. Constant `alpha <= (1-l^2)^2 / (16 l^2 L sqrt 3)`
/// where `l = lambda`.
pub fn check_consensus_bound(rec: &TrajectoryRecord, w: &MixingMatrix, e: &CostEnsemble) -> Result<CheckReport> {
    require_tracking(rec)?;
    let lam = w.lambda();
    let lam2 = lam * lam;
    let gap = 1.0 - lam2;
    let l = e.smoothness_constant();
    let alpha = constant_alpha(rec)?;
    if lam > 0.0 {
        require_cap("consensus", alpha, gap * gap / (16.0 * lam2 * l * 3f64.sqrt()))?;
    }
    let steps = steps(rec)?;
    let n = e.n() as f64;
    let mut report = CheckReport::new("consensus_bound");
    let Some(first) = steps.first() else {
        return Ok(report);
    };
    let delta_x = spread(&first.x) / n;
    let tracker_1 = spread(&first.y);
    let a2 = alpha * alpha;
    let c_noise = 512.0 * a2 * lam2 * lam2 / (n * gap.powi(4));
    let c_grad = 768.0 * a2 * a2 * lam2 * lam2 * l * l / gap.powi(4);
    let base = 4.0 * delta_x / gap + 32.0 * a2 * lam2 / (n * gap.powi(3)) * tracker_1;

    let (mut lhs, mut noise_sum, mut grad_sum) = (0.0, 0.0, 0.0);
    for (k, s) in steps.iter().enumerate() {
        lhs += spread(&s.x) / n;
        noise_sum += s.z.norm_squared();
        grad_sum += mean_local_grad(e, &s.x)?.norm_squared() + row_mean(&s.z).norm_squared();
        let rhs = base + c_noise * noise_sum + c_grad * grad_sum;
        report.record(rec.run, k + 1, rhs - lhs, SLACK_TOL);
    }
    Ok(report)
}

/// One-step contraction of the tracker spread (stacked Frobenius norms):
///
/// ```text
/// |y+ - yb+|^2 <= (3+l^2)/4 |y - yb|^2 + 24 l^2 L^2/(1-l^2) |x - xb|^2
///                 + 4 l^2/(1-l^2) |z+ - z|^2 + 12 a^2 l^2 L^2/(1-l^2) n |gb|^2
/// ```
///
/// with `alpha <= (1-l^2)^(3/2) / (4 l^2 L sqrt 6)`.
pub fn check_tracker_recursion(rec: &TrajectoryRecord, w: &MixingMatrix, e: &CostEnsemble) -> Result<CheckReport> {
    require_tracking(rec)?;
    let lam = w.lambda();
    let lam2 = lam * lam;
    let gap = 1.0 - lam2;
    let l = e.smoothness_constant();
    let max_alpha = rec.alpha.iter().copied().fold(0.0, f64::max);
    if lam > 0.0 {
        require_cap("tracker", max_alpha, gap.powf(1.5) / (4.0 * lam2 * l * 6f64.sqrt()))?;
    }
    let steps = steps(rec)?;
    let n = e.n() as f64;
    let mut report = CheckReport::new("tracker_recursion");
    for k in 0..steps.len().saturating_sub(1) {
        let (s, next) = (&steps[k], &steps[k + 1]);
        let g_bar = row_mean(&s.y);
        let rhs = 0.25 * (3.0 + lam2) * spread(&s.y)
            + 24.0 * lam2 * l * l / gap * spread(&s.x)
            + 4.0 * lam2 / gap * (&next.z - &s.z).norm_squared()
            + 12.0 * s.alpha * s.alpha * lam2 * l * l / gap * n * g_bar.norm_squared();
        report.record(rec.run, k + 1, rhs - spread(&next.y), SLACK_TOL);
    }
    Ok(report)
}

/// Tail, moment and averaged-MGF bounds for sub-Gaussian noise with
/// `rho = 0`, estimated at each point of `points` with `samples` draws.
///
/// * `P(|z| > e) <= 2 exp(-e^2 / (2 s2))` at `e = s, 2s, 3s`
/// * `E |z|^(2p) <= (2p)^(p+1) s2^p` for `p = 1, 2, 3`
/// * `E exp(n |zb|^2 / (96 s2)) <= 2 d e`
///
/// where `s2` is the calibrated parameter of each agent (the largest one
/// for the average).
pub fn check_noise_properties(
    o: &OracleSpec,
    e: &CostEnsemble,
    points: &[DVector<f64>],
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<CheckReport> {
    if samples < MIN_NOISE_SAMPLES {
        return Err(Error::InsufficientSamples {
            got: samples,
            required: MIN_NOISE_SAMPLES,
        });
    }
    let n = e.n();
    let d = e.d();
    let stds: Vec<f64> = match o {
        OracleSpec::Gaussian { std } => (0..n).map(|i| std.for_agent(i)).collect(),
        OracleSpec::RelaxedSubgaussian { std, rho, .. } if *rho == 0.0 => vec![*std; n],
        _ => {
            return Err(Error::InvalidArgument(
                "noise bounds are checked for Gaussian-type noise with rho = 0".into(),
            ))
        }
    };
    o.validate(e)?;
    let sigma_sq: Vec<f64> = stds.iter().map(|&s| calibrate_sigma(s, d)).collect();
    let sigma_max_sq = sigma_sq.iter().copied().fold(0.0, f64::max);

    let mut tail = CheckReport::new("tail");
    let mut moment = CheckReport::new("moment");
    let mut average = CheckReport::new("average_mgf");
    for (pi, x) in points.iter().enumerate() {
        let run = stable_hash(&[stream::MONTE_CARLO, seed, pi as u64]);
        // per sample: squared norm at every agent and n |z_bar|^2
        let draws: Vec<Result<(Vec<f64>, f64)>> = exec.map(samples, |k| {
            let key = OracleKey { seed, run, t: k as u64 };
            let mut sq = Vec::with_capacity(n);
            let mut sum = DVector::zeros(d);
            for i in 0..n {
                let z = noise::draw(o, e, i, x, key, 0.0, true)?
                    .noise()
                    .unwrap_or_else(|| DVector::zeros(d));
                sq.push(z.norm_squared());
                sum += z;
            }
            Ok((sq, sum.norm_squared() / n as f64))
        });
        let draws: Vec<(Vec<f64>, f64)> = draws.into_iter().collect::<Result<_>>()?;

        for i in 0..n {
            let s2 = sigma_sq[i];
            let sq: Vec<f64> = draws.iter().map(|(v, _)| v[i]).collect();
            if s2 == 0.0 {
                // noiseless: every bound holds with the bound itself as margin
                let all_zero = sq.iter().all(|&v| v == 0.0);
                for _ in 0..3 {
                    tail.record(pi as u64, i, if all_zero { 1.0 } else { -1.0 }, 0.0);
                    moment.record(pi as u64, i, if all_zero { 1.0 } else { -1.0 }, 0.0);
                }
                continue;
            }
            for m in 1..=3 {
                let eps = m as f64 * s2.sqrt();
                let indicator: Vec<f64> = sq.iter().map(|&v| if v > eps * eps { 1.0 } else { 0.0 }).collect();
                let est = MeanEstimate::from_values(&indicator);
                let bound = 2.0 * (-eps * eps / (2.0 * s2)).exp();
                tail.record(pi as u64, i, margin(bound, est), 0.0);
            }
            for p in 1..=3 {
                let powers: Vec<f64> = sq.iter().map(|&v| v.powi(p)).collect();
                let est = MeanEstimate::from_values(&powers);
                let bound = (2.0 * p as f64).powi(p + 1) * s2.powi(p);
                moment.record(pi as u64, i, margin(bound, est), 0.0);
            }
        }

        let bound = 2.0 * d as f64 * std::f64::consts::E;
        let est = if sigma_max_sq == 0.0 {
            MeanEstimate::from_values(&[1.0])
        } else {
            let exps = noise::capped_exp_mean(draws.iter().map(|(_, avg)| n as f64 * avg / (96.0 * sigma_max_sq)));
            exps.estimate
        };
        average.record(pi as u64, 0, margin(bound, est), 0.0);
    }
    let subchecks = vec![
        ("tail".to_string(), tail.worst_slack),
        ("moment".to_string(), moment.worst_slack),
        ("average_mgf".to_string(), average.worst_slack),
    ];
    let mut report = CheckReport::merge("noise_properties", [tail, moment, average]);
    report.subchecks = subchecks;
    Ok(report)
}

fn margin(bound: f64, est: MeanEstimate) -> f64 {
    (bound + 3.0 * est.stderr - est.mean) / bound
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{run, RunSpec, StepSchedule};
    use crate::costs::{make_synthetic_quadratics, HeterogeneityProfile, QuadraticEnsemble, SyntheticSpec};
    use crate::topology::{generate_graph, metropolis_hastings, GraphKind};

    fn ensemble(n: usize, d: usize, seed: u64) -> CostEnsemble {
        let mut spec = SyntheticSpec::new(n, d, HeterogeneityProfile::GaussianOffsets, seed);
        spec.shift = 0.5;
        CostEnsemble::quadratic(make_synthetic_quadratics(&spec).unwrap()).unwrap()
    }

    fn path3() -> MixingMatrix {
        metropolis_hastings(&generate_graph(GraphKind::Path, 3, 0).unwrap()).unwrap()
    }

    #[test]
    fn descent_zero_noise_and_noisy() {
        let e = ensemble(3, 4, 1);
        let w = path3();
        let alpha = 1.0 / (8.0 * e.smoothness_constant());
        for std in [0.0, 1.0] {
            let o = OracleSpec::gaussian(std);
            let spec = RunSpec::new(&w, &e, &o, StepSchedule::Constant { alpha }, 500).with_traces();
            let rec = run(Algorithm::GtDsgd, &spec, 3, 0).unwrap();
            let r = check_descent(&rec, &e).unwrap();
            assert!(r.passed, "{r:?}");
            assert_eq!(r.instances, 500);
        }
    }

    #[test]
    fn descent_rejects_large_steps() {
        let e = ensemble(3, 2, 1);
        let w = path3();
        let alpha = 1.0 / (2.0 * e.smoothness_constant());
        let o = OracleSpec::exact();
        let spec = RunSpec::new(&w, &e, &o, StepSchedule::Constant { alpha }, 5).with_traces();
        let rec = run(Algorithm::GtDsgd, &spec, 3, 0).unwrap();
        assert!(matches!(check_descent(&rec, &e), Err(Error::StepSize(_))));
    }

    #[test]
    fn single_agent_descent() {
        let a = vec![DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])];
        let b = vec![DVector::from_vec(vec![1.0, -1.0])];
        let e = CostEnsemble::quadratic(QuadraticEnsemble::new(a, b).unwrap()).unwrap();
        let w = MixingMatrix::from_weights(DMatrix::identity(1, 1)).unwrap();
        let o = OracleSpec::exact();
        let alpha = 1.0 / (4.0 * e.smoothness_constant());
        let spec = RunSpec::new(&w, &e, &o, StepSchedule::Constant { alpha }, 100).with_traces();
        let rec = run(Algorithm::GtDsgd, &spec, 0, 0).unwrap();
        assert!(check_descent(&rec, &e).unwrap().passed);
        assert!(check_descent_pl(&rec, &e).unwrap().passed);
    }

    #[test]
    fn network_checks_pass_under_caps() {
        let e = ensemble(3, 3, 2);
        let w = path3();
        let lam2 = w.lambda().powi(2);
        let l = e.smoothness_constant();
        let alpha = (1.0 - lam2).powi(2) / (16.0 * lam2 * l * 3f64.sqrt());
        for std in [0.0, 0.5] {
            let o = OracleSpec::gaussian(std);
            let spec = RunSpec::new(&w, &e, &o, StepSchedule::Constant { alpha }, 300).with_traces();
            let rec = run(Algorithm::GtDsgd, &spec, 5, 1).unwrap();
            let c = check_consensus_bound(&rec, &w, &e).unwrap();
            assert!(c.passed, "{c:?}");
            let t = check_tracker_recursion(&rec, &w, &e).unwrap();
            assert!(t.passed, "{t:?}");
        }
    }

    #[test]
    fn complete_averaging_keeps_consensus() {
        let e = ensemble(3, 2, 4);
        let w = MixingMatrix::from_weights(DMatrix::from_element(3, 3, 1.0 / 3.0)).unwrap();
        let o = OracleSpec::gaussian(1.0);
        let spec = RunSpec::new(&w, &e, &o, StepSchedule::Constant { alpha: 0.05 }, 50).with_traces();
        let rec = run(Algorithm::GtDsgd, &spec, 5, 1).unwrap();
        assert!(rec.consensus_gap.iter().all(|&g| g < 1e-20));
        assert!(check_consensus_bound(&rec, &w, &e).unwrap().passed);
        assert!(check_tracker_recursion(&rec, &w, &e).unwrap().passed);
    }

    #[test]
    fn checks_need_traces() {
        let e = ensemble(3, 2, 4);
        let w = path3();
        let o = OracleSpec::exact();
        let spec = RunSpec::new(&w, &e, &o, StepSchedule::Constant { alpha: 0.01 }, 5);
        let rec = run(Algorithm::GtDsgd, &spec, 5, 1).unwrap();
        assert!(check_descent(&rec, &e).is_err());
    }

    #[test]
    fn noise_checks() {
        let e = ensemble(4, 2, 7);
        let points = vec![DVector::zeros(2)];
        let r = check_noise_properties(
            &OracleSpec::gaussian(1.0),
            &e,
            &points,
            100_000,
            1,
            Execution::Sequential,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
        let r = check_noise_properties(&OracleSpec::exact(), &e, &points, 100_000, 1, Execution::Sequential).unwrap();
        assert!(r.passed);
        assert!(matches!(
            check_noise_properties(&OracleSpec::gaussian(1.0), &e, &points, 10, 1, Execution::Sequential),
            Err(Error::InsufficientSamples { .. })
        ));
    }
}
