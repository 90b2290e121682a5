//! GT-DSGD and DSGD recursions, the run loop, and step-size calculators.
//!
//! Row `i` of every `n x d` state matrix belongs to agent `i`. With the
//! initialization `y^0 = g^0 = 0` one GT-DSGD iteration is
//!
//! ```text
//! y^t     = W (y^{t-1} + g^t - g^{t-1})
//! x^{t+1} = W (x^t - alpha_t y^t)
//! ```
//!
//! and DSGD (adapt then combine) is `x^{t+1} = W (x^t - alpha_t g^t)`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::costs::CostEnsemble;
use crate::error::{Error, Result};
use crate::metrics::consensus_gap;
use crate::noise::{self, OracleKey, OracleSpec};
use crate::topology::MixingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    GtDsgd,
    Dsgd,
}

impl Algorithm {
    pub fn tag(&self) -> &'static str {
        match self {
            Algorithm::GtDsgd => "gt_dsgd",
            Algorithm::Dsgd => "dsgd",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant {
        alpha: f64,
    },
    /// `alpha_t = a / (mu (t + t0))`.
    InverseTime {
        a: f64,
        mu: f64,
        t0: f64,
    },
}

impl StepSchedule {
    pub fn alpha(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant { alpha } => alpha,
            StepSchedule::InverseTime { a, mu, t0 } => a / (mu * (t as f64 + t0)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant { alpha } => alpha > 0.0 && alpha.is_finite(),
            StepSchedule::InverseTime { a, mu, t0 } => {
                a > 0.0 && mu > 0.0 && t0 > -1.0 && a.is_finite() && mu.is_finite() && t0.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::StepSize(format!(
                "schedule {self:?} is not positive for every t >= 1"
            )))
        }
    }

    /// Largest step used over `t in 1..=horizon`.
    pub fn max_alpha(&self, horizon: usize) -> f64 {
        match *self {
            StepSchedule::Constant { alpha } => alpha,
            StepSchedule::InverseTime { .. } => {
                if horizon == 0 {
                    0.0
                } else {
                    self.alpha(1)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmState {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub g_prev: DMatrix<f64>,
    /// Index of the next iteration, starting at 1.
    pub t: usize,
}

impl AlgorithmState {
    /// State at `t = 1` with models `x0` and zero trackers and previous gradients.
    pub fn new(x0: DMatrix<f64>) -> Self {
        let (n, d) = x0.shape();
        Self {
            x: x0,
            y: DMatrix::zeros(n, d),
            g_prev: DMatrix::zeros(n, d),
            t: 1,
        }
    }

    /// Every agent starts from the same point.
    pub fn common(n: usize, x0: &DVector<f64>) -> Self {
        Self::new(DMatrix::from_fn(n, x0.len(), |_, k| x0[k]))
    }

    pub fn average_model(&self) -> DVector<f64> {
        row_mean(&self.x)
    }
}

pub(crate) fn row_mean(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows().max(1) as f64;
    DVector::from_fn(m.ncols(), |k, _| m.column(k).sum() / n)
}

pub(crate) fn row(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    m.row(i).transpose()
}

/// Everything a single step needs besides the state.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub w: &'a MixingMatrix,
    pub oracle: &'a OracleSpec,
    pub ensemble: &'a CostEnsemble,
    pub schedule: &'a StepSchedule,
    pub seed: u64,
    pub run: u64,
    /// Also evaluate exact local gradients so the noise can be recorded.
    pub want_exact: bool,
}

/// By-products of one step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub alpha: f64,
    /// Oracle outputs `g^t`, one row per agent.
    pub g: DMatrix<f64>,
    /// Exact local gradients at `x^t`, when requested.
    pub exact: Option<DMatrix<f64>>,
}

impl StepOutput {
    /// `z^t = g^t - grad F(x^t)`.
    pub fn noise(&self) -> Option<DMatrix<f64>> {
        self.exact.as_ref().map(|ex| &self.g - ex)
    }
}

fn check_dims(s: &AlgorithmState, ctx: &StepContext<'_>) -> Result<()> {
    let n = ctx.w.n();
    let d = ctx.ensemble.d();
    if ctx.ensemble.n() != n || s.x.shape() != (n, d) || s.y.shape() != (n, d) || s.g_prev.shape() != (n, d) {
        return Err(Error::InvalidArgument(format!(
            "state {:?} inconsistent with {n} agents in dimension {d}",
            s.x.shape()
        )));
    }
    if s.t == 0 {
        return Err(Error::InvalidArgument("iterations are numbered from 1".into()));
    }
    Ok(())
}

fn sample_all(s: &AlgorithmState, ctx: &StepContext<'_>, alpha: f64) -> Result<StepOutput> {
    let (n, d) = s.x.shape();
    let mut g = DMatrix::zeros(n, d);
    let mut exact = ctx.want_exact.then(|| DMatrix::zeros(n, d));
    let key = OracleKey {
        seed: ctx.seed,
        run: ctx.run,
        t: s.t as u64,
    };
    for i in 0..n {
        let xi = row(&s.x, i);
        let draw = noise::draw(ctx.oracle, ctx.ensemble, i, &xi, key, alpha, ctx.want_exact)
            .map_err(|e| diverged(s.t, i, e))?;
        g.set_row(i, &draw.gradient.transpose());
        if let (Some(ex), Some(row_ex)) = (exact.as_mut(), draw.exact.as_ref()) {
            ex.set_row(i, &row_ex.transpose());
        }
    }
    check_finite(&g, s.t, "oracle output")?;
    Ok(StepOutput { alpha, g, exact })
}

fn diverged(t: usize, agent: usize, e: Error) -> Error {
    match e {
        Error::Numerical(reason) => Error::Diverged { t, agent, reason },
        other => other,
    }
}

fn check_finite(m: &DMatrix<f64>, t: usize, what: &str) -> Result<()> {
    for i in 0..m.nrows() {
        if m.row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                t,
                agent: i,
                reason: format!("non-finite {what}"),
            });
        }
    }
    Ok(())
}

/// One GT-DSGD iteration in place.
pub fn gt_dsgd_step(s: &mut AlgorithmState, ctx: &StepContext<'_>) -> Result<StepOutput> {
    check_dims(s, ctx)?;
    let alpha = ctx.schedule.alpha(s.t);
    let out = sample_all(s, ctx, alpha)?;
    let w = ctx.w.weights();
    let y = w * (&s.y + &out.g - &s.g_prev);
    check_finite(&y, s.t, "tracker")?;
    let x = w * (&s.x - &y * alpha);
    check_finite(&x, s.t, "model")?;
    s.y = y;
    s.x = x;
    s.g_prev.copy_from(&out.g);
    s.t += 1;
    Ok(out)
}

/// One DSGD iteration in place. Trackers are left untouched.
pub fn dsgd_step(s: &mut AlgorithmState, ctx: &StepContext<'_>) -> Result<StepOutput> {
    check_dims(s, ctx)?;
    let alpha = ctx.schedule.alpha(s.t);
    let out = sample_all(s, ctx, alpha)?;
    let x = ctx.w.weights() * (&s.x - &out.g * alpha);
    check_finite(&x, s.t, "model")?;
    s.x = x;
    s.g_prev.copy_from(&out.g);
    s.t += 1;
    Ok(out)
}

pub fn step(alg: Algorithm, s: &mut AlgorithmState, ctx: &StepContext<'_>) -> Result<StepOutput> {
    match alg {
        Algorithm::GtDsgd => gt_dsgd_step(s, ctx),
        Algorithm::Dsgd => dsgd_step(s, ctx),
    }
}

/// Models (and trackers) at iteration `t`, before step `t` moves them.
/// `y` holds `y^t`, the tracker built during step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: usize,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

/// Everything [`run`] needs besides the algorithm and the seeds.
#[derive(Debug, Clone)]
pub struct RunSpec<'a> {
    pub w: &'a MixingMatrix,
    pub ensemble: &'a CostEnsemble,
    pub oracle: &'a OracleSpec,
    pub schedule: StepSchedule,
    pub iterations: usize,
    /// Initial models, `n x d`.
    pub x0: DMatrix<f64>,
    /// Keep full states every `stride` iterations; `None` keeps none.
    pub snapshot_stride: Option<usize>,
    /// Record `z^t` for every iteration (costs an exact gradient per agent).
    pub record_noise: bool,
}

impl<'a> RunSpec<'a> {
    pub fn new(
        w: &'a MixingMatrix,
        ensemble: &'a CostEnsemble,
        oracle: &'a OracleSpec,
        schedule: StepSchedule,
        iterations: usize,
    ) -> Self {
        Self {
            w,
            ensemble,
            oracle,
            schedule,
            iterations,
            x0: DMatrix::zeros(ensemble.n(), ensemble.d()),
            snapshot_stride: None,
            record_noise: false,
        }
    }

    /// Snapshots and noise at every iteration, as the pathwise checks need.
    pub fn with_traces(mut self) -> Self {
        self.snapshot_stride = Some(1);
        self.record_noise = true;
        self
    }
}

/// Per-iteration metrics of one run. Entry `k` describes iteration `t = k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub run: u64,
    pub alpha: Vec<f64>,
    /// `x_bar^t`.
    pub x_bar: Vec<DVector<f64>>,
    /// `f(x_bar^t)`.
    pub f_avg: Vec<f64>,
    /// `(1/n) sum_i ||x_i^t - x*||^2`, when the optimum is known.
    pub mse_to_opt: Option<Vec<f64>>,
    /// `(1/n) sum_i ||x_i^t - x_bar^t||^2`.
    pub consensus_gap: Vec<f64>,
    /// `(1/n) sum_i ||y_i^t - y_bar^t||^2`; zero for DSGD.
    pub tracker_gap: Vec<f64>,
    /// `sum_i ||grad f(x_i^t)||^2`.
    pub stationarity_sum: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    /// `z^t`, one matrix per iteration, when recorded.
    pub noise: Option<Vec<DMatrix<f64>>>,
    pub final_state: AlgorithmState,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// One row per iteration. Missing quantities are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,alpha_t,f_avg,mse_to_opt,consensus_gap,tracker_gap,stationarity_sum\n");
        for k in 0..self.len() {
            let mse = self
                .mse_to_opt
                .as_ref()
                .map(|m| format!("{:e}", m[k]))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:e},{:e},{},{:e},{:e},{:e}",
                k + 1,
                self.alpha[k],
                self.f_avg[k],
                mse,
                self.consensus_gap[k],
                self.tracker_gap[k],
                self.stationarity_sum[k]
            );
        }
        out
    }

    /// Drops per-iteration vectors, snapshots and noise, keeping the scalar
    /// metrics and the final state.
    pub fn strip(&mut self) {
        self.x_bar = Vec::new();
        self.snapshots = Vec::new();
        self.noise = None;
    }

    /// Snapshot of iteration `t` (or the final state for `t = T + 1`), if kept.
    pub fn models_at(&self, t: usize) -> Option<&DMatrix<f64>> {
        if t == self.len() + 1 {
            return Some(&self.final_state.x);
        }
        self.snapshot(t).map(|s| &s.x)
    }

    pub fn snapshot(&self, t: usize) -> Option<&Snapshot> {
        self.snapshots
            .binary_search_by_key(&t, |s| s.t)
            .ok()
            .map(|k| &self.snapshots[k])
    }
}

fn mse_to(x: &DMatrix<f64>, target: &DVector<f64>) -> f64 {
    let n = x.nrows() as f64;
    (0..x.nrows()).map(|i| (row(x, i) - target).norm_squared()).sum::<f64>() / n
}

/// Runs `spec.iterations` steps of `alg`. Deterministic in `(seed, run_id)`.
pub fn run(alg: Algorithm, spec: &RunSpec<'_>, seed: u64, run_id: u64) -> Result<TrajectoryRecord> {
    spec.schedule.validate()?;
    if spec.oracle != &OracleSpec::exact() {
        spec.oracle.validate(spec.ensemble)?;
    }
    if matches!(spec.snapshot_stride, Some(0)) {
        return Err(Error::InvalidArgument("snapshot stride must be positive".into()));
    }
    let e = spec.ensemble;
    let n = e.n();
    let t_max = spec.iterations;
    let mut state = AlgorithmState::new(spec.x0.clone());
    let ctx = StepContext {
        w: spec.w,
        oracle: spec.oracle,
        ensemble: e,
        schedule: &spec.schedule,
        seed,
        run: run_id,
        want_exact: spec.record_noise,
    };
    check_dims(&state, &ctx)?;

    let mut rec = TrajectoryRecord {
        algorithm: alg,
        seed,
        run: run_id,
        alpha: Vec::with_capacity(t_max),
        x_bar: Vec::with_capacity(t_max),
        f_avg: Vec::with_capacity(t_max),
        mse_to_opt: e.optimum().map(|_| Vec::with_capacity(t_max)),
        consensus_gap: Vec::with_capacity(t_max),
        tracker_gap: Vec::with_capacity(t_max),
        stationarity_sum: Vec::with_capacity(t_max),
        snapshots: Vec::new(),
        noise: spec.record_noise.then(|| Vec::with_capacity(t_max)),
        final_state: state.clone(),
    };

    for t in 1..=t_max {
        let x_bar = state.average_model();
        let f = e.value(&x_bar).map_err(|err| diverged(t, 0, err))?;
        let mut stationarity = 0.0;
        for i in 0..n {
            stationarity += e
                .grad_global_avg(&row(&state.x, i))
                .map_err(|err| diverged(t, i, err))?
                .norm_squared();
        }
        let mse = e.optimum().map(|xs| mse_to(&state.x, xs));
        let gap = consensus_gap(&state.x);
        let keep = spec.snapshot_stride.is_some_and(|s| (t - 1) % s == 0);
        let x_t = keep.then(|| state.x.clone());

        let out = step(alg, &mut state, &ctx)?;

        rec.alpha.push(out.alpha);
        rec.f_avg.push(f);
        if let (Some(m), Some(v)) = (rec.mse_to_opt.as_mut(), mse) {
            m.push(v);
        }
        rec.x_bar.push(x_bar);
        rec.consensus_gap.push(gap);
        rec.stationarity_sum.push(stationarity);
        rec.tracker_gap.push(match alg {
            Algorithm::GtDsgd => consensus_gap(&state.y),
            Algorithm::Dsgd => 0.0,
        });
        if let Some(z) = rec.noise.as_mut() {
            z.push(out.noise().unwrap_or_else(|| DMatrix::zeros(n, e.d())));
        }
        if let Some(x) = x_t {
            rec.snapshots.push(Snapshot {
                t,
                x,
                y: state.y.clone(),
            });
        }
    }
    rec.final_state = state;
    Ok(rec)
}

fn inf_if_zero(numerator: f64, denominator: f64) -> f64 {
    if denominator == 0.0 {
        f64::INFINITY
    } else {
        numerator / denominator
    }
}

/// A calculator result with every term of the underlying min or max.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermBreakdown {
    pub value: f64,
    pub terms: Vec<(String, f64)>,
}

impl TermBreakdown {
    /// Name of the term attaining `value`.
    pub fn binding(&self) -> Option<&str> {
        self.terms
            .iter()
            .find(|(_, v)| *v == self.value)
            .map(|(name, _)| name.as_str())
    }
}

/// Inputs of the non-convex step-size cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCapParams {
    pub n: usize,
    pub horizon: usize,
    pub l: f64,
    pub lambda: f64,
    pub sigma_sq: f64,
    pub sigma_max_sq: f64,
    pub d: usize,
    pub rho: f64,
    pub eps_exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCap {
    /// `min(sqrt(n / T), cap)`.
    pub recommended: f64,
    pub cap: TermBreakdown,
}

/// Constant step-size cap for smooth non-convex costs. Terms whose
/// denominator vanishes (`lambda = 0`, `rho = 0`, zero noise) are infinite.
pub fn nonconvex_step_cap(p: &StepCapParams) -> StepCap {
    let n = p.n as f64;
    let l = p.l;
    let lam = p.lambda;
    let gap = 1.0 - lam * lam;
    let sigma = p.sigma_sq.sqrt();
    let sigma_max = p.sigma_max_sq.sqrt();
    let e = std::f64::consts::E;
    let terms = vec![
        (
            "tracker".to_string(),
            inf_if_zero(gap * gap, 16.0 * lam * lam * l * 3f64.sqrt()),
        ),
        (
            "consensus".to_string(),
            inf_if_zero(gap, 4.0 * lam * l * 12f64.powf(0.25)),
        ),
        (
            "consensus_higher".to_string(),
            inf_if_zero(gap.powf(4.0 / 3.0), 4.0 * lam.powf(4.0 / 3.0) * l * 12f64.cbrt()),
        ),
        (
            "noise_network".to_string(),
            inf_if_zero(
                n.cbrt() * gap.powf(4.0 / 3.0),
                lam.powf(4.0 / 3.0) * sigma_max.powf(2.0 / 3.0) * l.powf(2.0 / 3.0) * 1614f64.cbrt(),
            ),
        ),
        ("smoothness".to_string(), 1.0 / (4.0 * l)),
        (
            "noise".to_string(),
            if p.sigma_sq == 0.0 {
                f64::INFINITY
            } else {
                n / (9.0 * p.sigma_sq) * (n / (282.0 * e * p.sigma_sq * p.d as f64 * l)).sqrt()
            },
        ),
        ("relaxed_ratio".to_string(), inf_if_zero(sigma * 32f64.sqrt(), p.rho)),
        (
            "relaxed_power".to_string(),
            if p.rho == 0.0 {
                f64::INFINITY
            } else {
                (1.0 / (16.0 * n * p.rho * p.rho)).powf(1.0 / (1.0 + p.eps_exponent))
            },
        ),
    ];
    let cap = terms.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
    let horizon_step = if p.horizon == 0 {
        f64::INFINITY
    } else {
        (n / p.horizon as f64).sqrt()
    };
    StepCap {
        recommended: horizon_step.min(cap),
        cap: TermBreakdown { value: cap, terms },
    }
}

/// Inputs of the PL start-offset floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorParams {
    pub n: usize,
    pub lambda: f64,
    pub a: f64,
    pub l: f64,
    pub mu: f64,
    pub sigma_sq: f64,
    pub sigma_max_sq: f64,
    pub rho: f64,
    pub eps_exponent: f64,
}

/// Smallest `t0` for the schedule `a / (mu (t + t0))` under the PL
/// condition. Requires `a >= 6` and `mu > 0`; with `rho = 0` the relaxed
/// terms vanish.
pub fn pl_t0_floor(p: &FloorParams) -> Result<TermBreakdown> {
    if !(p.a >= 6.0) {
        return Err(Error::StepSize(format!("a = {} must be at least 6", p.a)));
    }
    if !(p.mu > 0.0) || !(p.l > 0.0) {
        return Err(Error::InvalidArgument("mu and L must be positive".into()));
    }
    if !(0.0..1.0).contains(&p.lambda) {
        return Err(Error::InvalidArgument(format!("lambda = {} outside [0,1)", p.lambda)));
    }
    let n = p.n as f64;
    let (a, l, mu, lam, rho, eps) = (p.a, p.l, p.mu, p.lambda, p.rho, p.eps_exponent);
    let kappa = l / mu;
    let gap = 1.0 - lam * lam;
    let sigma = p.sigma_sq.sqrt();
    let sigma_max = p.sigma_max_sq.sqrt();
    let rho_term = |v: f64| if rho == 0.0 { 0.0 } else { v };
    let inv32 = if p.sigma_sq == 0.0 {
        f64::INFINITY
    } else {
        (1.0 / (32.0 * p.sigma_sq)).powf(1.0 / (2.0 + eps))
    };
    let terms = vec![
        ("spectral".to_string(), 12.0 / gap),
        (
            "network_kappa".to_string(),
            64.0 * n * a.powi(3) * kappa.powi(3) * lam * lam * l / gap.powi(4),
        ),
        (
            "network_noise".to_string(),
            9216.0 * sigma_max.powi(4) * lam.powi(4) / (n * n),
        ),
        ("kappa_sq".to_string(), 576.0 * a.powi(4) * kappa * kappa / (mu * mu)),
        ("noise".to_string(), 384.0 * a * a * p.sigma_sq * kappa / mu),
        (
            "relaxed_l".to_string(),
            rho_term(a * (12.0 * rho * rho * l).powf(1.0 / (4.0 + 2.0 * eps)) / mu),
        ),
        (
            "relaxed_l_sq".to_string(),
            rho_term(a * (18.0 * rho * rho * l * l).powf(1.0 / (5.0 + 2.0 * eps)) / mu),
        ),
        ("kappa".to_string(), 2.0 * a * kappa),
        ("inverse_mu".to_string(), 6.0 * a / mu),
        (
            "gradient_scale".to_string(),
            2.0 * a
                * l.sqrt()
                * (4.0 * sigma * 3f64.sqrt())
                    .max(3.0 * (2.0 * l).sqrt())
                    .max(48.0 * sigma * lam * (3.0 * l).sqrt())
                / (mu * n.sqrt()),
        ),
        (
            "relaxed_noise".to_string(),
            rho_term(a * rho.powf(1.0 / (2.0 + eps)) * sigma_max.powf(2.0 / (2.0 + eps)).max(inv32) / mu),
        ),
        (
            "relaxed_agents".to_string(),
            rho_term(
                a * (4.0 * n * rho).powf(1.0 / (1.0 + eps))
                    * 1f64
                        .max(1.0 / mu.powf(1.0 / (1.0 + eps)))
                        .max((4.0 * kappa).powf(1.0 / (1.0 + eps)))
                    / mu,
            ),
        ),
        (
            "kappa_network".to_string(),
            2.0 * a * kappa * (3.0 * l).max(640.0 * lam * lam),
        ),
        (
            "kappa_spectral".to_string(),
            2.0 * a * lam * kappa * 3f64.sqrt() * kappa.sqrt().max(8.0 * lam * l * 5f64.sqrt()) / (gap * gap),
        ),
    ];
    let value = terms.iter().map(|(_, v)| *v).fold(0.0, f64::max);
    Ok(TermBreakdown { value, terms })
}
