//! Stochastic first-order oracles and sub-Gaussian calibration.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::costs::{CostEnsemble, CostModel};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{keyed_rng, stream};

/// Largest exponent evaluated before `exp` in Monte-Carlo MGF estimates.
pub const EXPONENT_CAP: f64 = 700.0;
pub const MIN_MGF_SAMPLES: usize = 10_000;

/// Per-agent noise standard deviation: one value for everybody or one per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseScale {
    Uniform(f64),
    PerAgent(Vec<f64>),
}

impl NoiseScale {
    pub fn for_agent(&self, i: usize) -> f64 {
        match self {
            NoiseScale::Uniform(s) => *s,
            NoiseScale::PerAgent(v) => v[i],
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        let values: &[f64] = match self {
            NoiseScale::Uniform(s) => std::slice::from_ref(s),
            NoiseScale::PerAgent(v) => {
                if v.len() != n {
                    return Err(Error::InvalidArgument(format!(
                        "{} per-agent noise levels for {n} agents",
                        v.len()
                    )));
                }
                v
            }
        };
        if values.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument("noise std must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSpec {
    /// Exact gradient plus `N(0, s_i^2 I)`.
    Gaussian { std: NoiseScale },
    /// Mean gradient over `batch_size` local samples drawn without replacement.
    Minibatch {
        #[serde(default = "default_batch_size")]
        batch_size: usize,
    },
    /// Exact gradient plus `zeta * sqrt(1 + rho * alpha_t^(2+eps) * ||grad f(x)||)`
    /// with `zeta ~ N(0, std^2 I)`.
    RelaxedSubgaussian { std: f64, rho: f64, eps_exponent: f64 },
}

fn default_batch_size() -> usize {
    1
}

impl OracleSpec {
    pub fn gaussian(std: f64) -> Self {
        OracleSpec::Gaussian {
            std: NoiseScale::Uniform(std),
        }
    }

    pub fn exact() -> Self {
        Self::gaussian(0.0)
    }

    /// Checks the spec against the ensemble it will be used with.
    pub fn validate(&self, e: &CostEnsemble) -> Result<()> {
        match self {
            OracleSpec::Gaussian { std } => std.validate(e.n()),
            OracleSpec::Minibatch { batch_size } => {
                let CostModel::Logistic(lg) = e.model() else {
                    return Err(Error::NoDataset);
                };
                for i in 0..lg.n() {
                    let m = lg.local_size(i);
                    if *batch_size < 1 || *batch_size >= m {
                        return Err(Error::InvalidArgument(format!(
                            "batch size {batch_size} must lie in [1, {m}) for agent {i}"
                        )));
                    }
                }
                Ok(())
            }
            OracleSpec::RelaxedSubgaussian { std, rho, eps_exponent } => {
                NoiseScale::Uniform(*std).validate(e.n())?;
                if !(*rho >= 0.0) || !(*eps_exponent > 0.0) {
                    return Err(Error::InvalidArgument(
                        "relaxed noise needs rho >= 0 and eps_exponent > 0".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Counter tuple that determines an oracle draw. The agent index is folded
/// in by the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OracleKey {
    pub seed: u64,
    pub run: u64,
    pub t: u64,
}

/// One oracle output together with the exact local gradient when it was
/// available or requested.
#[derive(Debug, Clone)]
pub struct OracleDraw {
    pub gradient: DVector<f64>,
    pub exact: Option<DVector<f64>>,
}

impl OracleDraw {
    /// `g - grad f_i(x)`, when the exact gradient is known.
    pub fn noise(&self) -> Option<DVector<f64>> {
        self.exact.as_ref().map(|ex| &self.gradient - ex)
    }
}

fn gaussian_vector(d: usize, std: f64, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

/// Draws the oracle output for agent `i` at `x`. `alpha_t` only matters for
/// the relaxed flavor. Deterministic in `(key, i)`.
pub fn draw(
    o: &OracleSpec,
    e: &CostEnsemble,
    i: usize,
    x: &DVector<f64>,
    key: OracleKey,
    alpha_t: f64,
    want_exact: bool,
) -> Result<OracleDraw> {
    let d = e.d();
    match o {
        OracleSpec::Gaussian { std } => {
            let exact = e.grad_local(i, x)?;
            let s = std.for_agent(i);
            let gradient = if s == 0.0 {
                exact.clone()
            } else {
                let mut rng = keyed_rng(&[stream::NOISE, key.seed, key.run, i as u64, key.t]);
                &exact + gaussian_vector(d, s, &mut rng)
            };
            Ok(OracleDraw {
                gradient,
                exact: Some(exact),
            })
        }
        OracleSpec::Minibatch { batch_size } => {
            let CostModel::Logistic(lg) = e.model() else {
                return Err(Error::NoDataset);
            };
            if i >= lg.n() {
                return Err(Error::InvalidArgument(format!("agent index {i} out of range")));
            }
            let m = lg.local_size(i);
            if *batch_size == 0 || *batch_size > m {
                return Err(Error::InvalidArgument(format!(
                    "batch size {batch_size} exceeds local dataset size {m}"
                )));
            }
            let mut rng = keyed_rng(&[stream::BATCH, key.seed, key.run, i as u64, key.t]);
            let rows = rand::seq::index::sample(&mut rng, m, *batch_size).into_vec();
            let exact = if want_exact {
                Some(e.grad_local(i, x)?)
            } else {
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical(format!("non-finite input at agent {i}")));
                }
                None
            };
            Ok(OracleDraw {
                gradient: lg.batch_grad(i, x, &rows),
                exact,
            })
        }
        OracleSpec::RelaxedSubgaussian { std, rho, eps_exponent } => {
            let exact = e.grad_local(i, x)?;
            let gradient = if *std == 0.0 {
                exact.clone()
            } else {
                let global_norm = if *rho > 0.0 { e.grad_global_avg(x)?.norm() } else { 0.0 };
                let amplitude = (1.0 + rho * alpha_t.powf(2.0 + eps_exponent) * global_norm).sqrt();
                let mut rng = keyed_rng(&[stream::NOISE, key.seed, key.run, i as u64, key.t]);
                &exact + gaussian_vector(d, std * amplitude, &mut rng)
            };
            Ok(OracleDraw {
                gradient,
                exact: Some(exact),
            })
        }
    }
}

/// Oracle output only.
pub fn sample_gradient(
    o: &OracleSpec,
    e: &CostEnsemble,
    i: usize,
    x: &DVector<f64>,
    key: OracleKey,
    alpha_t: f64,
) -> Result<DVector<f64>> {
    Ok(draw(o, e, i, x, key, alpha_t, false)?.gradient)
}

/// Smallest `sigma^2` for which `E exp(||N(0, s^2 I_d)||^2 / sigma^2) <= e`:
/// `2 s^2 / (1 - exp(-2/d))`. Returns 0 for `s = 0`.
pub fn calibrate_sigma(s: f64, d: usize) -> f64 {
    if s == 0.0 || d == 0 {
        return 0.0;
    }
    2.0 * s * s / (1.0 - (-2.0 / d as f64).exp())
}

/// Closed-form `E exp(||N(0, s^2 I_d)||^2 / sigma^2)`, infinite when it diverges.
pub fn gaussian_mgf(s: f64, d: usize, sigma_sq: f64) -> f64 {
    let ratio = 2.0 * s * s / sigma_sq;
    if ratio >= 1.0 {
        f64::INFINITY
    } else {
        (1.0 - ratio).powf(-(d as f64) / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    ClosedForm,
    MonteCarlo,
}

/// Certified sub-Gaussian parameter per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    pub sigma_sq: Vec<f64>,
    pub derivation: CalibrationMethod,
}

impl NoiseCalibration {
    /// Gaussian-type flavors. For the relaxed flavor this is the calibration
    /// at zero gradient norm.
    pub fn closed_form(o: &OracleSpec, n: usize, d: usize) -> Result<Self> {
        let sigma_sq = match o {
            OracleSpec::Gaussian { std } => (0..n).map(|i| calibrate_sigma(std.for_agent(i), d)).collect(),
            OracleSpec::RelaxedSubgaussian { std, .. } => vec![calibrate_sigma(*std, d); n],
            OracleSpec::Minibatch { .. } => {
                return Err(Error::InvalidArgument(
                    "mini-batch noise has no closed-form calibration".into(),
                ))
            }
        };
        Ok(Self {
            sigma_sq,
            derivation: CalibrationMethod::ClosedForm,
        })
    }

    /// Per agent, the `sigma^2` at which the empirical MGF of the noise at
    /// `x` equals `e`, found by bisection over the drawn samples.
    pub fn monte_carlo(
        o: &OracleSpec,
        e: &CostEnsemble,
        x: &DVector<f64>,
        samples: usize,
        seed: u64,
        exec: Execution,
    ) -> Result<Self> {
        let mut sigma_sq = Vec::with_capacity(e.n());
        for i in 0..e.n() {
            let sq: Vec<f64> = sample_noise(o, e, i, x, 0.0, seed, samples, exec)?
                .iter()
                .map(|z| z.norm_squared())
                .collect();
            let max_sq = sq.iter().copied().fold(0.0, f64::max);
            if max_sq == 0.0 {
                sigma_sq.push(0.0);
                continue;
            }
            let mgf = |s2: f64| sq.iter().map(|v| (v / s2).min(EXPONENT_CAP).exp()).sum::<f64>() / sq.len() as f64;
            let target = std::f64::consts::E;
            let (mut lo, mut hi) = (max_sq / EXPONENT_CAP, max_sq);
            while mgf(hi) > target {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mgf(mid) > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            sigma_sq.push(hi);
        }
        Ok(Self {
            sigma_sq,
            derivation: CalibrationMethod::MonteCarlo,
        })
    }
}

/// `count` independent noise vectors `g - grad f_i(x)` for agent `i`.
#[allow(clippy::too_many_arguments)]
pub fn sample_noise(
    o: &OracleSpec,
    e: &CostEnsemble,
    i: usize,
    x: &DVector<f64>,
    alpha_t: f64,
    seed: u64,
    count: usize,
    exec: Execution,
) -> Result<Vec<DVector<f64>>> {
    let draws = exec.map(count, |k| {
        let key = OracleKey {
            seed,
            run: stream::MONTE_CARLO,
            t: k as u64,
        };
        draw(o, e, i, x, key, alpha_t, true).map(|d| d.noise().unwrap_or_else(|| DVector::zeros(x.len())))
    });
    draws.into_iter().collect()
}

/// Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl MeanEstimate {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                samples: 0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            stderr: (var / n as f64).sqrt(),
            samples: n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgfEstimate {
    pub estimate: MeanEstimate,
    /// Samples whose exponent hit [`EXPONENT_CAP`].
    pub capped: usize,
}

/// Monte-Carlo estimate of `E exp(||z||^2 / sigma^2)` for the noise of agent
/// `i` at `x`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_mgf(
    o: &OracleSpec,
    e: &CostEnsemble,
    i: usize,
    x: &DVector<f64>,
    sigma_sq: f64,
    samples: usize,
    alpha_t: f64,
    seed: u64,
    exec: Execution,
) -> Result<MgfEstimate> {
    if samples < MIN_MGF_SAMPLES {
        return Err(Error::InsufficientSamples {
            got: samples,
            required: MIN_MGF_SAMPLES,
        });
    }
    if !(sigma_sq > 0.0) {
        return Err(Error::InvalidArgument("sigma^2 must be positive".into()));
    }
    let noise = sample_noise(o, e, i, x, alpha_t, seed, samples, exec)?;
    Ok(capped_exp_mean(noise.iter().map(|z| z.norm_squared() / sigma_sq)))
}

pub(crate) fn capped_exp_mean(exponents: impl Iterator<Item = f64>) -> MgfEstimate {
    let mut capped = 0;
    let values: Vec<f64> = exponents
        .map(|a| {
            if a > EXPONENT_CAP {
                capped += 1;
                EXPONENT_CAP.exp()
            } else {
                a.exp()
            }
        })
        .collect();
    MgfEstimate {
        estimate: MeanEstimate::from_values(&values),
        capped,
    }
}
