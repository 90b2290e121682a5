//! Per-agent cost ensembles: heterogeneous quadratics and logistic
//! regression with the non-convex penalty `eta * sum_k x_k^2 / (1 + x_k^2)`.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, stream};

/// `f_i(x) = 0.5 x^T A_i x + b_i^T x` for each agent.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticEnsemble {
    a: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
    a_avg: DMatrix<f64>,
    b_avg: DVector<f64>,
}

impl QuadraticEnsemble {
    pub fn new(a: Vec<DMatrix<f64>>, b: Vec<DVector<f64>>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::InvalidArgument(
                "quadratic ensemble needs one (A_i, b_i) pair per agent".into(),
            ));
        }
        let d = b[0].len();
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        for (ai, bi) in a.iter().zip(&b) {
            if ai.nrows() != d || ai.ncols() != d || bi.len() != d {
                return Err(Error::InvalidArgument("inconsistent quadratic dimensions".into()));
            }
            if crate::topology::symmetry_deviation(ai) > 1e-12 {
                return Err(Error::InvariantViolation("A_i must be symmetric".into()));
            }
        }
        let n = a.len() as f64;
        let a_avg = a.iter().fold(DMatrix::zeros(d, d), |acc, m| acc + m) / n;
        let b_avg = b.iter().fold(DVector::zeros(d), |acc, v| acc + v) / n;
        Ok(Self { a, b, a_avg, b_avg })
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn d(&self) -> usize {
        self.b_avg.len()
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.a
    }

    pub fn offsets(&self) -> &[DVector<f64>] {
        &self.b
    }

    pub fn average_matrix(&self) -> &DMatrix<f64> {
        &self.a_avg
    }

    pub fn average_offset(&self) -> &DVector<f64> {
        &self.b_avg
    }
}

/// Closed-form minimizer of the average quadratic, via Cholesky of `A_avg`.
pub fn quadratic_optimum(q: &QuadraticEnsemble) -> Result<(DVector<f64>, f64)> {
    let chol = Cholesky::new(q.a_avg.clone()).ok_or(Error::NoUniqueOptimum)?;
    let x = chol.solve(&(-&q.b_avg));
    let f = 0.5 * x.dot(&(&q.a_avg * &x)) + q.b_avg.dot(&x);
    Ok((x, f))
}

/// Local logistic losses. Feature rows are stored densely, one matrix per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticEnsemble {
    features: Vec<DMatrix<f64>>,
    labels: Vec<DVector<f64>>,
    eta: f64,
    d: usize,
}

impl LogisticEnsemble {
    pub fn new(features: Vec<DMatrix<f64>>, labels: Vec<DVector<f64>>, eta: f64) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::InvalidArgument(
                "logistic ensemble needs one local dataset per agent".into(),
            ));
        }
        if !(eta >= 0.0) {
            return Err(Error::InvalidArgument("penalty eta must be nonnegative".into()));
        }
        let d = features[0].ncols();
        for (h, y) in features.iter().zip(&labels) {
            if h.nrows() == 0 {
                return Err(Error::InvalidArgument("each agent needs at least one sample".into()));
            }
            if h.ncols() != d || h.nrows() != y.len() {
                return Err(Error::InvalidArgument("inconsistent logistic dimensions".into()));
            }
            if y.iter().any(|&v| v != 1.0 && v != -1.0) {
                return Err(Error::InvalidArgument("labels must be +1 or -1".into()));
            }
        }
        Ok(Self {
            features,
            labels,
            eta,
            d,
        })
    }

    /// One local dataset per agent, densified to the shared dimension.
    pub fn from_datasets(parts: &[LabeledDataset], d: usize, eta: f64) -> Result<Self> {
        let mut features = Vec::with_capacity(parts.len());
        let mut labels = Vec::with_capacity(parts.len());
        for part in parts {
            features.push(part.dense_features(d)?);
            labels.push(DVector::from_iterator(part.m(), part.rows().iter().map(|r| r.label)));
        }
        Self::new(features, labels, eta)
    }

    pub fn n(&self) -> usize {
        self.features.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn local_size(&self, i: usize) -> usize {
        self.features[i].nrows()
    }

    fn local_value(&self, i: usize, x: &DVector<f64>) -> f64 {
        let h = &self.features[i];
        let margins = h * x;
        let loss: f64 = margins
            .iter()
            .zip(self.labels[i].iter())
            .map(|(m, y)| softplus(-y * m))
            .sum();
        loss / h.nrows() as f64 + regularizer_value(self.eta, x)
    }

    fn loss_grad_rows(&self, i: usize, x: &DVector<f64>, rows: Option<&[usize]>) -> DVector<f64> {
        let h = &self.features[i];
        let y = &self.labels[i];
        let mut g = DVector::zeros(self.d);
        let mut accumulate = |r: usize| {
            let row = h.row(r);
            let margin = row.dot(&x.transpose());
            let coeff = -y[r] * sigmoid(-y[r] * margin);
            g.axpy(coeff, &row.transpose(), 1.0);
        };
        let count = match rows {
            Some(rows) => {
                rows.iter().for_each(|&r| accumulate(r));
                rows.len()
            }
            None => {
                (0..h.nrows()).for_each(&mut accumulate);
                h.nrows()
            }
        };
        g / count as f64
    }

    fn local_grad(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        let h = &self.features[i];
        let y = &self.labels[i];
        let margins = h * x;
        let coeffs = DVector::from_iterator(
            h.nrows(),
            margins.iter().zip(y.iter()).map(|(m, yv)| -yv * sigmoid(-yv * m)),
        );
        h.tr_mul(&coeffs) / h.nrows() as f64 + regularizer_grad(self.eta, x)
    }

    /// Mini-batch gradient over the given local row indices.
    pub fn batch_grad(&self, i: usize, x: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
        self.loss_grad_rows(i, x, Some(rows)) + regularizer_grad(self.eta, x)
    }

    fn smoothness(&self) -> f64 {
        let data = self
            .features
            .iter()
            .map(|h| {
                let gram = h.tr_mul(h);
                let top = SymmetricEigen::new(gram).eigenvalues.max();
                top / (4.0 * h.nrows() as f64)
            })
            .fold(0.0, f64::max);
        data + 2.0 * self.eta
    }
}

fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

pub fn regularizer_value(eta: f64, x: &DVector<f64>) -> f64 {
    eta * x.iter().map(|v| v * v / (1.0 + v * v)).sum::<f64>()
}

/// Gradient of `eta * sum_k x_k^2 / (1 + x_k^2)`.
pub fn regularizer_grad(eta: f64, x: &DVector<f64>) -> DVector<f64> {
    x.map(|v| {
        let s = 1.0 + v * v;
        eta * 2.0 * v / (s * s)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum CostModel {
    Quadratic(QuadraticEnsemble),
    Logistic(LogisticEnsemble),
}

/// A cost ensemble with its smoothness constant and, where known, the PL
/// constant and the optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct CostEnsemble {
    model: CostModel,
    l: f64,
    mu: Option<f64>,
    x_star: Option<DVector<f64>>,
    f_star: Option<f64>,
}

impl CostEnsemble {
    /// Quadratics get `L = max_i lambda_max(A_i)`; when `A_avg` is positive
    /// definite, `mu = lambda_min(A_avg)` and the optimum are filled in too.
    pub fn quadratic(q: QuadraticEnsemble) -> Result<Self> {
        let l =
            q.a.iter()
                .map(|a| SymmetricEigen::new(a.clone()).eigenvalues.max())
                .fold(0.0, f64::max);
        if !(l > 0.0) {
            return Err(Error::InvariantViolation("smoothness constant must be positive".into()));
        }
        let min_avg = SymmetricEigen::new(q.a_avg.clone()).eigenvalues.min();
        let (mu, x_star, f_star) = if min_avg > 0.0 {
            match quadratic_optimum(&q) {
                Ok((x, f)) => (Some(min_avg.min(l)), Some(x), Some(f)),
                Err(_) => (None, None, None),
            }
        } else {
            (None, None, None)
        };
        Ok(Self {
            model: CostModel::Quadratic(q),
            l,
            mu,
            x_star,
            f_star,
        })
    }

    pub fn logistic(lg: LogisticEnsemble) -> Result<Self> {
        let l = lg.smoothness();
        if !(l > 0.0) {
            return Err(Error::InvariantViolation("smoothness constant must be positive".into()));
        }
        Ok(Self {
            model: CostModel::Logistic(lg),
            l,
            mu: None,
            x_star: None,
            f_star: None,
        })
    }

    pub fn model(&self) -> &CostModel {
        &self.model
    }

    pub fn n(&self) -> usize {
        match &self.model {
            CostModel::Quadratic(q) => q.n(),
            CostModel::Logistic(lg) => lg.n(),
        }
    }

    pub fn d(&self) -> usize {
        match &self.model {
            CostModel::Quadratic(q) => q.d(),
            CostModel::Logistic(lg) => lg.d(),
        }
    }

    pub fn smoothness_constant(&self) -> f64 {
        self.l
    }

    pub fn pl_constant(&self) -> Option<f64> {
        self.mu
    }

    pub fn optimum(&self) -> Option<&DVector<f64>> {
        self.x_star.as_ref()
    }

    pub fn optimal_value(&self) -> Option<f64> {
        self.f_star
    }

    fn check_input(&self, i: usize, x: &DVector<f64>) -> Result<()> {
        if i >= self.n() {
            return Err(Error::InvalidArgument(format!(
                "agent index {i} out of range 0..{}",
                self.n()
            )));
        }
        if x.len() != self.d() {
            return Err(Error::InvalidArgument(format!(
                "expected a {}-vector, got length {}",
                self.d(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite input at agent {i}")));
        }
        Ok(())
    }

    pub fn value_local(&self, i: usize, x: &DVector<f64>) -> Result<f64> {
        self.check_input(i, x)?;
        Ok(match &self.model {
            CostModel::Quadratic(q) => 0.5 * x.dot(&(&q.a[i] * x)) + q.b[i].dot(x),
            CostModel::Logistic(lg) => lg.local_value(i, x),
        })
    }

    /// Exact local gradient.
    pub fn grad_local(&self, i: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(i, x)?;
        Ok(match &self.model {
            CostModel::Quadratic(q) => &q.a[i] * x + &q.b[i],
            CostModel::Logistic(lg) => lg.local_grad(i, x),
        })
    }

    /// `f(x) = (1/n) sum_i f_i(x)`.
    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        match &self.model {
            CostModel::Quadratic(q) => {
                self.check_input(0, x)?;
                Ok(0.5 * x.dot(&(&q.a_avg * x)) + q.b_avg.dot(x))
            }
            CostModel::Logistic(lg) => {
                self.check_input(0, x)?;
                Ok((0..lg.n()).map(|i| lg.local_value(i, x)).sum::<f64>() / lg.n() as f64)
            }
        }
    }

    /// Gradient of the network-average cost.
    pub fn grad_global_avg(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(0, x)?;
        Ok(match &self.model {
            CostModel::Quadratic(q) => &q.a_avg * x + &q.b_avg,
            CostModel::Logistic(lg) => {
                let sum = (0..lg.n()).fold(DVector::zeros(lg.d()), |acc, i| acc + lg.local_grad(i, x));
                sum / lg.n() as f64
            }
        })
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text =
            serde_json::to_string(&EnsembleFile::from(self)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        let file: EnsembleFile =
            serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("ensemble json: {e}")))?;
        file.into_ensemble()
    }
}

/// JSON layout of a saved ensemble. Matrices are row-major nested arrays.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum EnsembleFile {
    Quadratic {
        a: Vec<Vec<Vec<f64>>>,
        b: Vec<Vec<f64>>,
    },
    Logistic {
        features: Vec<Vec<Vec<f64>>>,
        labels: Vec<Vec<f64>>,
        eta: f64,
    },
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidArgument("ragged matrix in ensemble json".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl From<&CostEnsemble> for EnsembleFile {
    fn from(e: &CostEnsemble) -> Self {
        match &e.model {
            CostModel::Quadratic(q) => EnsembleFile::Quadratic {
                a: q.a.iter().map(rows_of).collect(),
                b: q.b.iter().map(|v| v.iter().copied().collect()).collect(),
            },
            CostModel::Logistic(lg) => EnsembleFile::Logistic {
                features: lg.features.iter().map(rows_of).collect(),
                labels: lg.labels.iter().map(|v| v.iter().copied().collect()).collect(),
                eta: lg.eta,
            },
        }
    }
}

impl EnsembleFile {
    fn into_ensemble(self) -> Result<CostEnsemble> {
        match self {
            EnsembleFile::Quadratic { a, b } => {
                let d = b.first().map(Vec::len).unwrap_or(0);
                let a = a
                    .iter()
                    .map(|rows| matrix_from_rows(rows, d))
                    .collect::<Result<Vec<_>>>()?;
                let b = b.into_iter().map(DVector::from_vec).collect();
                CostEnsemble::quadratic(QuadraticEnsemble::new(a, b)?)
            }
            EnsembleFile::Logistic { features, labels, eta } => {
                let d = features
                    .first()
                    .and_then(|rows| rows.first())
                    .map(Vec::len)
                    .unwrap_or(0);
                let features = features
                    .iter()
                    .map(|rows| matrix_from_rows(rows, d))
                    .collect::<Result<Vec<_>>>()?;
                let labels = labels.into_iter().map(DVector::from_vec).collect();
                CostEnsemble::logistic(LogisticEnsemble::new(features, labels, eta)?)
            }
        }
    }
}

/// How the synthetic quadratic ensemble differs across agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeterogeneityProfile {
    /// Independent `A_i`; `b_i ~ N(0, (i+1) I)` for zero-based agent `i`.
    GaussianOffsets,
    /// One shared `A`; `b_i = beta_i 1` with `beta_i` drawn from
    /// `{-2, -1, 0, 1, 3}` in equal proportion.
    SharedMatrix,
}

pub const SHARED_MATRIX_BETAS: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 3.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub profile: HeterogeneityProfile,
    /// Probability that an entry of the sparse factor is nonzero.
    pub density: f64,
    /// Eigenvalue floor `mu_0` added as `mu_0 I`.
    pub shift: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n: usize, d: usize, profile: HeterogeneityProfile, seed: u64) -> Self {
        Self {
            n,
            d,
            profile,
            density: 0.1,
            shift: 0.1,
            seed,
        }
    }
}

/// Random sparse SPD matrix `F F^T + shift I`. The factor has a Bernoulli
/// mask with the given density and Gaussian entries scaled so that
/// `E[F F^T] = I`.
pub fn sparse_spd_matrix<R: Rng>(d: usize, density: f64, shift: f64, rng: &mut R) -> DMatrix<f64> {
    let scale = 1.0 / (d as f64 * density).sqrt();
    let f = DMatrix::from_fn(d, d, |_, _| {
        let keep = rng.random::<f64>() < density;
        let z: f64 = rng.sample(StandardNormal);
        if keep {
            z * scale
        } else {
            0.0
        }
    });
    let mut a = &f * f.transpose();
    // exact symmetry
    for i in 0..d {
        for j in i + 1..d {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
        a[(i, i)] += shift;
    }
    a
}

pub fn make_synthetic_quadratics(spec: &SyntheticSpec) -> Result<QuadraticEnsemble> {
    if spec.n == 0 || spec.d == 0 {
        return Err(Error::InvalidArgument("n and d must be at least 1".into()));
    }
    if !(spec.density > 0.0 && spec.density <= 1.0) {
        return Err(Error::InvalidArgument("density must lie in (0,1]".into()));
    }
    if !(spec.shift >= 0.0) {
        return Err(Error::InvalidArgument("shift must be nonnegative".into()));
    }
    let mut rng = keyed_rng(&[stream::COST, spec.seed]);
    let d = spec.d;
    match spec.profile {
        HeterogeneityProfile::GaussianOffsets => {
            let mut a = Vec::with_capacity(spec.n);
            let mut b = Vec::with_capacity(spec.n);
            for i in 0..spec.n {
                a.push(sparse_spd_matrix(d, spec.density, spec.shift, &mut rng));
                let std = ((i + 1) as f64).sqrt();
                b.push(DVector::from_fn(d, |_, _| std * rng.sample::<f64, _>(StandardNormal)));
            }
            QuadraticEnsemble::new(a, b)
        }
        HeterogeneityProfile::SharedMatrix => {
            let shared = sparse_spd_matrix(d, spec.density, spec.shift, &mut rng);
            let mut betas: Vec<f64> = (0..spec.n)
                .map(|i| SHARED_MATRIX_BETAS[i % SHARED_MATRIX_BETAS.len()])
                .collect();
            betas.shuffle(&mut rng);
            let a = vec![shared; spec.n];
            let b = betas.iter().map(|&beta| DVector::from_element(d, beta)).collect();
            QuadraticEnsemble::new(a, b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff_grad(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
        DVector::from_fn(x.len(), |k, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
    }

    fn one_sample_logistic(h: &[f64], y: f64, eta: f64) -> CostEnsemble {
        let features = vec![DMatrix::from_row_slice(1, h.len(), h)];
        let labels = vec![DVector::from_vec(vec![y])];
        CostEnsemble::logistic(LogisticEnsemble::new(features, labels, eta).unwrap()).unwrap()
    }

    #[test]
    fn quadratic_gradient_example() {
        let q = QuadraticEnsemble::new(
            vec![DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0])],
            vec![DVector::from_vec(vec![1.0, -1.0])],
        )
        .unwrap();
        let e = CostEnsemble::quadratic(q).unwrap();
        let g = e.grad_local(0, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(g.as_slice(), &[3.0, 3.0]);
    }

    #[test]
    fn logistic_gradient_matches_finite_difference_at_zero() {
        let e = one_sample_logistic(&[1.0, 0.0], 1.0, 0.0);
        let x = DVector::zeros(2);
        let fd = finite_diff_grad(|v| e.value_local(0, v).unwrap(), &x, 1e-6);
        // frozen from the finite-difference oracle: (-0.5, 0)
        assert!((fd[0] + 0.5).abs() < 1e-8 && fd[1].abs() < 1e-8);
        let g = e.grad_local(0, &x).unwrap();
        assert!((g[0] + 0.5).abs() < 1e-12 && g[1].abs() < 1e-12);
    }

    #[test]
    fn regularizer_gradient_example() {
        let g = regularizer_grad(0.1, &DVector::from_vec(vec![1.0]));
        assert!((g[0] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn global_average_gradient_cases() {
        let q = QuadraticEnsemble::new(
            vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)],
            vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        )
        .unwrap();
        let e = CostEnsemble::quadratic(q).unwrap();
        assert_eq!(e.grad_global_avg(&DVector::zeros(1)).unwrap()[0], 0.0);

        let single = CostEnsemble::quadratic(
            QuadraticEnsemble::new(
                vec![DMatrix::from_element(1, 1, 3.0)],
                vec![DVector::from_element(1, 0.5)],
            )
            .unwrap(),
        )
        .unwrap();
        let x = DVector::from_element(1, 0.7);
        assert_eq!(single.grad_global_avg(&x).unwrap(), single.grad_local(0, &x).unwrap());
    }

    #[test]
    fn average_gradient_equals_direct_assembly() {
        let q = make_synthetic_quadratics(&SyntheticSpec::new(6, 4, HeterogeneityProfile::GaussianOffsets, 3)).unwrap();
        // independent assembly of A_avg and b_avg
        let mut a_sum = DMatrix::zeros(4, 4);
        let mut b_sum = DVector::zeros(4);
        for (a, b) in q.matrices().iter().zip(q.offsets()) {
            a_sum += a;
            b_sum += b;
        }
        let e = CostEnsemble::quadratic(q).unwrap();
        let x = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.1]);
        let direct = (a_sum * &x + b_sum) / 6.0;
        assert!((e.grad_global_avg(&x).unwrap() - direct).amax() < 1e-12);
        let mean_local = (0..6)
            .map(|i| e.grad_local(i, &x).unwrap())
            .fold(DVector::zeros(4), |acc, g| acc + g)
            / 6.0;
        assert!((e.grad_global_avg(&x).unwrap() - mean_local).amax() < 1e-12);
    }

    #[test]
    fn smoothness_examples() {
        let q = QuadraticEnsemble::new(
            vec![DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 4.0)],
            vec![DVector::zeros(1), DVector::zeros(1)],
        )
        .unwrap();
        assert!((CostEnsemble::quadratic(q).unwrap().smoothness_constant() - 4.0).abs() < 1e-12);

        let e = one_sample_logistic(&[2.0, 0.0], 1.0, 0.0);
        assert!((e.smoothness_constant() - 1.0).abs() < 1e-12);

        // data contributes nothing when every feature is zero
        let e = one_sample_logistic(&[0.0], 1.0, 0.1);
        assert!((e.smoothness_constant() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn logistic_smoothness_dominates_finite_difference_lipschitz() {
        let e = one_sample_logistic(&[2.0, 0.0], 1.0, 0.0);
        let mut worst = 0.0f64;
        for k in -40..=40 {
            let t = k as f64 * 0.05;
            let x = DVector::from_vec(vec![t, 0.0]);
            let y = DVector::from_vec(vec![t + 1e-4, 0.0]);
            let dg = (e.grad_local(0, &y).unwrap() - e.grad_local(0, &x).unwrap()).norm();
            worst = worst.max(dg / 1e-4);
        }
        assert!(worst <= e.smoothness_constant() * (1.0 + 1e-9));
        assert!(worst > 0.99 * e.smoothness_constant());
    }

    #[test]
    fn optimum_examples() {
        let q = QuadraticEnsemble::new(
            vec![DMatrix::from_element(1, 1, 2.0)],
            vec![DVector::from_element(1, 4.0)],
        )
        .unwrap();
        let (x, f) = quadratic_optimum(&q).unwrap();
        assert!((x[0] + 2.0).abs() < 1e-15);
        assert!((f + 4.0).abs() < 1e-12);

        let q = QuadraticEnsemble::new(vec![DMatrix::identity(3, 3) * 2.0], vec![DVector::zeros(3)]).unwrap();
        assert_eq!(quadratic_optimum(&q).unwrap().0, DVector::zeros(3));

        let q = QuadraticEnsemble::new(vec![DMatrix::zeros(2, 2)], vec![DVector::zeros(2)]).unwrap();
        assert!(matches!(quadratic_optimum(&q), Err(Error::NoUniqueOptimum)));
    }

    #[test]
    fn optimum_residual_on_random_ensembles() {
        for seed in 0..5 {
            let q = make_synthetic_quadratics(&SyntheticSpec::new(5, 8, HeterogeneityProfile::GaussianOffsets, seed))
                .unwrap();
            let (x, _) = quadratic_optimum(&q).unwrap();
            let residual = (q.average_matrix() * &x + q.average_offset()).norm();
            assert!(residual <= 1e-10, "residual {residual}");
        }
    }

    #[test]
    fn shared_matrix_profile_balances_betas() {
        let q = make_synthetic_quadratics(&SyntheticSpec::new(5, 3, HeterogeneityProfile::SharedMatrix, 9)).unwrap();
        let mut betas: Vec<f64> = q.offsets().iter().map(|b| b[0]).collect();
        betas.sort_by(f64::total_cmp);
        assert_eq!(betas, SHARED_MATRIX_BETAS.to_vec());
        assert!((q.average_offset()[0] - 0.2).abs() < 1e-15);
        assert!(q.matrices().windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn synthetic_matrices_respect_shift_floor() {
        let spec = SyntheticSpec::new(4, 10, HeterogeneityProfile::GaussianOffsets, 21);
        let q = make_synthetic_quadratics(&spec).unwrap();
        for a in q.matrices() {
            let min = SymmetricEigen::new(a.clone()).eigenvalues.min();
            assert!(min >= spec.shift - 1e-10, "min eigenvalue {min}");
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let e = one_sample_logistic(&[1.0], 1.0, 0.0);
        let x = DVector::from_vec(vec![f64::NAN]);
        assert!(matches!(e.grad_local(0, &x), Err(Error::Numerical(_))));
    }

    #[test]
    fn json_round_trip() {
        let q = make_synthetic_quadratics(&SyntheticSpec::new(3, 2, HeterogeneityProfile::GaussianOffsets, 1)).unwrap();
        let e = CostEnsemble::quadratic(q).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ens.json");
        e.save_json(&path).unwrap();
        assert_eq!(CostEnsemble::load_json(&path).unwrap(), e);
    }
}
