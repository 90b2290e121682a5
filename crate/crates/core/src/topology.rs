//! Communication graphs and Metropolis-Hastings mixing matrices.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{keyed_rng, stream};

/// Tolerance for row/column sums and symmetry of a mixing matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Absolute tolerance for the spectral computations.
pub const SPECTRAL_TOL: f64 = 1e-10;
const POWER_ITERATION_CAP: usize = 100_000;
const ER_RESAMPLE_CAP: usize = 1000;
const TUNE_GRAPHS_PER_PROBE: usize = 16;
const TUNE_BISECTION_STEPS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphKind {
    Ring,
    Path,
    Complete,
    ErdosRenyi { p: f64 },
}

/// Undirected graph on agents `0..n`. Edges are stored once as `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightedGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl WeightedGraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("graph needs at least one agent".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a},{b}) references an agent outside 0..{n}"
                )));
            }
            if a == b {
                continue;
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self { n, edges: set })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        let adj = self.adjacency_lists();
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    count += 1;
                    queue.push_back(u);
                }
            }
        }
        count == self.n
    }
}

/// Builds a connected graph of the requested family.
///
/// Erdős–Rényi graphs are resampled with incremented sub-seeds until
/// connected; after 1000 failures the configuration is reported as
/// unconnectable.
pub fn generate_graph(kind: GraphKind, n: usize, seed: u64) -> Result<WeightedGraph> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    match kind {
        GraphKind::Ring => {
            let edges: Vec<_> = match n {
                1 => vec![],
                2 => vec![(0, 1)],
                _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
            };
            WeightedGraph::new(n, edges)
        }
        GraphKind::Path => WeightedGraph::new(n, (1..n).map(|i| (i - 1, i))),
        GraphKind::Complete => WeightedGraph::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)))),
        GraphKind::ErdosRenyi { p } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "edge probability must lie in (0,1], got {p}"
                )));
            }
            for attempt in 0..ER_RESAMPLE_CAP as u64 {
                let g = sample_erdos_renyi(n, p, seed, attempt)?;
                if g.is_connected() {
                    return Ok(g);
                }
            }
            Err(Error::Unconnectable {
                n,
                p,
                attempts: ER_RESAMPLE_CAP,
            })
        }
    }
}

fn sample_erdos_renyi(n: usize, p: f64, seed: u64, sub_seed: u64) -> Result<WeightedGraph> {
    let mut rng = keyed_rng(&[stream::GRAPH, seed, sub_seed]);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    WeightedGraph::new(n, edges)
}

/// Doubly stochastic weight matrix `W` with its connectivity parameter
/// `lambda = ||W - J||_2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingMatrix {
    w: DMatrix<f64>,
    lambda: f64,
}

impl MixingMatrix {
    /// Validates double stochasticity and computes `lambda`.
    pub fn from_weights(w: DMatrix<f64>) -> Result<Self> {
        let lambda = spectral_gap_of(&w)?;
        Ok(Self { w, lambda })
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn is_symmetric(&self) -> bool {
        symmetry_deviation(&self.w) <= STOCHASTIC_TOL
    }

    /// Row-major CSV. The first line is a comment carrying `n` and `lambda`.
    pub fn to_csv(&self) -> String {
        let n = self.n();
        let mut out = format!("# n={},lambda={}\n", n, self.lambda);
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| format!("{}", self.w[(i, j)])).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut header_n = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                for field in comment.split(',') {
                    if let Some(v) = field.trim().strip_prefix("n=") {
                        header_n = v.trim().parse::<usize>().ok();
                    }
                }
                continue;
            }
            let row = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidArgument(format!("matrix csv line {}: {e}", lineno + 1)))?;
            rows.push(row);
        }
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("matrix csv is not square".into()));
        }
        if let Some(h) = header_n {
            if h != n {
                return Err(Error::InvalidArgument(format!(
                    "matrix csv header says n={h} but has {n} rows"
                )));
            }
        }
        let w = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::from_weights(w)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_csv(&text)
    }
}

/// Metropolis-Hastings weights: `w_ij = 1 / (1 + max(deg_i, deg_j))` on edges,
/// diagonal fills each row to one.
pub fn metropolis_hastings(g: &WeightedGraph) -> Result<MixingMatrix> {
    if !g.is_connected() {
        return Err(Error::NotConnected);
    }
    let n = g.n();
    let deg = g.degrees();
    let mut w = DMatrix::<f64>::zeros(n, n);
    for &(i, j) in g.edges() {
        let v = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    MixingMatrix::from_weights(w)
}

pub fn spectral_gap(w: &MixingMatrix) -> f64 {
    w.lambda
}

pub(crate) fn symmetry_deviation(w: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((w[(i, j)] - w[(j, i)]).abs());
        }
    }
    worst
}

/// Largest deviation of any row or column sum from one.
pub fn stochastic_deviation(w: &DMatrix<f64>) -> f64 {
    let rows = w.row_iter().map(|r| (r.sum() - 1.0).abs());
    let cols = w.column_iter().map(|c| (c.sum() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

fn check_doubly_stochastic(w: &DMatrix<f64>) -> Result<()> {
    if !w.is_square() || w.nrows() == 0 {
        return Err(Error::InvariantViolation("mixing matrix must be square".into()));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvariantViolation(
            "mixing matrix entries must be finite and nonnegative".into(),
        ));
    }
    let dev = stochastic_deviation(w);
    if dev > STOCHASTIC_TOL {
        return Err(Error::InvariantViolation(format!(
            "matrix is not doubly stochastic (max sum deviation {dev:e})"
        )));
    }
    Ok(())
}

fn centered(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    w.map(|v| v - 1.0 / n as f64)
}

/// `||W - J||_2` for a doubly stochastic `W`.
///
/// Symmetric inputs use a dense symmetric eigendecomposition; otherwise power
/// iteration runs on `(W - J)^T (W - J)`.
pub fn spectral_gap_of(w: &DMatrix<f64>) -> Result<f64> {
    check_doubly_stochastic(w)?;
    if symmetry_deviation(w) <= STOCHASTIC_TOL {
        let eig = SymmetricEigen::new(centered(w));
        Ok(eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())))
    } else {
        spectral_gap_power(w)
    }
}

/// Power-iteration route to `||W - J||_2`, valid for any doubly stochastic `W`.
pub fn spectral_gap_power(w: &DMatrix<f64>) -> Result<f64> {
    check_doubly_stochastic(w)?;
    let n = w.nrows();
    let b = centered(w);
    let gram = b.transpose() * &b;
    // deterministic start with no special structure
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_7).fract());
    let norm = v.norm();
    v /= norm;
    let mut estimate = 0.0;
    for _ in 0..POWER_ITERATION_CAP {
        let next = &gram * &v;
        let norm = next.norm();
        if norm <= f64::MIN_POSITIVE {
            return Ok(0.0);
        }
        let rayleigh = v.dot(&next);
        v = next / norm;
        if (rayleigh - estimate).abs() <= SPECTRAL_TOL * SPECTRAL_TOL {
            estimate = rayleigh;
            break;
        }
        estimate = rayleigh;
    }
    Ok(estimate.max(0.0).sqrt())
}

/// Outcome of tuning an Erdős–Rényi edge probability to a target `lambda`.
#[derive(Debug, Clone)]
pub struct TunedTopology {
    pub p: f64,
    pub graph: WeightedGraph,
    pub matrix: MixingMatrix,
    /// Whether `|lambda - target| <= tol` was met.
    pub converged: bool,
    pub bisection_steps: usize,
}

/// Bisection on the edge probability so that the Metropolis-Hastings
/// `lambda` is close to `target_lambda`, averaging 16 sampled graphs per
/// probe, then selecting a concrete graph near the target.
pub fn tune_er_probability(n: usize, target_lambda: f64, tol: f64, seed: u64) -> Result<TunedTopology> {
    if !(target_lambda > 0.0 && target_lambda < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target lambda must lie in (0,1), got {target_lambda}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }

    let mut min_seen = f64::INFINITY;
    let mut max_seen = f64::NEG_INFINITY;
    let mut best: Option<(f64, f64, WeightedGraph, MixingMatrix)> = None;
    let mut consider =
        |p: f64, g: WeightedGraph, m: MixingMatrix, best: &mut Option<(f64, f64, WeightedGraph, MixingMatrix)>| {
            let lam = m.lambda();
            min_seen = min_seen.min(lam);
            max_seen = max_seen.max(lam);
            let better = match best {
                Some((_, l, _, _)) => (lam - target_lambda).abs() < (*l - target_lambda).abs(),
                None => true,
            };
            if better {
                *best = Some((p, lam, g, m));
            }
        };

    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut steps = 0;
    for step in 0..TUNE_BISECTION_STEPS {
        steps = step + 1;
        let p = 0.5 * (lo + hi);
        let mut lambdas = Vec::with_capacity(TUNE_GRAPHS_PER_PROBE);
        for k in 0..TUNE_GRAPHS_PER_PROBE as u64 {
            let probe_seed = crate::rng::stable_hash(&[seed, step as u64, k]);
            match generate_graph(GraphKind::ErdosRenyi { p }, n, probe_seed) {
                Ok(g) => {
                    let m = metropolis_hastings(&g)?;
                    lambdas.push(m.lambda());
                    consider(p, g, m, &mut best);
                }
                Err(Error::Unconnectable { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        // unconnectable probes count as too sparse
        let mean = if lambdas.is_empty() {
            1.0
        } else {
            lambdas.iter().sum::<f64>() / lambdas.len() as f64
        };
        if (mean - target_lambda).abs() <= tol {
            break;
        }
        if mean > target_lambda {
            lo = p;
        } else {
            hi = p;
        }
    }

    let (p, lam, graph, matrix) = match best {
        Some(b) => b,
        None => {
            return Err(Error::Unconnectable {
                n,
                p: hi,
                attempts: ER_RESAMPLE_CAP,
            })
        }
    };
    let converged = (lam - target_lambda).abs() <= tol;
    if !converged && (target_lambda < min_seen - tol || target_lambda > max_seen + tol) {
        return Err(Error::TargetUnreachable {
            n,
            target: target_lambda,
            min_achieved: min_seen,
            max_achieved: max_seen,
            closest: lam,
        });
    }
    Ok(TunedTopology {
        p,
        graph,
        matrix,
        converged,
        bisection_steps: steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge_set(g: &WeightedGraph) -> Vec<(usize, usize)> {
        g.edges().iter().copied().collect()
    }

    #[test]
    fn ring_path_complete_shapes() {
        let ring = generate_graph(GraphKind::Ring, 3, 7).unwrap();
        assert_eq!(edge_set(&ring), vec![(0, 1), (0, 2), (1, 2)]);
        let path = generate_graph(GraphKind::Path, 3, 7).unwrap();
        assert_eq!(edge_set(&path), vec![(0, 1), (1, 2)]);
        let complete = generate_graph(GraphKind::Complete, 4, 7).unwrap();
        assert_eq!(complete.edge_count(), 6);
    }

    #[test]
    fn rejects_zero_agents_and_bad_probability() {
        assert!(generate_graph(GraphKind::Ring, 0, 1).is_err());
        assert!(generate_graph(GraphKind::ErdosRenyi { p: 0.0 }, 5, 1).is_err());
        assert!(generate_graph(GraphKind::ErdosRenyi { p: 1.5 }, 5, 1).is_err());
    }

    #[test]
    fn tiny_probability_is_unconnectable() {
        let err = generate_graph(GraphKind::ErdosRenyi { p: 1e-6 }, 40, 3).unwrap_err();
        assert!(matches!(err, Error::Unconnectable { .. }));
    }

    #[test]
    fn mh_ring3_is_averaging_matrix() {
        let m = metropolis_hastings(&generate_graph(GraphKind::Ring, 3, 0).unwrap()).unwrap();
        for v in m.weights().iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(m.lambda() <= 1e-12);
    }

    #[test]
    fn mh_path3_weights_and_gap() {
        let m = metropolis_hastings(&generate_graph(GraphKind::Path, 3, 0).unwrap()).unwrap();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[
                2.0 / 3.0,
                1.0 / 3.0,
                0.0,
                1.0 / 3.0,
                1.0 / 3.0,
                1.0 / 3.0,
                0.0,
                1.0 / 3.0,
                2.0 / 3.0,
            ],
        );
        assert!((m.weights() - expected).amax() < 1e-15);
        assert!((m.lambda() - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn mh_complete2_is_half() {
        let m = metropolis_hastings(&generate_graph(GraphKind::Complete, 2, 0).unwrap()).unwrap();
        assert!(m.weights().iter().all(|v| (v - 0.5).abs() < 1e-15));
        assert!(m.lambda() < 1e-15);
    }

    #[test]
    fn disconnected_graph_rejected() {
        let g = WeightedGraph::new(4, [(0, 1), (2, 3)]).unwrap();
        assert!(matches!(metropolis_hastings(&g), Err(Error::NotConnected)));
    }

    #[test]
    fn non_stochastic_matrix_rejected() {
        let w = DMatrix::from_row_slice(2, 2, &[0.6, 0.5, 0.4, 0.5]);
        assert!(matches!(
            MixingMatrix::from_weights(w),
            Err(Error::InvariantViolation(_))
        ));
    }

    #[test]
    fn power_iteration_matches_eigensolver() {
        for seed in 0..10 {
            let g = generate_graph(GraphKind::ErdosRenyi { p: 0.3 }, 12, seed).unwrap();
            let m = metropolis_hastings(&g).unwrap();
            let power = spectral_gap_power(m.weights()).unwrap();
            assert!((power - m.lambda()).abs() < 1e-6, "{power} vs {}", m.lambda());
        }
    }

    #[test]
    fn nonsymmetric_doubly_stochastic_uses_power_route() {
        // circulant shift mixture: doubly stochastic, not symmetric
        let n = 4;
        let w = DMatrix::from_fn(n, n, |i, j| if i == j || j == (i + 1) % n { 0.5 } else { 0.0 });
        let m = MixingMatrix::from_weights(w).unwrap();
        // circulant, so singular values are |0.5(1 + i^k)| for k = 1..3
        assert!((m.lambda() - 0.5 * 2f64.sqrt()).abs() < 1e-8, "{}", m.lambda());
    }

    #[test]
    fn csv_round_trip_is_bit_identical() {
        let g = generate_graph(GraphKind::ErdosRenyi { p: 0.4 }, 9, 11).unwrap();
        let m = metropolis_hastings(&g).unwrap();
        let back = MixingMatrix::from_csv(&m.to_csv()).unwrap();
        assert_eq!(back.weights(), m.weights());
        assert_eq!(back.lambda(), m.lambda());
    }

    #[test]
    fn tune_n2_reports_unreachable() {
        let err = tune_er_probability(2, 0.5, 0.01, 1).unwrap_err();
        assert!(matches!(err, Error::TargetUnreachable { .. }));
    }

    #[test]
    fn tune_n10_very_sparse_target_unreachable() {
        let err = tune_er_probability(10, 0.99, 0.001, 5).unwrap_err();
        match err {
            Error::TargetUnreachable { max_achieved, .. } => assert!(max_achieved < 0.99),
            other => panic!("unexpected {other:?}"),
        }
    }
}
