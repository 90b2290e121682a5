//! LIBSVM sparse text parsing and uniform splitting across agents.

use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::rng::{keyed_rng, stream};

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

/// One labelled sample. Feature indices are zero-based and strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: f64,
    pub features: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    rows: Vec<Sample>,
    d: usize,
}

impl LabeledDataset {
    pub fn new(rows: Vec<Sample>, d: usize) -> Result<Self> {
        let max_index = rows
            .iter()
            .filter_map(|r| r.features.last().map(|&(k, _)| k + 1))
            .max()
            .unwrap_or(0);
        if d < max_index {
            return Err(Error::InvalidArgument(format!(
                "dimension {d} is smaller than the largest feature index {max_index}"
            )));
        }
        Ok(Self { rows, d })
    }

    pub fn rows(&self) -> &[Sample] {
        &self.rows
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    /// Overrides the feature dimension; it may only grow.
    pub fn with_dimension(self, d: usize) -> Result<Self> {
        Self::new(self.rows, d)
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.label > 0.0).count() as f64 / self.rows.len() as f64
    }

    pub fn nonzeros(&self) -> usize {
        self.rows.iter().map(|r| r.features.len()).sum()
    }

    /// Divides every feature column by its largest absolute value.
    pub fn scale_max_abs(&mut self) {
        let mut max_abs = vec![0.0f64; self.d];
        for r in &self.rows {
            for &(k, v) in &r.features {
                max_abs[k] = max_abs[k].max(v.abs());
            }
        }
        for r in &mut self.rows {
            for (k, v) in &mut r.features {
                if max_abs[*k] > 0.0 {
                    *v /= max_abs[*k];
                }
            }
        }
    }

    /// Dense `m x d` feature matrix.
    pub fn dense_features(&self, d: usize) -> Result<DMatrix<f64>> {
        if d < self.d {
            return Err(Error::InvalidArgument(format!(
                "cannot densify {}-dimensional features into dimension {d}",
                self.d
            )));
        }
        let mut h = DMatrix::zeros(self.rows.len(), d);
        for (r, sample) in self.rows.iter().enumerate() {
            for &(k, v) in &sample.features {
                h[(r, k)] = v;
            }
        }
        Ok(h)
    }

    /// Canonical LIBSVM text (one-based indices, `+1`/`-1` labels).
    pub fn to_libsvm(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(if r.label > 0.0 { "+1" } else { "-1" });
            for &(k, v) in &r.features {
                let _ = write!(out, " {}:{}", k + 1, v);
            }
            out.push('\n');
        }
        out
    }
}

fn parse_label(token: &str, line: usize) -> std::result::Result<f64, ParseError> {
    let value: f64 = token
        .parse()
        .map_err(|_| ParseError::at(line, format!("label `{token}` is not numeric")))?;
    if value == 1.0 {
        Ok(1.0)
    } else if value == -1.0 || value == 0.0 {
        Ok(-1.0)
    } else {
        Err(ParseError::at(
            line,
            format!("label `{token}` is not binary (+1/-1 or 0/1)"),
        ))
    }
}

/// Parses LIBSVM text. Blank lines are skipped and anything after `#` is a
/// comment. The dimension is the largest index seen.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<LabeledDataset> {
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| ParseError::at(lineno, e.to_string()))?;
        let content = match line.find('#') {
            Some(pos) => &line[..pos],
            None => line.as_str(),
        };
        let mut tokens = content.split_whitespace();
        let Some(label_token) = tokens.next() else {
            continue;
        };
        let label = parse_label(label_token, lineno)?;
        let mut features = Vec::new();
        let mut last: Option<usize> = None;
        for token in tokens {
            let (index, value) = token
                .split_once(':')
                .ok_or_else(|| ParseError::at(lineno, format!("malformed pair `{token}`")))?;
            let index: usize = index
                .parse()
                .map_err(|_| ParseError::at(lineno, format!("bad feature index in `{token}`")))?;
            if index == 0 {
                return Err(ParseError::at(lineno, "feature indices start at 1").into());
            }
            let value: f64 = value
                .parse()
                .map_err(|_| ParseError::at(lineno, format!("non-numeric value in `{token}`")))?;
            if !value.is_finite() {
                return Err(ParseError::at(lineno, format!("non-finite value in `{token}`")).into());
            }
            if let Some(prev) = last {
                if index <= prev {
                    return Err(ParseError::at(
                        lineno,
                        format!("feature index {index} does not increase (previous {prev})"),
                    )
                    .into());
                }
            }
            last = Some(index);
            features.push((index - 1, value));
        }
        rows.push(Sample { label, features });
    }
    let d = rows
        .iter()
        .filter_map(|r| r.features.last().map(|&(k, _)| k + 1))
        .max()
        .unwrap_or(0);
    LabeledDataset::new(rows, d)
}

pub fn load_libsvm(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    parse_libsvm(std::io::BufReader::new(file))
}

/// Shuffles rows with `seed` and cuts them into `n` contiguous chunks; the
/// first `m mod n` agents receive one extra sample.
pub fn split_uniform(ds: &LabeledDataset, n: usize, seed: u64) -> Result<Vec<LabeledDataset>> {
    let m = ds.m();
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one agent".into()));
    }
    if n > m {
        return Err(Error::TooFewSamples { samples: m, agents: n });
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut keyed_rng(&[stream::SPLIT, seed]));
    let base = m / n;
    let extra = m % n;
    let mut parts = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let size = base + usize::from(i < extra);
        let rows = order[start..start + size].iter().map(|&r| ds.rows[r].clone()).collect();
        parts.push(LabeledDataset { rows, d: ds.d });
        start += size;
    }
    Ok(parts)
}
