//! Sparse reversible Markov chains with dyadic transition probabilities.
//!
//! A chain on `2^m` states stores, for every state `x`, at most `d` entries
//! `(y, k)` meaning `p_xy = k / 2^t`. Rows must sum to exactly `2^t`.
//!
//! Two file encodings are accepted by [`load_chain`]:
//!
//! ```text
//! # comment
//! m=1 d=2 t=2
//! 0: (0,2) (1,2)
//! 1: (0,2) (1,2)
//! ```
//!
//! or a JSON document `{"m":1,"d":2,"t":2,"rows":[[[0,2],[1,2]],[[0,2],[1,2]]]}`.

use std::collections::HashSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported probability precision in bits.
pub const MAX_PRECISION_BITS: u32 = 32;

/// Largest supported state-register width.
pub const MAX_STATE_BITS: u32 = 24;

/// Largest state space on which dense spectral analysis is performed.
pub const MAX_DENSE_STATES: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("invalid header: {0}")]
    Header(String),
    #[error("{} state {state}: numerators sum to {sum}, expected {expected}", at_line(*.line))]
    RowSum {
        state: u64,
        line: Option<usize>,
        sum: u64,
        expected: u64,
    },
    #[error("{} state {state}: neighbor {neighbor} is outside the state space of size {size}", at_line(*.line))]
    NeighborOutOfRange {
        state: u64,
        line: Option<usize>,
        neighbor: u64,
        size: u64,
    },
    #[error("{} state {state}: row has {len} entries, more than d = {d}", at_line(*.line))]
    RowTooLong {
        state: u64,
        line: Option<usize>,
        len: usize,
        d: u32,
    },
    #[error("{} state {state}: row is empty", at_line(*.line))]
    EmptyRow { state: u64, line: Option<usize> },
    #[error("{} state {state}: neighbor {neighbor} listed twice", at_line(*.line))]
    DuplicateNeighbor {
        state: u64,
        line: Option<usize>,
        neighbor: u64,
    },
    #[error("{} state {state}: numerator {numerator} for neighbor {neighbor} must lie in 1..=2^t", at_line(*.line))]
    BadNumerator {
        state: u64,
        line: Option<usize>,
        neighbor: u64,
        numerator: u64,
    },
    #[error("line {line}: state {state} has more than one row")]
    DuplicateRow { state: u64, line: usize },
    #[error("state {state} has no row")]
    MissingRow { state: u64 },
    #[error("state {state} is outside the state space of size {size}")]
    StateOutOfRange { state: u64, size: u64 },
    #[error("cannot express chain at {target} bits of precision: {reason}")]
    Precision { target: u32, reason: String },
    #[error("invalid JSON chain: {0}")]
    Json(String),
}

fn at_line(line: Option<usize>) -> String {
    match line {
        Some(l) => format!("line {l}:"),
        None => "row for".to_string(),
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("chain has {states} states; dense analysis supports at most {max}")]
    TooLarge { states: usize, max: usize },
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e}); the chain may not be ergodic")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("chain is not reversible: worst detailed-balance violation {violation:e} exceeds {tolerance:e}")]
    NotReversible { violation: f64, tolerance: f64 },
    #[error("eigensolver failed: {0}")]
    Eigensolver(String),
}

/// One listed transition `x -> target` with probability `numerator / 2^t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Transition {
    pub target: u64,
    pub numerator: u64,
}

/// A validated sparse Markov chain. Rows are kept sorted by target id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkovChain {
    m: u32,
    d: u32,
    t: u32,
    rows: Vec<Vec<Transition>>,
}

#[derive(Serialize, Deserialize)]
struct ChainDocument {
    m: u32,
    d: u32,
    t: u32,
    rows: Vec<Vec<(u64, u64)>>,
}

impl MarkovChain {
    /// Builds a chain from `rows[x] = [(y, numerator), ...]`, validating every invariant.
    pub fn new(m: u32, d: u32, t: u32, rows: Vec<Vec<(u64, u64)>>) -> Result<Self, ChainError> {
        check_header(m, d, t)?;
        let size = 1u64 << m;
        if rows.len() as u64 != size {
            let state = rows.len().min(size as usize) as u64;
            return Err(if (rows.len() as u64) < size {
                ChainError::MissingRow { state }
            } else {
                ChainError::StateOutOfRange { state: size, size }
            });
        }
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(x, row)| validate_row(x as u64, None, &row, m, d, t))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { m, d, t, rows })
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    /// `log2 d`.
    pub fn r(&self) -> u32 {
        self.d.trailing_zeros()
    }

    pub fn num_states(&self) -> usize {
        1usize << self.m
    }

    /// The fixed-point representation of probability one, `2^t`.
    pub fn one(&self) -> u64 {
        1u64 << self.t
    }

    pub fn row(&self, x: u64) -> Option<&[Transition]> {
        self.rows.get(x as usize).map(Vec::as_slice)
    }

    pub fn rows(&self) -> impl Iterator<Item = (u64, &[Transition])> {
        self.rows
            .iter()
            .enumerate()
            .map(|(x, r)| (x as u64, r.as_slice()))
    }

    /// `p_xy` as a double; zero for unlisted pairs.
    pub fn probability(&self, x: u64, y: u64) -> f64 {
        self.numerator(x, y) as f64 / self.one() as f64
    }

    pub fn numerator(&self, x: u64, y: u64) -> u64 {
        self.row(x)
            .and_then(|row| row.iter().find(|tr| tr.target == y))
            .map_or(0, |tr| tr.numerator)
    }

    /// Dense transition matrix `P` with `P[(x, y)] = p_xy`.
    pub fn dense_matrix(&self) -> DMatrix<f64> {
        let n = self.num_states();
        let mut p = DMatrix::zeros(n, n);
        let one = self.one() as f64;
        for (x, row) in self.rows() {
            for tr in row {
                p[(x as usize, tr.target as usize)] = tr.numerator as f64 / one;
            }
        }
        p
    }

    /// Re-expresses the chain with `t` bits of precision. Raising precision is
    /// always exact; lowering it succeeds only if every numerator stays integral.
    pub fn with_precision(&self, t: u32) -> Result<Self, ChainError> {
        if t == self.t {
            return Ok(self.clone());
        }
        if t == 0 || t > MAX_PRECISION_BITS {
            return Err(ChainError::Precision {
                target: t,
                reason: format!("t must lie in 1..={MAX_PRECISION_BITS}"),
            });
        }
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(x, row)| {
                row.iter()
                    .map(|tr| {
                        let numerator = if t > self.t {
                            tr.numerator << (t - self.t)
                        } else {
                            let shift = self.t - t;
                            if tr.numerator & ((1u64 << shift) - 1) != 0 {
                                return Err(ChainError::Precision {
                                    target: t,
                                    reason: format!(
                                        "p[{x}][{}] = {}/2^{} is not a multiple of 2^-{t}",
                                        tr.target, tr.numerator, self.t
                                    ),
                                });
                            }
                            tr.numerator >> shift
                        };
                        Ok((tr.target, numerator))
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(self.m, self.d, t, rows)
    }

    /// Serializes to the line-oriented chain format accepted by [`load_chain`].
    pub fn to_text(&self) -> String {
        let mut out = format!("m={} d={} t={}\n", self.m, self.d, self.t);
        for (x, row) in self.rows() {
            let _ = write!(out, "{x}:");
            for tr in row {
                let _ = write!(out, " ({},{})", tr.target, tr.numerator);
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let doc = ChainDocument {
            m: self.m,
            d: self.d,
            t: self.t,
            rows: self
                .rows
                .iter()
                .map(|row| row.iter().map(|tr| (tr.target, tr.numerator)).collect())
                .collect(),
        };
        serde_json::to_string(&doc).expect("chain document serializes")
    }
}

fn check_header(m: u32, d: u32, t: u32) -> Result<(), ChainError> {
    if m > MAX_STATE_BITS {
        return Err(ChainError::Header(format!(
            "m = {m} exceeds {MAX_STATE_BITS}"
        )));
    }
    if d == 0 || !d.is_power_of_two() {
        return Err(ChainError::Header(format!("d = {d} is not a power of two")));
    }
    if t == 0 || t > MAX_PRECISION_BITS {
        return Err(ChainError::Header(format!(
            "t = {t} must lie in 1..={MAX_PRECISION_BITS}"
        )));
    }
    Ok(())
}

fn validate_row(
    state: u64,
    line: Option<usize>,
    row: &[(u64, u64)],
    m: u32,
    d: u32,
    t: u32,
) -> Result<Vec<Transition>, ChainError> {
    let size = 1u64 << m;
    let one = 1u64 << t;
    if row.is_empty() {
        return Err(ChainError::EmptyRow { state, line });
    }
    if row.len() > d as usize {
        return Err(ChainError::RowTooLong {
            state,
            line,
            len: row.len(),
            d,
        });
    }
    let mut seen = HashSet::with_capacity(row.len());
    let mut sum = 0u64;
    for &(neighbor, numerator) in row {
        if neighbor >= size {
            return Err(ChainError::NeighborOutOfRange {
                state,
                line,
                neighbor,
                size,
            });
        }
        if numerator == 0 || numerator > one {
            return Err(ChainError::BadNumerator {
                state,
                line,
                neighbor,
                numerator,
            });
        }
        if !seen.insert(neighbor) {
            return Err(ChainError::DuplicateNeighbor {
                state,
                line,
                neighbor,
            });
        }
        sum += numerator;
    }
    if sum != one {
        return Err(ChainError::RowSum {
            state,
            line,
            sum,
            expected: one,
        });
    }
    let mut out: Vec<Transition> = row
        .iter()
        .map(|&(target, numerator)| Transition { target, numerator })
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// Parses and validates a chain file (text or JSON).
pub fn load_chain(text: &str) -> Result<MarkovChain, ChainError> {
    if text.trim_start().starts_with('{') {
        let doc: ChainDocument =
            serde_json::from_str(text).map_err(|e| ChainError::Json(e.to_string()))?;
        return MarkovChain::new(doc.m, doc.d, doc.t, doc.rows);
    }

    let mut header: Option<(u32, u32, u32)> = None;
    let mut rows: Vec<Option<Vec<Transition>>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((m, d, t)) = header else {
            let (m, d, t) = parse_header(line, line_no)?;
            check_header(m, d, t)?;
            header = Some((m, d, t));
            rows = vec![None; 1usize << m];
            continue;
        };
        let (state, entries) = parse_row(line, line_no)?;
        let size = 1u64 << m;
        if state >= size {
            return Err(ChainError::StateOutOfRange { state, size });
        }
        let slot = &mut rows[state as usize];
        if slot.is_some() {
            return Err(ChainError::DuplicateRow {
                state,
                line: line_no,
            });
        }
        *slot = Some(validate_row(state, Some(line_no), &entries, m, d, t)?);
    }
    let Some((m, d, t)) = header else {
        return Err(ChainError::Header("missing `m=.. d=.. t=..` line".into()));
    };
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(x, r)| r.ok_or(ChainError::MissingRow { state: x as u64 }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MarkovChain { m, d, t, rows })
}

fn parse_header(line: &str, line_no: usize) -> Result<(u32, u32, u32), ChainError> {
    let (mut m, mut d, mut t) = (None, None, None);
    for field in line.split_whitespace() {
        let (key, value) = field.split_once('=').ok_or_else(|| ChainError::Malformed {
            line: line_no,
            message: format!("expected key=value in header, found `{field}`"),
        })?;
        let value: u32 = value.parse().map_err(|_| ChainError::Malformed {
            line: line_no,
            message: format!("`{value}` is not an integer"),
        })?;
        match key {
            "m" => m = Some(value),
            "d" => d = Some(value),
            "t" => t = Some(value),
            other => {
                return Err(ChainError::Malformed {
                    line: line_no,
                    message: format!("unknown header key `{other}`"),
                })
            }
        }
    }
    match (m, d, t) {
        (Some(m), Some(d), Some(t)) => Ok((m, d, t)),
        _ => Err(ChainError::Malformed {
            line: line_no,
            message: "header must define m, d and t".into(),
        }),
    }
}

fn parse_row(line: &str, line_no: usize) -> Result<(u64, Vec<(u64, u64)>), ChainError> {
    let malformed = |message: String| ChainError::Malformed {
        line: line_no,
        message,
    };
    let (state, rest) = line
        .split_once(':')
        .ok_or_else(|| malformed("expected `x: (y,num) ...`".into()))?;
    let state: u64 = state
        .trim()
        .parse()
        .map_err(|_| malformed(format!("`{}` is not a state id", state.trim())))?;

    let mut entries = Vec::new();
    let mut rest = rest.trim_start();
    while !rest.is_empty() {
        let body = rest
            .strip_prefix('(')
            .ok_or_else(|| malformed(format!("expected `(` at `{rest}`")))?;
        let close = body
            .find(')')
            .ok_or_else(|| malformed("unterminated `(`".into()))?;
        let (y, num) = body[..close]
            .split_once(',')
            .ok_or_else(|| malformed(format!("expected `y,num` in `({})`", &body[..close])))?;
        let y: u64 = y
            .trim()
            .parse()
            .map_err(|_| malformed(format!("`{}` is not a neighbor id", y.trim())))?;
        let num: u64 = num
            .trim()
            .parse()
            .map_err(|_| malformed(format!("`{}` is not a numerator", num.trim())))?;
        entries.push((y, num));
        rest = body[close + 1..].trim_start();
    }
    Ok((state, entries))
}

/// Spectrum of a reversible chain.
#[derive(Debug, Clone, Serialize)]
pub struct ChainSpectrum {
    /// Eigenvalues of `P`, sorted descending.
    pub eigenvalues: Vec<f64>,
    pub stationary: Vec<f64>,
    /// `1 - λ₁`; zero for a single-state chain.
    pub gap: f64,
}

impl ChainSpectrum {
    pub fn second_eigenvalue(&self) -> Option<f64> {
        self.eigenvalues.get(1).copied()
    }
}

const POWER_ITERATION_BUDGET: usize = 500_000;

/// Stationary distribution of `chain`.
///
/// Chains with at most [`MAX_DENSE_STATES`] states are solved directly from
/// `π(P − I) = 0, Σπ = 1`. Larger chains, and reducible ones whose system is
/// singular, fall back to power iteration on the lazy chain `(P + I) / 2`,
/// which shares `π` with `P` but does not oscillate on periodic chains.
pub fn stationary_distribution(chain: &MarkovChain, tol: f64) -> Result<Vec<f64>, SpectralError> {
    if chain.num_states() <= MAX_DENSE_STATES {
        if let Some(pi) = dense_stationary(chain, tol) {
            return Ok(pi);
        }
    }
    power_iteration(chain, tol)
}

fn dense_stationary(chain: &MarkovChain, tol: f64) -> Option<Vec<f64>> {
    let n = chain.num_states();
    let p = chain.dense_matrix();
    let mut a = p.transpose() - DMatrix::<f64>::identity(n, n);
    a.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = a.lu().solve(&rhs)?;
    if pi.iter().any(|v| !v.is_finite() || *v < -tol) {
        return None;
    }
    let pi = pi.map(|v| v.max(0.0));
    let pi = &pi / pi.sum();
    let residual = (p.transpose() * &pi - &pi).abs().sum();
    (residual <= tol.max(1e-12)).then(|| pi.iter().copied().collect())
}

fn power_iteration(chain: &MarkovChain, tol: f64) -> Result<Vec<f64>, SpectralError> {
    let n = chain.num_states();
    let one = chain.one() as f64;
    let step = |pi: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (x, row) in chain.rows() {
            let mass = pi[x as usize];
            for tr in row {
                out[tr.target as usize] += mass * tr.numerator as f64 / one;
            }
        }
    };
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for iteration in 0..POWER_ITERATION_BUDGET {
        step(&pi, &mut next);
        residual = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        if residual <= tol {
            let total: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|v| *v /= total);
            return Ok(pi);
        }
        for (p, q) in pi.iter_mut().zip(&next) {
            *p = 0.5 * (*p + q);
        }
        if iteration % 64 == 63 {
            let total: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|v| *v /= total);
        }
    }
    Err(SpectralError::NoConvergence {
        iterations: POWER_ITERATION_BUDGET,
        residual,
    })
}

/// Largest detailed-balance violation `|π_x p_xy − π_y p_yx|` over every listed pair.
pub fn detailed_balance_violation(chain: &MarkovChain, pi: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (x, row) in chain.rows() {
        for tr in row {
            let forward = pi[x as usize] * chain.probability(x, tr.target);
            let backward = pi[tr.target as usize] * chain.probability(tr.target, x);
            worst = worst.max((forward - backward).abs());
        }
    }
    worst
}

/// Detailed balance holds to within `tol` for every listed pair, in either direction.
pub fn check_reversibility(chain: &MarkovChain, pi: &[f64], tol: f64) -> bool {
    detailed_balance_violation(chain, pi) <= tol
}

pub const STATIONARY_TOL: f64 = 1e-13;
pub const REVERSIBILITY_TOL: f64 = 1e-9;

/// Dense spectrum of a reversible chain via the symmetrization
/// `diag(√π) · P · diag(√π)⁻¹`.
pub fn spectral_gap(chain: &MarkovChain) -> Result<ChainSpectrum, SpectralError> {
    let n = chain.num_states();
    if n > MAX_DENSE_STATES {
        return Err(SpectralError::TooLarge {
            states: n,
            max: MAX_DENSE_STATES,
        });
    }
    let pi = stationary_distribution(chain, STATIONARY_TOL)?;
    let violation = detailed_balance_violation(chain, &pi);
    if violation > REVERSIBILITY_TOL {
        return Err(SpectralError::NotReversible {
            violation,
            tolerance: REVERSIBILITY_TOL,
        });
    }
    let p = chain.dense_matrix();
    let sqrt_pi = DVector::from_iterator(n, pi.iter().map(|v| v.sqrt()));
    let mut sym = DMatrix::from_fn(n, n, |x, y| sqrt_pi[x] * p[(x, y)] / sqrt_pi[y]);
    sym = (&sym + sym.transpose()) * 0.5;
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(SpectralError::Eigensolver(
            "symmetrized matrix is not finite".into(),
        ));
    }
    let eig = sym.symmetric_eigen();
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    let gap = eigenvalues.get(1).map_or(0.0, |l1| 1.0 - l1);
    Ok(ChainSpectrum {
        eigenvalues,
        stationary: pi,
        gap,
    })
}
