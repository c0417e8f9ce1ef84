//! Analytic cost models for update-rule implementations, and the exponent
//! accounting for the permanent-approximation scenario.
//!
//! Suppressed logarithmic factors appear as an explicit `L(x)^p` with
//! `L(x) = max(log₂ x, 1)`.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("epsilon must lie in (0, 1), got {0}")]
    Epsilon(f64),
    #[error("sparsity d must be at least 1")]
    Sparsity,
    #[error("problem size must be at least 2, got {0}")]
    ProblemSize(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Ours,
    HamSimReflection,
    SparseUnitary,
    BlockDiagonal,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Ours,
        Method::HamSimReflection,
        Method::SparseUnitary,
        Method::BlockDiagonal,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::HamSimReflection => "hamsim",
            Method::SparseUnitary => "sparse_unitary",
            Method::BlockDiagonal => "block_diagonal",
        }
    }

    pub fn scaling(self) -> &'static str {
        match self {
            Method::Ours => "m*d*polylog(d) + m*d*log(d)*polylog(1/eps)",
            Method::HamSimReflection | Method::SparseUnitary => "m*d*(1/eps)^kappa",
            Method::BlockDiagonal => "m*d^2*log(1/eps)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostParams {
    pub method: Method,
    pub m: u32,
    pub d: u32,
    pub epsilon: f64,
    /// Overall constant factor.
    pub constant: f64,
    /// Power `p` of each suppressed polylog factor.
    pub polylog_power: f64,
    /// Exponent of `1/ε` for the simulation-based methods.
    pub kappa: f64,
}

impl CostParams {
    pub fn new(method: Method, m: u32, d: u32, epsilon: f64) -> Self {
        Self {
            method,
            m,
            d,
            epsilon,
            constant: 1.0,
            polylog_power: 1.0,
            kappa: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostEstimate {
    pub method: Method,
    pub estimate: f64,
    pub scaling: &'static str,
}

fn log_factor(x: f64) -> f64 {
    x.log2().max(1.0)
}

pub fn estimate_cost(params: &CostParams) -> Result<CostEstimate, CostError> {
    let CostParams {
        method,
        m,
        d,
        epsilon,
        constant,
        polylog_power: p,
        kappa,
    } = *params;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(CostError::Epsilon(epsilon));
    }
    if d == 0 {
        return Err(CostError::Sparsity);
    }
    let (m, d) = (m as f64, d as f64);
    let inv_eps = 1.0 / epsilon;
    let core = match method {
        Method::Ours => {
            m * d * log_factor(d).powf(p) + m * d * log_factor(d) * log_factor(inv_eps).powf(p)
        }
        Method::HamSimReflection | Method::SparseUnitary => m * d * inv_eps.powf(kappa),
        Method::BlockDiagonal => m * d * d * log_factor(inv_eps),
    };
    Ok(CostEstimate {
        method,
        estimate: constant * core,
        scaling: method.scaling(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioRow {
    pub label: &'static str,
    /// Exponent of `n` in the number of chain steps.
    pub steps_exponent: u32,
    /// Exponent of `n` in the cost of one step.
    pub per_step_exponent: u32,
    /// The per-step cost carries an extra polylog factor.
    pub per_step_polylog: bool,
    pub total_exponent: u32,
    /// `n^total_exponent`, ignoring log factors.
    pub total_at_n: f64,
}

/// Exponent table for approximating an `n × n` permanent.
///
/// Classically `ℓ = n` stages, `S = n²` samples and `T = n⁴` steps give
/// `n⁷`. The walk needs `√T = n²` steps, so `n⁵`, times the per-step update
/// cost with `d = n` and `1/ε ∝ √T`.
pub fn permanent_scenario(n: u32) -> Result<Vec<ScenarioRow>, CostError> {
    if n < 2 {
        return Err(CostError::ProblemSize(n));
    }
    let row = |label, steps_exponent, per_step_exponent, per_step_polylog| {
        let total_exponent = steps_exponent + per_step_exponent;
        ScenarioRow {
            label,
            steps_exponent,
            per_step_exponent,
            per_step_polylog,
            total_exponent,
            total_at_n: (n as f64).powi(total_exponent as i32),
        }
    };
    Ok(vec![
        row("classical", 7, 0, false),
        row("hamsim", 5, 2, false),
        row("sparse_unitary", 5, 2, false),
        row("block_diagonal", 5, 2, true),
        row("ours", 5, 1, true),
    ])
}

pub fn scenario_text(n: u32, rows: &[ScenarioRow]) -> String {
    let mut out = format!("permanent scenario, n = {n}\n");
    let _ = writeln!(
        out,
        "{:<16} {:>6} {:>9} {:>8} {:>6} {:>12}",
        "method", "steps", "per_step", "polylog", "total", "n^total"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>9} {:>8} {:>6} {:>12.4e}",
            r.label,
            r.steps_exponent,
            r.per_step_exponent,
            r.per_step_polylog,
            r.total_exponent,
            r.total_at_n
        );
    }
    out
}

/// One row per `d`, one column per method, for plotting crossovers.
pub fn comparison_csv(template: &CostParams, d_values: &[u32]) -> Result<String, CostError> {
    let mut out = String::from("d");
    for method in Method::ALL {
        out.push(',');
        out.push_str(method.label());
    }
    out.push('\n');
    for &d in d_values {
        let _ = write!(out, "{d}");
        for method in Method::ALL {
            let e = estimate_cost(&CostParams {
                method,
                d,
                ..*template
            })?;
            let _ = write!(out, ",{}", e.estimate);
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn comparison_text(template: &CostParams, d_values: &[u32]) -> Result<String, CostError> {
    let mut out = format!(
        "m = {}, epsilon = {:e}\n{:>6}",
        template.m, template.epsilon, "d"
    );
    for method in Method::ALL {
        let _ = write!(out, " {:>16}", method.label());
    }
    out.push('\n');
    for &d in d_values {
        let _ = write!(out, "{d:>6}");
        for method in Method::ALL {
            let e = estimate_cost(&CostParams {
                method,
                d,
                ..*template
            })?;
            let _ = write!(out, " {:>16.6e}", e.estimate);
        }
        out.push('\n');
    }
    Ok(out)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(method: Method, m: u32, d: u32, eps: f64) -> f64 {
        estimate_cost(&CostParams::new(method, m, d, eps))
            .unwrap()
            .estimate
    }

    #[test]
    fn block_diagonal_is_quadratic_in_d() {
        for d in [2, 4, 8, 64] {
            let ratio =
                est(Method::BlockDiagonal, 5, 2 * d, 1e-3) / est(Method::BlockDiagonal, 5, d, 1e-3);
            assert!((ratio - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn simulation_methods_scale_with_inverse_precision() {
        for method in [Method::HamSimReflection, Method::SparseUnitary] {
            let ratio = est(method, 5, 8, 1e-4) / est(method, 5, 8, 1e-3 * 2.0);
            assert!((ratio - 20.0).abs() < 1e-9);
            let halved = est(method, 5, 8, 0.5e-3) / est(method, 5, 8, 1e-3);
            assert!((halved - 2.0).abs() < 1e-9);
        }
        let mut p = CostParams::new(Method::HamSimReflection, 5, 8, 1e-3);
        p.kappa = 2.0;
        let base = estimate_cost(&p).unwrap().estimate;
        p.epsilon /= 2.0;
        assert!((estimate_cost(&p).unwrap().estimate / base - 4.0).abs() < 1e-9);
    }

    #[test]
    fn ours_grows_polylogarithmically_in_precision() {
        for eps in [1e-2, 1e-4, 1e-8] {
            let ratio = est(Method::Ours, 6, 16, eps * eps) / est(Method::Ours, 6, 16, eps);
            // L(1/ε²) = 2·L(1/ε), so the ratio is bounded by 2^p = 2.
            assert!(ratio > 1.0 && ratio <= 2.0, "{ratio}");
        }
        let slope = loglog_slope(
            &[2.0, 4.0, 8.0, 16.0, 32.0],
            &[2, 4, 8, 16, 32].map(|d| est(Method::Ours, 6, d, 1e-6)),
        );
        // d·log d: superlinear, well short of the quadratic block-diagonal law.
        assert!(slope > 1.0 && slope < 1.7, "{slope}");
    }

    #[test]
    fn invalid_params() {
        assert_eq!(
            estimate_cost(&CostParams::new(Method::Ours, 4, 4, 1.0)),
            Err(CostError::Epsilon(1.0))
        );
        assert!(estimate_cost(&CostParams::new(Method::Ours, 4, 4, 0.0)).is_err());
        assert_eq!(
            estimate_cost(&CostParams::new(Method::Ours, 4, 0, 0.1)),
            Err(CostError::Sparsity)
        );
        assert_eq!(permanent_scenario(1), Err(CostError::ProblemSize(1)));
    }

    #[test]
    fn permanent_exponents() {
        for n in [2, 10, 100, 1000] {
            let rows = permanent_scenario(n).unwrap();
            let table: Vec<(&str, u32)> =
                rows.iter().map(|r| (r.label, r.total_exponent)).collect();
            assert_eq!(
                table,
                vec![
                    ("classical", 7),
                    ("hamsim", 7),
                    ("sparse_unitary", 7),
                    ("block_diagonal", 7),
                    ("ours", 6)
                ]
            );
            assert!(rows[1..].iter().all(|r| r.steps_exponent == 5));
        }
        let text = scenario_text(100, &permanent_scenario(100).unwrap());
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys = xs.map(|x: f64| 3.0 * x.powf(1.7));
        assert!((loglog_slope(&xs, &ys) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let csv = comparison_csv(&CostParams::new(Method::Ours, 4, 1, 1e-3), &[2, 4]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "d,ours,hamsim,sparse_unitary,block_diagonal");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("2,"));
    }
}
