//! The Szegedy walk `W = Ref_B · Ref_A` assembled from update columns, and
//! checks of its spectrum against the classical chain.
//!
//! Basis states of the walk space are `|x⟩_L |y⟩_R`, indexed `x·N + y`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::branchsim::{self, Column, SimulationError};
use crate::chain::{self, MarkovChain, SpectralError};
use crate::circuit::{precision_bound, UpdateCircuit};

/// Largest chain whose walk is built densely.
pub const MAX_WALK_STATES: usize = 32;

/// Eigenphases with smaller magnitude belong to the stationary space.
pub const ZERO_PHASE_TOL: f64 = 1e-9;

/// Tolerance on `‖W†W − I‖_max` and on column orthonormality.
pub const UNITARITY_TOL: f64 = 1e-10;

/// Slack allowed in `Δ ≥ √δ` and in `‖Wψ_π − ψ_π‖` with ideal columns.
pub const SPECTRAL_TOL: f64 = 1e-9;

const SCHUR_EPS: f64 = 1e-14;
const SCHUR_MAX_ITER: usize = 0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WalkError {
    #[error("walk needs at most {max} states, chain has {states}")]
    TooLarge { states: usize, max: usize },
    #[error("expected {expected} update columns, got {got}")]
    ColumnCount { expected: usize, got: usize },
    #[error("update columns are not orthonormal (Gram deviation {deviation:e})")]
    NonOrthonormal { deviation: f64 },
    #[error("walk operator is not unitary (‖W†W − I‖_max = {deviation:e})")]
    NotUnitary { deviation: f64 },
    #[error("eigensolver failed to converge")]
    Eigensolver,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
}

/// Where the update columns come from.
#[derive(Debug, Clone, Copy)]
pub enum ColumnSource<'a> {
    /// Exact `√p_xy` amplitudes.
    Ideal,
    /// Simulated columns of a synthesized circuit.
    Circuit(&'a UpdateCircuit),
}

#[derive(Debug, Clone)]
pub struct WalkOperator {
    num_states: usize,
    ref_a: DMatrix<f64>,
    ref_b: DMatrix<f64>,
    w: DMatrix<f64>,
}

fn swap_index(i: usize, n: usize) -> usize {
    (i % n) * n + i / n
}

fn max_identity_deviation(m: &DMatrix<f64>) -> f64 {
    m.iter()
        .enumerate()
        .map(|(k, v)| {
            let (i, j) = (k % m.nrows(), k / m.nrows());
            (v - if i == j { 1.0 } else { 0.0 }).abs()
        })
        .fold(0.0, f64::max)
}

/// Builds `W` from one column `φ_x` per state.
pub fn build_walk(columns: &[Column], num_states: usize) -> Result<WalkOperator, WalkError> {
    if num_states > MAX_WALK_STATES {
        return Err(WalkError::TooLarge {
            states: num_states,
            max: MAX_WALK_STATES,
        });
    }
    if columns.len() != num_states {
        return Err(WalkError::ColumnCount {
            expected: num_states,
            got: columns.len(),
        });
    }
    let deviation = branchsim::gram_deviation(columns);
    if deviation > UNITARITY_TOL {
        return Err(WalkError::NonOrthonormal { deviation });
    }
    let n = num_states;
    let dim = n * n;
    let mut phi = DMatrix::<f64>::zeros(dim, n);
    for (x, col) in columns.iter().enumerate() {
        for &(i, v) in col {
            phi[(i, x)] = v;
        }
    }
    let ref_a = &phi * phi.transpose() * 2.0 - DMatrix::<f64>::identity(dim, dim);
    let ref_b = DMatrix::from_fn(dim, dim, |i, j| ref_a[(swap_index(i, n), swap_index(j, n))]);
    let w = &ref_b * &ref_a;
    let deviation = max_identity_deviation(&(w.transpose() * &w));
    if deviation > UNITARITY_TOL {
        return Err(WalkError::NotUnitary { deviation });
    }
    Ok(WalkOperator {
        num_states,
        ref_a,
        ref_b,
        w,
    })
}

impl WalkOperator {
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn ref_a(&self) -> &DMatrix<f64> {
        &self.ref_a
    }

    pub fn ref_b(&self) -> &DMatrix<f64> {
        &self.ref_b
    }

    /// `‖W†W − I‖_max`.
    pub fn unitarity_deviation(&self) -> f64 {
        max_identity_deviation(&(self.w.transpose() * &self.w))
    }
}

/// Walk columns for `chain` from the chosen source.
pub fn walk_columns(
    chain: &MarkovChain,
    source: ColumnSource<'_>,
) -> Result<Vec<Column>, WalkError> {
    match source {
        ColumnSource::Ideal => Ok(branchsim::ideal_columns(chain)),
        ColumnSource::Circuit(circuit) => Ok(branchsim::circuit_columns(circuit)?),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WalkPhases {
    /// Eigenphases of `W` in `(−π, π]`, ascending.
    pub eigenphases: Vec<f64>,
    /// Smallest eigenphase magnitude at or above the zero-phase tolerance.
    pub min_eigenphase: Option<f64>,
    /// Phase gap `Δ`: half of `min_eigenphase`.
    ///
    /// `W` has eigenvalues `e^{±2iθ_j}` with `cos θ_j = λ_j`, so the halved
    /// phase is the angle compared against `√δ`.
    pub phase_gap: Option<f64>,
}

/// Dense eigendecomposition of `W`, with phases below [`ZERO_PHASE_TOL`]
/// treated as stationary.
pub fn phase_gap(walk: &WalkOperator) -> Result<WalkPhases, WalkError> {
    phase_gap_with_tolerance(walk, ZERO_PHASE_TOL)
}

pub fn phase_gap_with_tolerance(
    walk: &WalkOperator,
    zero_phase: f64,
) -> Result<WalkPhases, WalkError> {
    let schur = nalgebra::linalg::Schur::try_new(walk.w.clone(), SCHUR_EPS, SCHUR_MAX_ITER)
        .ok_or(WalkError::Eigensolver)?;
    let mut eigenphases: Vec<f64> = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| {
            let phase = z.arg();
            if phase <= -std::f64::consts::PI {
                std::f64::consts::PI
            } else {
                phase
            }
        })
        .collect();
    eigenphases.sort_by(f64::total_cmp);
    let min_eigenphase = eigenphases
        .iter()
        .map(|p| p.abs())
        .filter(|p| *p >= zero_phase)
        .min_by(f64::total_cmp);
    Ok(WalkPhases {
        eigenphases,
        min_eigenphase,
        phase_gap: min_eigenphase.map(|p| p / 2.0),
    })
}

/// Normalized `ψ_π = Σ_{x,y} √(π_x p_xy) |x,y⟩`.
pub fn stationary_state(chain: &MarkovChain, pi: &[f64]) -> DVector<f64> {
    let n = chain.num_states();
    let mut psi = DVector::<f64>::zeros(n * n);
    for (x, row) in chain.rows() {
        for tr in row {
            psi[x as usize * n + tr.target as usize] =
                (pi[x as usize] * chain.probability(x, tr.target)).sqrt();
        }
    }
    let norm = psi.norm();
    if norm > 0.0 {
        psi /= norm;
    }
    psi
}

/// `‖Wψ_π − ψ_π‖₂`.
pub fn check_stationary_eigenvector(
    walk: &WalkOperator,
    chain: &MarkovChain,
) -> Result<f64, WalkError> {
    let pi = chain::spectral_gap(chain)?.stationary;
    let psi = stationary_state(chain, &pi);
    Ok((&walk.w * &psi - &psi).norm())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumTolerances {
    pub zero_phase: f64,
    pub unitarity: f64,
    pub phase_gap: f64,
    pub stationary: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    /// Classical spectral gap `δ = 1 − λ₁`.
    pub delta: f64,
    pub sqrt_delta: f64,
    /// `Δ`, or `null` when every phase is zero.
    pub phase_gap: Option<f64>,
    pub min_eigenphase: Option<f64>,
    pub stationary_residual: f64,
    pub unitarity_deviation: f64,
    pub columns: &'static str,
    pub tolerances: SpectrumTolerances,
    pub eigenphases: Vec<f64>,
    pub pass: bool,
}

/// Builds the walk for `chain` and compares `Δ` with `√δ`.
///
/// Circuit columns differ from the ideal ones by up to the precision bound
/// `ε`, which perturbs every eigenphase, including the stationary ones, by
/// `O(ε)`. In that mode the zero-phase, gap and stationary tolerances are
/// widened by `2ε` (twice that for raw phases, which are `2Δ`).
pub fn spectrum_report(
    chain: &MarkovChain,
    source: ColumnSource<'_>,
) -> Result<SpectrumReport, WalkError> {
    let n = chain.num_states();
    if n > MAX_WALK_STATES {
        return Err(WalkError::TooLarge {
            states: n,
            max: MAX_WALK_STATES,
        });
    }
    let (columns, slack) = match source {
        ColumnSource::Ideal => ("ideal", 0.0),
        ColumnSource::Circuit(c) => {
            let l = c.layout();
            ("circuit", 2.0 * precision_bound(l.d, l.t, l.n))
        }
    };
    let tolerances = SpectrumTolerances {
        zero_phase: ZERO_PHASE_TOL + 2.0 * slack,
        unitarity: UNITARITY_TOL,
        phase_gap: SPECTRAL_TOL + slack,
        stationary: SPECTRAL_TOL + slack,
    };
    let spectrum = chain::spectral_gap(chain)?;
    let walk = build_walk(&walk_columns(chain, source)?, n)?;
    let phases = phase_gap_with_tolerance(&walk, tolerances.zero_phase)?;
    let psi = stationary_state(chain, &spectrum.stationary);
    let stationary_residual = (walk.matrix() * &psi - &psi).norm();
    let delta = spectrum.gap.max(0.0);
    let sqrt_delta = delta.sqrt();
    let gap_ok = match phases.phase_gap {
        Some(gap) => gap >= sqrt_delta - tolerances.phase_gap,
        None => sqrt_delta <= tolerances.phase_gap,
    };
    Ok(SpectrumReport {
        delta,
        sqrt_delta,
        phase_gap: phases.phase_gap,
        min_eigenphase: phases.min_eigenphase,
        stationary_residual,
        unitarity_deviation: walk.unitarity_deviation(),
        columns,
        pass: gap_ok && stationary_residual <= tolerances.stationary,
        tolerances,
        eigenphases: phases.eigenphases,
    })
}

#[cfg(test)]
#[allow(clippy::excessive_precision, clippy::approx_constant)]
mod tests {
    use super::*;
    use crate::chain::load_chain;
    use crate::circuit::{default_angle_bits, synthesize_update, DEFAULT_ANGLE_BITS_EXTRA};

    fn lazy2() -> MarkovChain {
        load_chain("m=1 d=2 t=2\n0: (0,3) (1,1)\n1: (0,1) (1,3)\n").unwrap()
    }

    fn uniform4() -> MarkovChain {
        MarkovChain::new(2, 4, 4, vec![vec![(0, 4), (1, 4), (2, 4), (3, 4)]; 4]).unwrap()
    }

    fn identity() -> MarkovChain {
        load_chain("m=2 d=1 t=3\n0: (0,8)\n1: (1,8)\n2: (2,8)\n3: (3,8)\n").unwrap()
    }

    fn ideal_walk(chain: &MarkovChain) -> WalkOperator {
        build_walk(&branchsim::ideal_columns(chain), chain.num_states()).unwrap()
    }

    #[test]
    fn identity_chain_gives_identity_walk() {
        let c = identity();
        let w = ideal_walk(&c);
        assert_eq!(max_identity_deviation(w.matrix()), 0.0);
        let phases = phase_gap(&w).unwrap();
        assert!(phases.eigenphases.iter().all(|p| *p == 0.0));
        assert_eq!(phases.phase_gap, None);
        assert_eq!(check_stationary_eigenvector(&w, &c).unwrap(), 0.0);
        let report = spectrum_report(&c, ColumnSource::Ideal).unwrap();
        assert_eq!(report.delta, 0.0);
        assert!(report.pass);
    }

    #[test]
    fn lazy_two_state_anchor() {
        let c = lazy2();
        let w = ideal_walk(&c);
        assert_eq!(w.matrix().nrows(), 4);
        let phases = phase_gap(&w).unwrap();
        // arccos(1/2), and the raw eigenphase is twice that.
        let anchor = 1.0471975511965976;
        assert!((phases.phase_gap.unwrap() - anchor).abs() <= 1e-9);
        assert!((phases.min_eigenphase.unwrap() - 2.0 * anchor).abs() <= 1e-9);
        // Eigenphases from a dense 4×4 oracle: {0, 0, ±2π/3}.
        let expected = [-2.0943951023931957, 0.0, 0.0, 2.0943951023931957];
        for (got, want) in phases.eigenphases.iter().zip(expected) {
            assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
        }
        let report = spectrum_report(&c, ColumnSource::Ideal).unwrap();
        assert!((report.delta - 0.5).abs() <= 1e-12);
        assert!(report.phase_gap.unwrap() >= 0.70711);
        assert!(report.stationary_residual <= 1e-9);
        assert!(report.pass);
    }

    #[test]
    fn complete_uniform_gap() {
        let report = spectrum_report(&uniform4(), ColumnSource::Ideal).unwrap();
        assert!((report.delta - 1.0).abs() <= 1e-12);
        assert!(report.phase_gap.unwrap() >= 1.0);
        assert!(report.pass);
    }

    #[test]
    fn reflections_square_to_identity() {
        let w = ideal_walk(&uniform4());
        assert!(max_identity_deviation(&(w.ref_a() * w.ref_a())) <= 1e-10);
        assert!(max_identity_deviation(&(w.ref_b() * w.ref_b())) <= 1e-10);
        assert!(w.unitarity_deviation() <= 1e-10);
    }

    #[test]
    fn circuit_columns_stay_within_slack() {
        let c = load_chain(
            "m=2 d=2 t=6\n0: (0,48) (1,16)\n1: (0,16) (2,48)\n2: (1,48) (3,16)\n3: (2,16) (3,48)\n",
        )
        .unwrap();
        let circuit =
            synthesize_update(&c, default_angle_bits(6, DEFAULT_ANGLE_BITS_EXTRA)).unwrap();
        let report = spectrum_report(&c, ColumnSource::Circuit(&circuit)).unwrap();
        assert_eq!(report.columns, "circuit");
        assert!(report.tolerances.stationary > SPECTRAL_TOL);
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn rejects_bad_columns() {
        let c = lazy2();
        let mut cols = branchsim::ideal_columns(&c);
        cols[0][0].1 *= 1.1;
        assert!(matches!(
            build_walk(&cols, 2),
            Err(WalkError::NonOrthonormal { .. })
        ));
        assert!(matches!(
            build_walk(&cols[..1], 2),
            Err(WalkError::ColumnCount { .. })
        ));
        assert!(matches!(
            build_walk(&[], 33),
            Err(WalkError::TooLarge { .. })
        ));
    }

    #[test]
    fn swap_is_an_involution() {
        for n in [1, 2, 5] {
            for i in 0..n * n {
                assert_eq!(swap_index(swap_index(i, n), n), i);
            }
        }
        assert_eq!(swap_index(3 + 2, 3), 2 * 3 + 1);
    }
}
