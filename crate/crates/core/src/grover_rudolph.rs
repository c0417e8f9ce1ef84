//! Partial-sum tree and per-round rotation schedule for preparing
//! `Σᵢ √qᵢ |i⟩` on `log d` qubits.
//!
//! Round `j` rotates qubit `j` of the superposition register, controlled on
//! the first `j − 1` qubits holding the tree position `i`, by
//! `θ = arccos √(q⁽ʲ⁾₂ᵢ / q⁽ʲ⁻¹⁾ᵢ)`.

use serde::Serialize;
use thiserror::Error;

use crate::fixedpoint::{self, FixedPoint, FixedPointError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("leaf count {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("leaves sum to {sum}, expected 2^{t} = {}", 1u64 << .t)]
    Normalization { sum: u64, t: u32 },
    #[error("child {c} exceeds parent {b}")]
    ChildExceedsParent { b: u64, c: u64 },
    #[error("site ({b}, {c}) is a special case, not a normal rotation")]
    NotNormal { b: u64, c: u64 },
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
}

/// `levels[k][i] = q⁽ᵏ⁾ᵢ` as numerators over `2^t`, from the root (`k = 0`)
/// down to the leaves (`k = log d`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SumTree {
    levels: Vec<Vec<u64>>,
    t: u32,
}

impl SumTree {
    pub fn depth(&self) -> u32 {
        (self.levels.len() - 1) as u32
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn node(&self, level: u32, index: usize) -> u64 {
        self.levels[level as usize][index]
    }

    pub fn level(&self, level: u32) -> &[u64] {
        &self.levels[level as usize]
    }

    pub fn leaves(&self) -> &[u64] {
        self.levels.last().expect("tree has a root")
    }

    /// Parent `b = q⁽ʲ⁻¹⁾ᵢ` and left child `c = q⁽ʲ⁾₂ᵢ` of the rotation site.
    pub fn site(&self, round: u32, index: usize) -> (u64, u64) {
        (self.node(round - 1, index), self.node(round, 2 * index))
    }
}

pub fn build_sum_tree(numerators: &[u64], t: u32) -> Result<SumTree, TreeError> {
    if numerators.is_empty() || !numerators.len().is_power_of_two() {
        return Err(TreeError::NotPowerOfTwo(numerators.len()));
    }
    let sum: u64 = numerators.iter().sum();
    if sum != 1u64 << t {
        return Err(TreeError::Normalization { sum, t });
    }
    let mut levels = vec![numerators.to_vec()];
    while levels[0].len() > 1 {
        let parent = levels[0].chunks_exact(2).map(|p| p[0] + p[1]).collect();
        levels.insert(0, parent);
    }
    Ok(SumTree { levels, t })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CaseTag {
    Normal,
    /// `c = b`: keep the qubit in `|0⟩`.
    ZeroAngle,
    /// `c = 0 < b`: flip the qubit to `|1⟩`.
    HalfPi,
}

/// The two SC flag qubits: `flg1 = [c = 0]`, `flg2 = [c = b]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct CaseFlags {
    pub c_is_zero: bool,
    pub c_equals_b: bool,
}

impl CaseFlags {
    pub fn compute(b: u64, c: u64) -> Self {
        Self {
            c_is_zero: c == 0,
            c_equals_b: c == b,
        }
    }

    /// Register encoding `flg1 flg2` read as a two-bit number.
    pub fn bits(self) -> u64 {
        (u64::from(self.c_is_zero) << 1) | u64::from(self.c_equals_b)
    }

    pub fn from_bits(bits: u64) -> Self {
        Self {
            c_is_zero: bits & 0b10 != 0,
            c_equals_b: bits & 0b01 != 0,
        }
    }

    /// `00 → NORMAL`, `01, 11 → ZERO_ANGLE`, `10 → HALF_PI`.
    pub fn case(self) -> CaseTag {
        match (self.c_is_zero, self.c_equals_b) {
            (false, false) => CaseTag::Normal,
            (_, true) => CaseTag::ZeroAngle,
            (true, false) => CaseTag::HalfPi,
        }
    }
}

pub fn classify_special_case(b: u64, c: u64) -> Result<CaseTag, TreeError> {
    if c > b {
        return Err(TreeError::ChildExceedsParent { b, c });
    }
    Ok(CaseFlags::compute(b, c).case())
}

/// `θ̃ = arccos(ã)` with `ã ≈ √(c/b)`, both at `n` fractional bits.
pub fn rotation_angle(b: u64, c: u64, n: u32) -> Result<FixedPoint, TreeError> {
    if classify_special_case(b, c)? != CaseTag::Normal {
        return Err(TreeError::NotNormal { b, c });
    }
    let a = fixedpoint::amplitude_ratio(c, b, n)?;
    Ok(fixedpoint::arccos(a, n)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScheduledAngle {
    pub case: CaseTag,
    /// Present exactly for `Normal` sites.
    pub angle: Option<FixedPoint>,
}

impl ScheduledAngle {
    /// `(cos θ̃, sin θ̃)` as applied by the rotation; special cases are exact.
    pub fn cos_sin(&self) -> (f64, f64) {
        match (self.case, self.angle) {
            (CaseTag::ZeroAngle, _) => (1.0, 0.0),
            (CaseTag::HalfPi, _) => (0.0, 1.0),
            (CaseTag::Normal, Some(theta)) => {
                let theta = theta.to_f64();
                (theta.cos(), theta.sin())
            }
            (CaseTag::Normal, None) => unreachable!("normal sites always carry an angle"),
        }
    }
}

/// `rounds[j − 1][i]` is the rotation for round `j` at tree position `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AngleSchedule {
    pub rounds: Vec<Vec<ScheduledAngle>>,
    pub n: u32,
}

pub fn build_schedule(tree: &SumTree, n: u32) -> Result<AngleSchedule, TreeError> {
    let rounds = (1..=tree.depth())
        .map(|round| {
            (0..1usize << (round - 1))
                .map(|i| {
                    let (b, c) = tree.site(round, i);
                    let case = classify_special_case(b, c)?;
                    let angle = match case {
                        CaseTag::Normal => Some(rotation_angle(b, c, n)?),
                        _ => None,
                    };
                    Ok(ScheduledAngle { case, angle })
                })
                .collect::<Result<Vec<_>, TreeError>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AngleSchedule { rounds, n })
}

impl AngleSchedule {
    pub fn depth(&self) -> u32 {
        self.rounds.len() as u32
    }

    pub fn site(&self, round: u32, index: usize) -> &ScheduledAngle {
        &self.rounds[round as usize - 1][index]
    }

    /// The amplitudes `√q̃ᵢ` the rotations produce: for each leaf, the product
    /// of `cos θ̃` (left branch) or `sin θ̃` (right branch) along its path.
    pub fn amplitudes(&self) -> Vec<f64> {
        let depth = self.depth();
        (0..1usize << depth)
            .map(|leaf| {
                (1..=depth)
                    .map(|round| {
                        let index = leaf >> (depth - round + 1);
                        let bit = (leaf >> (depth - round)) & 1;
                        let (cos, sin) = self.site(round, index).cos_sin();
                        if bit == 0 {
                            cos
                        } else {
                            sin
                        }
                    })
                    .product()
            })
            .collect()
    }
}

/// Reference amplitudes `√(qᵢ / 2^t)`.
pub fn ideal_superposition(numerators: &[u64], t: u32) -> Vec<f64> {
    let one = (1u64 << t) as f64;
    numerators
        .iter()
        .map(|&q| (q as f64 / one).sqrt())
        .collect()
}
