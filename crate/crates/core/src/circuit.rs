//! Register-level synthesis of the quantum update circuit.
//!
//! The circuit acts on `|x⟩_L |0⟩_R` plus work registers:
//!
//! 1. load the neighbor list, presence flags and leaf probabilities (`N`, `T`),
//!    then fill the partial-sum tree with adders;
//! 2. for every internal tree node, compute the special-case flags and the
//!    angle, rotate one superposition qubit, and uncompute flags and angle;
//! 3. copy the selected neighbor into `R` (`M`) and erase the slot label (`C`);
//! 4. uncompute the tree, the probabilities and the neighbor list.
//!
//! Every classical op XORs a function of its inputs into its target, so an
//! uncompute is the same op applied a second time.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::ops::Range;

use serde::Serialize;
use thiserror::Error;

use crate::chain::MarkovChain;
use crate::fixedpoint::MAX_FRAC_BITS;
use crate::grover_rudolph::{self, AngleSchedule, CaseTag, TreeError};
use crate::oracles::{self, OracleError};

/// Additive constant in the default angle precision `n = ⌈3t/2⌉ + n_c`.
pub const DEFAULT_ANGLE_BITS_EXTRA: u32 = 4;

/// Margin constant standing in for the unquantified `c₁` of the error bound.
pub const ERROR_CONSTANT: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CircuitError {
    #[error("angle precision n = {n} must lie in {min}..={max}")]
    InvalidPrecision { n: u32, min: u32, max: u32 },
    #[error("op {index} ({kind}) breaks the uncompute discipline: {reason}")]
    Discipline {
        index: usize,
        kind: OpKind,
        reason: String,
    },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// `⌈3t/2⌉ + extra`.
pub fn default_angle_bits(t: u32, extra: u32) -> u32 {
    (3 * t).div_ceil(2) + extra
}

/// `t = ⌈log₂(1/ε)⌉ + ⌈log₂ d⌉ + 2`.
pub fn default_precision_bits(epsilon: f64, d: u32) -> u32 {
    let eps_bits = (1.0 / epsilon).log2().ceil().max(0.0) as u32;
    let d_bits = (d.max(1) as f64).log2().ceil() as u32;
    eps_bits + d_bits + 2
}

/// Bound on `‖(U − Ũ)|x⟩|0⟩‖`: `c₁ · √d · log₂d · 2^{−n + t/2}`.
pub fn precision_bound(d: u32, t: u32, n: u32) -> f64 {
    let d = d as f64;
    ERROR_CONSTANT * d.sqrt() * d.log2() * 2f64.powf(-(n as f64) + t as f64 / 2.0)
}

/// Symbolic cost `a_θ = K · n^e` of the angle-computing subcircuit, charged
/// both as operations per angle evaluation and as ancilla qubits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AngleCircuitModel {
    pub coefficient: f64,
    pub exponent: u32,
}

impl Default for AngleCircuitModel {
    fn default() -> Self {
        Self {
            coefficient: 1.0,
            exponent: 3,
        }
    }
}

impl AngleCircuitModel {
    pub fn cost(&self, n: u32) -> u64 {
        (self.coefficient * (n as f64).powi(self.exponent as i32)).ceil() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Register {
    Left,
    Right,
    /// `y^x_i`, one per slot.
    Neighbor(usize),
    /// Tree node `q⁽ˡᵉᵛᵉˡ⁾ᵢ` for `level ≥ 1`; the root is the constant `2^t`.
    Prob {
        level: u32,
        index: usize,
    },
    CaseFlags,
    Angle,
    Superposition,
    Presence,
}

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Register::Left => f.write_str("L"),
            Register::Right => f.write_str("R"),
            Register::Neighbor(i) => write!(f, "Y{i}"),
            Register::Prob { level, index } => write!(f, "Q{level}.{index}"),
            Register::CaseFlags => f.write_str("FLG"),
            Register::Angle => f.write_str("TH"),
            Register::Superposition => f.write_str("S"),
            Register::Presence => f.write_str("F"),
        }
    }
}

/// Register widths for given `(m, d, t, n)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegisterLayout {
    pub m: u32,
    pub d: u32,
    pub t: u32,
    pub n: u32,
    /// `log₂ d`.
    pub r: u32,
    /// `a_θ`, carried symbolically and never simulated.
    pub angle_ancilla_qubits: u64,
}

impl RegisterLayout {
    pub fn new(m: u32, d: u32, t: u32, n: u32, angle_model: &AngleCircuitModel) -> Self {
        Self {
            m,
            d,
            t,
            n,
            r: d.trailing_zeros(),
            angle_ancilla_qubits: angle_model.cost(n),
        }
    }

    /// Registers in simulation order.
    pub fn registers(&self) -> Vec<Register> {
        let d = self.d as usize;
        let mut regs = vec![Register::Left, Register::Right];
        regs.extend((0..d).map(Register::Neighbor));
        for level in 1..=self.r {
            regs.extend((0..1usize << level).map(|index| Register::Prob { level, index }));
        }
        regs.extend([
            Register::CaseFlags,
            Register::Angle,
            Register::Superposition,
            Register::Presence,
        ]);
        regs
    }

    pub fn num_registers(&self) -> usize {
        2 + self.d as usize + self.num_prob_registers() + 4
    }

    pub fn num_prob_registers(&self) -> usize {
        2 * self.d as usize - 2
    }

    /// Position of `reg` in a branch assignment.
    pub fn index(&self, reg: Register) -> usize {
        let d = self.d as usize;
        let tail = 2 + d + self.num_prob_registers();
        match reg {
            Register::Left => 0,
            Register::Right => 1,
            Register::Neighbor(i) => 2 + i,
            Register::Prob { level, index } => 2 + d + (1usize << level) - 2 + index,
            Register::CaseFlags => tail,
            Register::Angle => tail + 1,
            Register::Superposition => tail + 2,
            Register::Presence => tail + 3,
        }
    }

    pub fn width(&self, reg: Register) -> u32 {
        match reg {
            Register::Left | Register::Right | Register::Neighbor(_) => self.m,
            Register::Prob { .. } => self.t,
            Register::CaseFlags => 2,
            Register::Angle => self.n,
            Register::Superposition => self.r,
            Register::Presence => self.d,
        }
    }

    /// Qubits per register class.
    pub fn qubit_budget(&self) -> BTreeMap<&'static str, u64> {
        let (m, d, t) = (self.m as u64, self.d as u64, self.t as u64);
        BTreeMap::from([
            ("left", m),
            ("right", m),
            ("neighbors", d * m),
            ("probabilities", (2 * d - 2) * t),
            ("case_flags", 2),
            ("angle", self.n as u64),
            ("angle_ancilla", self.angle_ancilla_qubits),
            ("superposition", self.r as u64),
            ("presence_flags", d),
        ])
    }

    pub fn total_qubits(&self) -> u64 {
        self.qubit_budget().values().sum()
    }
}

/// One controlled rotation of the superposition register.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RotationSite {
    /// 1-based round `j`.
    pub round: u32,
    /// Tree position `i` encoded on the first `j − 1` superposition qubits.
    pub index: usize,
    /// Superposition qubit rotated, `j − 1` (0 is the most significant).
    pub target: u32,
    /// Required values of superposition qubits `0..j−1`.
    pub controls: Vec<bool>,
    /// Slots below this tree node; the rotation acts only if one is present.
    pub presence: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Op {
    OracleN,
    OracleT,
    /// `Q(level, index) ^= Q(level+1, 2·index) + Q(level+1, 2·index+1)`.
    Add {
        level: u32,
        index: usize,
    },
    SpecialCase {
        round: u32,
        index: usize,
    },
    DetermineAngle {
        round: u32,
        index: usize,
    },
    Rotation(RotationSite),
    Map,
    Clean,
    Uncompute {
        of: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OpKind {
    OracleN,
    OracleT,
    Add,
    Sc,
    Dac,
    ControlledRotation,
    Map,
    Clean,
    Uncompute,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::OracleN => "ORACLE_N",
            OpKind::OracleT => "ORACLE_T",
            OpKind::Add => "ADD",
            OpKind::Sc => "SC",
            OpKind::Dac => "DAC",
            OpKind::ControlledRotation => "CONTROLLED_ROTATION",
            OpKind::Map => "MAP",
            OpKind::Clean => "CLEAN",
            OpKind::Uncompute => "UNCOMPUTE",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::OracleN => OpKind::OracleN,
            Op::OracleT => OpKind::OracleT,
            Op::Add { .. } => OpKind::Add,
            Op::SpecialCase { .. } => OpKind::Sc,
            Op::DetermineAngle { .. } => OpKind::Dac,
            Op::Rotation(_) => OpKind::ControlledRotation,
            Op::Map => OpKind::Map,
            Op::Clean => OpKind::Clean,
            Op::Uncompute { .. } => OpKind::Uncompute,
        }
    }

    /// Reversible classical ops that write scratch data and must be undone.
    pub fn is_classical_compute(&self) -> bool {
        matches!(
            self,
            Op::OracleN
                | Op::OracleT
                | Op::Add { .. }
                | Op::SpecialCase { .. }
                | Op::DetermineAngle { .. }
        )
    }
}

#[derive(Debug, Clone)]
pub struct UpdateCircuit {
    layout: RegisterLayout,
    ops: Vec<Op>,
    chain: MarkovChain,
}

/// Synthesizes the update circuit with the default angle-cost model.
pub fn synthesize_update(chain: &MarkovChain, n: u32) -> Result<UpdateCircuit, CircuitError> {
    synthesize_update_with(chain, n, &AngleCircuitModel::default())
}

pub fn synthesize_update_with(
    chain: &MarkovChain,
    n: u32,
    angle_model: &AngleCircuitModel,
) -> Result<UpdateCircuit, CircuitError> {
    let min = (3 * chain.t()).div_ceil(2);
    if n < min || n > MAX_FRAC_BITS {
        return Err(CircuitError::InvalidPrecision {
            n,
            min,
            max: MAX_FRAC_BITS,
        });
    }
    let layout = RegisterLayout::new(chain.m(), chain.d(), chain.t(), n, angle_model);
    let r = layout.r;
    let mut ops = vec![Op::OracleN, Op::OracleT];
    let mut loads = vec![0, 1];

    for level in (1..r).rev() {
        for index in 0..1usize << level {
            loads.push(ops.len());
            ops.push(Op::Add { level, index });
        }
    }

    for round in 1..=r {
        let span = 1usize << (r - round + 1);
        for index in 0..1usize << (round - 1) {
            let sc = ops.len();
            ops.push(Op::SpecialCase { round, index });
            let dac = ops.len();
            ops.push(Op::DetermineAngle { round, index });
            ops.push(Op::Rotation(RotationSite {
                round,
                index,
                target: round - 1,
                controls: (0..round - 1)
                    .map(|q| (index >> (round - 2 - q)) & 1 == 1)
                    .collect(),
                presence: index * span..(index + 1) * span,
            }));
            ops.push(Op::Uncompute { of: dac });
            ops.push(Op::Uncompute { of: sc });
        }
    }

    ops.push(Op::Map);
    ops.push(Op::Clean);
    ops.extend(loads.into_iter().rev().map(|of| Op::Uncompute { of }));

    let circuit = UpdateCircuit {
        layout,
        ops,
        chain: chain.clone(),
    };
    circuit.check_uncompute_discipline()?;
    Ok(circuit)
}

impl UpdateCircuit {
    pub fn layout(&self) -> &RegisterLayout {
        &self.layout
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn chain(&self) -> &MarkovChain {
        &self.chain
    }

    #[cfg(test)]
    pub(crate) fn with_ops_unchecked(mut self, ops: Vec<Op>) -> Self {
        self.ops = ops;
        self
    }

    pub fn rotation_sites(&self) -> impl Iterator<Item = &RotationSite> {
        self.ops.iter().filter_map(|op| match op {
            Op::Rotation(site) => Some(site),
            _ => None,
        })
    }

    /// Checks that classical computations nest like brackets: each
    /// `UNCOMPUTE` undoes the most recent still-open computation, and nothing
    /// is left open at the end.
    pub fn check_uncompute_discipline(&self) -> Result<(), CircuitError> {
        let fail = |index: usize, reason: String| CircuitError::Discipline {
            index,
            kind: self.ops[index].kind(),
            reason,
        };
        let mut open: Vec<usize> = Vec::new();
        for (index, op) in self.ops.iter().enumerate() {
            match op {
                Op::Uncompute { of } => match open.pop() {
                    Some(top) if top == *of => {}
                    Some(top) => {
                        return Err(fail(
                            index,
                            format!("undoes op {of} while op {top} is open"),
                        ))
                    }
                    None => return Err(fail(index, format!("undoes op {of} with nothing open"))),
                },
                op if op.is_classical_compute() => open.push(index),
                _ => {}
            }
        }
        match open.last() {
            Some(&index) => Err(fail(index, "never uncomputed".into())),
            None => Ok(()),
        }
    }

    /// Angle schedule the DAC produces when the circuit runs on `|x⟩`.
    pub fn schedule_for(&self, x: u64) -> Result<AngleSchedule, CircuitError> {
        let numerators = oracles::probability_oracle(&self.chain, x)?;
        let tree = grover_rudolph::build_sum_tree(&numerators, self.layout.t)?;
        Ok(grover_rudolph::build_schedule(&tree, self.layout.n)?)
    }

    fn describe(&self, op: &Op) -> (String, String) {
        let d = self.layout.d as usize;
        let join = |regs: Vec<Register>| {
            regs.iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("+")
        };
        let neighbors = || (0..d).map(Register::Neighbor).collect::<Vec<_>>();
        let node = |level: u32, index: usize| {
            if level == 0 {
                "ROOT".to_string()
            } else {
                Register::Prob { level, index }.to_string()
            }
        };
        match op {
            Op::OracleN => {
                let mut t = neighbors();
                t.push(Register::Presence);
                (join(t), "L".into())
            }
            Op::OracleT => (
                join(
                    (0..d)
                        .map(|index| Register::Prob {
                            level: self.layout.r,
                            index,
                        })
                        .collect(),
                ),
                "L".into(),
            ),
            Op::Add { level, index } => (
                Register::Prob {
                    level: *level,
                    index: *index,
                }
                .to_string(),
                format!(
                    "{}+{}",
                    node(level + 1, 2 * index),
                    node(level + 1, 2 * index + 1)
                ),
            ),
            Op::SpecialCase { round, index } => (
                "FLG".into(),
                format!("{}+{}", node(round - 1, *index), node(*round, 2 * index)),
            ),
            Op::DetermineAngle { round, index } => (
                "TH".into(),
                format!(
                    "FLG+{}+{}",
                    node(round - 1, *index),
                    node(*round, 2 * index)
                ),
            ),
            Op::Rotation(site) => {
                let mut terms: Vec<String> = site
                    .controls
                    .iter()
                    .enumerate()
                    .map(|(q, &bit)| format!("S:{q}={}", u8::from(bit)))
                    .collect();
                terms.push(format!("F:{}..{}", site.presence.start, site.presence.end));
                (format!("S:{}", site.target), terms.join(","))
            }
            Op::Map => {
                let mut c = vec![Register::Superposition];
                c.extend(neighbors());
                c.push(Register::Presence);
                ("R".into(), join(c))
            }
            Op::Clean => {
                let mut c = vec![Register::Right];
                c.extend(neighbors());
                c.push(Register::Presence);
                ("S".into(), join(c))
            }
            Op::Uncompute { of } => self.describe(&self.ops[*of]),
        }
    }

    /// Line-oriented text form, one op per line:
    /// `OPKIND target=<reg[:qubit]> controls=<pattern> [angle=<source>] [of=<op>]`.
    ///
    /// With `specialize = Some(x)`, rotation angles are the values the DAC
    /// computes for input `|x⟩` (`angle=<num>/2^<n>`, or `angle=pi/2` for an
    /// exact flip); otherwise they read `angle=TH`.
    pub fn to_text(&self, specialize: Option<u64>) -> Result<String, CircuitError> {
        let schedule = specialize.map(|x| self.schedule_for(x)).transpose()?;
        let l = &self.layout;
        let mut out = format!(
            "# update-circuit m={} d={} t={} n={} ops={}",
            l.m,
            l.d,
            l.t,
            l.n,
            self.ops.len()
        );
        if let Some(x) = specialize {
            let _ = write!(out, " x={x}");
        }
        out.push('\n');
        for op in &self.ops {
            let (target, controls) = self.describe(op);
            let controls = if controls.is_empty() {
                "-".into()
            } else {
                controls
            };
            let _ = write!(out, "{} target={target} controls={controls}", op.kind());
            match op {
                Op::Rotation(site) => {
                    let angle = match &schedule {
                        None => "TH".to_string(),
                        Some(s) => {
                            let entry = s.site(site.round, site.index);
                            match (entry.case, entry.angle) {
                                (CaseTag::Normal, Some(a)) => {
                                    format!("{}/2^{}", a.value(), a.frac_bits())
                                }
                                (CaseTag::HalfPi, _) => "pi/2".to_string(),
                                _ => format!("0/2^{}", l.n),
                            }
                        }
                    };
                    let _ = write!(out, " angle={angle}");
                }
                Op::Uncompute { of } => {
                    let _ = write!(out, " of={of}");
                }
                _ => {}
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Elementary-operation charges per op kind.
///
/// Charges: `N` writes `d·m + d` bits, `T` writes `d·t`; an adder or the
/// two-comparison SC circuit costs `t` or `2t`; DAC costs `a_θ`; a rotation
/// applies `n` angle-bit rotations, each controlled on `j` qubits; `M` is `d`
/// controlled `m`-bit copies; `C` is `d` comparisons of `m` bits plus an
/// `r`-bit XOR. An `UNCOMPUTE` costs what the op it undoes costs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CostConfig {
    pub angle_model: AngleCircuitModel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostParameters {
    pub m: u32,
    pub d: u32,
    pub t: u32,
    pub n: u32,
    /// Guaranteed `‖(U − Ũ)|x⟩|0⟩‖` bound at these parameters.
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub parameters: CostParameters,
    pub qubits: BTreeMap<&'static str, u64>,
    pub total_qubits: u64,
    pub op_counts: BTreeMap<OpKind, u64>,
    pub op_costs: BTreeMap<OpKind, u64>,
    pub rotation_sites: u64,
    /// `a_θ` charged per DAC evaluation.
    pub angle_cost: u64,
    pub total_operations: u64,
}

pub fn gate_count(circuit: &UpdateCircuit, config: &CostConfig) -> CostReport {
    let l = circuit.layout();
    let (m, d, t, n, r) = (l.m as u64, l.d as u64, l.t as u64, l.n as u64, l.r as u64);
    let angle_cost = config.angle_model.cost(l.n);
    let charge = |op: &Op| -> u64 {
        match op {
            Op::OracleN => d * m + d,
            Op::OracleT => d * t,
            Op::Add { .. } => t,
            Op::SpecialCase { .. } => 2 * t,
            Op::DetermineAngle { .. } => angle_cost,
            Op::Rotation(site) => n * site.round as u64,
            Op::Map => d * m,
            Op::Clean => d * (m + r),
            Op::Uncompute { .. } => unreachable!("resolved by caller"),
        }
    };
    let mut op_counts = BTreeMap::new();
    let mut op_costs = BTreeMap::new();
    for op in circuit.ops() {
        let cost = match op {
            Op::Uncompute { of } => charge(&circuit.ops()[*of]),
            op => charge(op),
        };
        *op_counts.entry(op.kind()).or_insert(0) += 1;
        *op_costs.entry(op.kind()).or_insert(0) += cost;
    }
    let qubits = l.qubit_budget();
    CostReport {
        parameters: CostParameters {
            m: l.m,
            d: l.d,
            t: l.t,
            n: l.n,
            epsilon: precision_bound(l.d, l.t, l.n),
        },
        total_qubits: qubits.values().sum(),
        qubits,
        rotation_sites: circuit.rotation_sites().count() as u64,
        total_operations: op_costs.values().sum(),
        op_counts,
        op_costs,
        angle_cost,
    }
}
