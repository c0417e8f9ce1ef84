//! Exact sparse simulation of an [`UpdateCircuit`] on basis inputs `|x⟩|0⟩`.
//!
//! Every op except a controlled rotation maps a basis assignment of the
//! registers to another one, so the state is a short list of branches (at
//! most `d`), each a full integer assignment with a complex amplitude.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::chain::MarkovChain;
use crate::circuit::{CircuitError, Op, Register, RegisterLayout, RotationSite, UpdateCircuit};
use crate::grover_rudolph::{self, CaseFlags, CaseTag, TreeError};
use crate::oracles::{self, OracleError};

/// Largest state space accepted by [`unitarity_check`] and column extraction.
pub const MAX_COLUMN_STATES: usize = 64;

const NORM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("state {state} is outside the state space of size {size}")]
    StateOutOfRange { state: u64, size: u64 },
    #[error("register {register} holds {value} after the circuit on |{x}⟩ (uncompute bug)")]
    DirtyAncilla {
        x: u64,
        register: String,
        value: u64,
    },
    #[error("norm drifted to {norm} after op {op} on |{x}⟩")]
    NormDrift { x: u64, op: usize, norm: f64 },
    #[error("column extraction needs at most {max} states, chain has {states}")]
    TooManyStates { states: usize, max: usize },
    #[error("circuit was synthesized for a different chain")]
    ChainMismatch,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branch {
    /// One value per register, in [`RegisterLayout::registers`] order.
    pub assignment: Vec<u64>,
    pub amplitude: Complex64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchState {
    pub x: u64,
    /// Sorted by assignment.
    pub branches: Vec<Branch>,
}

impl BranchState {
    pub fn norm_sqr(&self) -> f64 {
        self.branches.iter().map(|b| b.amplitude.norm_sqr()).sum()
    }

    /// Amplitude on each `|x⟩_L |y⟩_R`, ascending in `y`.
    pub fn output_amplitudes(&self, layout: &RegisterLayout) -> Vec<(u64, Complex64)> {
        let r = layout.index(Register::Right);
        let mut out: BTreeMap<u64, Complex64> = BTreeMap::new();
        for b in &self.branches {
            *out.entry(b.assignment[r]).or_default() += b.amplitude;
        }
        out.into_iter().collect()
    }
}

/// One trace record: op position, kind, live branches and squared norm after it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceLine {
    pub op: usize,
    pub kind: String,
    pub branches: usize,
    pub norm: f64,
}

pub fn format_trace(trace: &[TraceLine]) -> String {
    let mut out = String::new();
    for line in trace {
        let _ = writeln!(
            out,
            "{:>4} {:<20} branches={} norm={:.15}",
            line.op, line.kind, line.branches, line.norm
        );
    }
    out
}

struct Simulator<'a> {
    circuit: &'a UpdateCircuit,
    layout: &'a RegisterLayout,
    x: u64,
    root: u64,
}

impl Simulator<'_> {
    fn node(&self, a: &[u64], level: u32, index: usize) -> u64 {
        if level == 0 {
            self.root
        } else {
            a[self.layout.index(Register::Prob { level, index })]
        }
    }

    fn site_inputs(&self, a: &[u64], round: u32, index: usize) -> (u64, u64) {
        (
            self.node(a, round - 1, index),
            self.node(a, round, 2 * index),
        )
    }

    /// Applies a basis-preserving op to one assignment in place.
    fn apply_classical(&self, op: &Op, a: &mut [u64]) -> Result<(), SimulationError> {
        let l = self.layout;
        match op {
            Op::OracleN => {
                let row =
                    oracles::neighbor_oracle(self.circuit.chain(), a[l.index(Register::Left)])?;
                for (i, y) in row.neighbors.iter().enumerate() {
                    a[l.index(Register::Neighbor(i))] ^= y;
                }
                a[l.index(Register::Presence)] ^= row.flag_mask();
            }
            Op::OracleT => {
                let q =
                    oracles::probability_oracle(self.circuit.chain(), a[l.index(Register::Left)])?;
                if l.r > 0 {
                    for (index, v) in q.iter().enumerate() {
                        a[l.index(Register::Prob { level: l.r, index })] ^= v;
                    }
                }
            }
            Op::Add { level, index } => {
                let sum =
                    self.node(a, level + 1, 2 * index) + self.node(a, level + 1, 2 * index + 1);
                a[l.index(Register::Prob {
                    level: *level,
                    index: *index,
                })] ^= sum;
            }
            Op::SpecialCase { round, index } => {
                let (b, c) = self.site_inputs(a, *round, *index);
                a[l.index(Register::CaseFlags)] ^= CaseFlags::compute(b, c).bits();
            }
            Op::DetermineAngle { round, index } => {
                let flags = CaseFlags::from_bits(a[l.index(Register::CaseFlags)]);
                if flags.case() == CaseTag::Normal {
                    let (b, c) = self.site_inputs(a, *round, *index);
                    a[l.index(Register::Angle)] ^=
                        grover_rudolph::rotation_angle(b, c, l.n)?.value();
                }
            }
            Op::Map => {
                let s = a[l.index(Register::Superposition)] as usize;
                if s < l.d as usize && a[l.index(Register::Presence)] >> s & 1 == 1 {
                    a[l.index(Register::Right)] ^= a[l.index(Register::Neighbor(s))];
                }
            }
            Op::Clean => {
                let flags = a[l.index(Register::Presence)];
                let r = a[l.index(Register::Right)];
                let slot = (0..l.d as usize)
                    .find(|&k| flags >> k & 1 == 1 && a[l.index(Register::Neighbor(k))] == r);
                if let Some(k) = slot {
                    a[l.index(Register::Superposition)] ^= k as u64;
                }
            }
            Op::Uncompute { of } => self.apply_classical(&self.circuit.ops()[*of], a)?,
            Op::Rotation(_) => unreachable!("rotations are not classical"),
        }
        Ok(())
    }

    fn rotate(
        &self,
        site: &RotationSite,
        branches: BTreeMap<Vec<u64>, Complex64>,
    ) -> BTreeMap<Vec<u64>, Complex64> {
        let l = self.layout;
        let s_idx = l.index(Register::Superposition);
        let s_bit = |q: u32| l.r - 1 - q;
        let presence_mask: u64 = site.presence.clone().fold(0, |m, k| m | 1 << k);
        let mut out: BTreeMap<Vec<u64>, Complex64> = BTreeMap::new();
        for (mut a, amp) in branches {
            let s = a[s_idx];
            let selected = site
                .controls
                .iter()
                .enumerate()
                .all(|(q, &bit)| (s >> s_bit(q as u32) & 1 == 1) == bit)
                && a[l.index(Register::Presence)] & presence_mask != 0;
            if !selected {
                *out.entry(a).or_default() += amp;
                continue;
            }
            let (cos, sin) = match CaseFlags::from_bits(a[l.index(Register::CaseFlags)]).case() {
                CaseTag::ZeroAngle => (1.0, 0.0),
                CaseTag::HalfPi => (0.0, 1.0),
                CaseTag::Normal => {
                    let theta = a[l.index(Register::Angle)] as f64 / 2f64.powi(l.n as i32);
                    (theta.cos(), theta.sin())
                }
            };
            let mask = 1u64 << s_bit(site.target);
            let (zero_amp, one_amp) = if s & mask == 0 {
                (amp * cos, amp * sin)
            } else {
                (-amp * sin, amp * cos)
            };
            let mut a1 = a.clone();
            a[s_idx] = s & !mask;
            a1[s_idx] = s | mask;
            *out.entry(a).or_default() += zero_amp;
            *out.entry(a1).or_default() += one_amp;
        }
        out.retain(|_, amp| *amp != Complex64::new(0.0, 0.0));
        out
    }
}

/// Runs the circuit on `|x⟩|0⟩`. With `trace`, records one line per op.
pub fn simulate_update_traced(
    circuit: &UpdateCircuit,
    x: u64,
    mut trace: Option<&mut Vec<TraceLine>>,
) -> Result<BranchState, SimulationError> {
    let layout = circuit.layout();
    let size = circuit.chain().num_states() as u64;
    if x >= size {
        return Err(SimulationError::StateOutOfRange { state: x, size });
    }
    let sim = Simulator {
        circuit,
        layout,
        x,
        root: circuit.chain().one(),
    };
    let mut start = vec![0u64; layout.num_registers()];
    start[layout.index(Register::Left)] = x;
    let mut branches = BTreeMap::from([(start, Complex64::new(1.0, 0.0))]);

    for (i, op) in circuit.ops().iter().enumerate() {
        branches = match op {
            Op::Rotation(site) => sim.rotate(site, branches),
            op => {
                let mut next = BTreeMap::new();
                for (mut a, amp) in branches {
                    sim.apply_classical(op, &mut a)?;
                    *next.entry(a).or_default() += amp;
                }
                next
            }
        };
        let norm: f64 = branches.values().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(SimulationError::NormDrift { x, op: i, norm });
        }
        if let Some(trace) = trace.as_deref_mut() {
            trace.push(TraceLine {
                op: i,
                kind: op.kind().to_string(),
                branches: branches.len(),
                norm,
            });
        }
    }

    let registers = layout.registers();
    for a in branches.keys() {
        for (reg, &value) in registers.iter().zip(a) {
            if !matches!(reg, Register::Left | Register::Right) && value != 0 {
                return Err(SimulationError::DirtyAncilla {
                    x: sim.x,
                    register: reg.to_string(),
                    value,
                });
            }
        }
    }
    Ok(BranchState {
        x,
        branches: branches
            .into_iter()
            .map(|(assignment, amplitude)| Branch {
                assignment,
                amplitude,
            })
            .collect(),
    })
}

pub fn simulate_update(circuit: &UpdateCircuit, x: u64) -> Result<BranchState, SimulationError> {
    simulate_update_traced(circuit, x, None)
}

/// `‖Ũ|x,0⟩ − Σ_y √p_xy |x,y⟩‖₂` with the ideal side taken from `chain`.
pub fn verify_update(
    chain: &MarkovChain,
    circuit: &UpdateCircuit,
    x: u64,
) -> Result<f64, SimulationError> {
    let state = simulate_update(circuit, x)?;
    let mut diff: BTreeMap<u64, Complex64> = state
        .output_amplitudes(circuit.layout())
        .into_iter()
        .collect();
    let row = chain.row(x).ok_or(SimulationError::StateOutOfRange {
        state: x,
        size: chain.num_states() as u64,
    })?;
    for tr in row {
        *diff.entry(tr.target).or_default() -= chain.probability(x, tr.target).sqrt();
    }
    Ok(diff.values().map(|a| a.norm_sqr()).sum::<f64>().sqrt())
}

/// Residuals for every state, computed in parallel and ordered by `x`.
pub fn verify_all(
    chain: &MarkovChain,
    circuit: &UpdateCircuit,
) -> Result<Vec<f64>, SimulationError> {
    (0..chain.num_states() as u64)
        .into_par_iter()
        .map(|x| verify_update(chain, circuit, x))
        .collect()
}

/// Sparse column `Ũ|x,0⟩` restricted to `(L, R)`, as `(x·N + y, amplitude)`.
pub type Column = Vec<(usize, f64)>;

/// Columns produced by simulating the circuit on every `x`.
pub fn circuit_columns(circuit: &UpdateCircuit) -> Result<Vec<Column>, SimulationError> {
    let n = circuit.chain().num_states();
    if n > MAX_COLUMN_STATES {
        return Err(SimulationError::TooManyStates {
            states: n,
            max: MAX_COLUMN_STATES,
        });
    }
    (0..n as u64)
        .into_par_iter()
        .map(|x| {
            let state = simulate_update(circuit, x)?;
            Ok(state
                .output_amplitudes(circuit.layout())
                .into_iter()
                .map(|(y, amp)| (x as usize * n + y as usize, amp.re))
                .collect())
        })
        .collect()
}

/// Exact columns `Σ_y √p_xy |x,y⟩`.
pub fn ideal_columns(chain: &MarkovChain) -> Vec<Column> {
    let n = chain.num_states();
    chain
        .rows()
        .map(|(x, row)| {
            row.iter()
                .map(|tr| {
                    (
                        x as usize * n + tr.target as usize,
                        chain.probability(x, tr.target).sqrt(),
                    )
                })
                .collect()
        })
        .collect()
}

fn sparse_dot(a: &Column, b: &Column) -> f64 {
    let lookup: BTreeMap<usize, f64> = b.iter().copied().collect();
    a.iter()
        .filter_map(|(i, v)| lookup.get(i).map(|w| v * w))
        .sum()
}

/// `max |⟨φ_x, φ_x'⟩ − δ_xx'|` over a set of columns.
pub fn gram_deviation(columns: &[Column]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in columns.iter().enumerate() {
        for (j, b) in columns.iter().enumerate().skip(i) {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((sparse_dot(a, b) - target).abs());
        }
    }
    worst
}

/// Gram deviation of the simulated columns of `circuit`.
pub fn unitarity_check(
    chain: &MarkovChain,
    circuit: &UpdateCircuit,
) -> Result<f64, SimulationError> {
    if circuit.chain() != chain {
        return Err(SimulationError::ChainMismatch);
    }
    Ok(gram_deviation(&circuit_columns(circuit)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::load_chain;
    use crate::circuit::{
        default_angle_bits, precision_bound, synthesize_update, DEFAULT_ANGLE_BITS_EXTRA,
    };
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synth(chain: &MarkovChain) -> UpdateCircuit {
        synthesize_update(
            chain,
            default_angle_bits(chain.t(), DEFAULT_ANGLE_BITS_EXTRA),
        )
        .unwrap()
    }

    fn identity(m: u32, d: u32, t: u32) -> MarkovChain {
        MarkovChain::new(m, d, t, (0..1u64 << m).map(|x| vec![(x, 1 << t)]).collect()).unwrap()
    }

    /// Rows with random numerators over random distinct neighbors.
    fn random_chain(rng: &mut ChaCha8Rng, m: u32, d: u32, t: u32) -> MarkovChain {
        let size = 1u64 << m;
        let rows = (0..size)
            .map(|_| {
                let k = rng.gen_range(1..=d.min(size as u32)) as usize;
                let mut targets: Vec<u64> = Vec::new();
                while targets.len() < k {
                    let y = rng.gen_range(0..size);
                    if !targets.contains(&y) {
                        targets.push(y);
                    }
                }
                let mut cuts: Vec<u64> = (0..k - 1).map(|_| rng.gen_range(1..1u64 << t)).collect();
                cuts.push(0);
                cuts.push(1 << t);
                cuts.sort_unstable();
                let mut row: Vec<(u64, u64)> = targets
                    .into_iter()
                    .zip(cuts.windows(2).map(|w| w[1] - w[0]))
                    .filter(|&(_, q)| q > 0)
                    .collect();
                row.sort_unstable();
                row
            })
            .collect();
        MarkovChain::new(m, d, t, rows).unwrap()
    }

    #[test]
    fn identity_chain_is_exact() {
        for d in [1, 2, 4] {
            let chain = identity(2, d, 6);
            let c = synth(&chain);
            for x in 0..4 {
                let s = simulate_update(&c, x).unwrap();
                assert_eq!(s.branches.len(), 1);
                assert_eq!(s.branches[0].amplitude, Complex64::new(1.0, 0.0));
                assert_eq!(
                    s.output_amplitudes(c.layout()),
                    vec![(x, Complex64::new(1.0, 0.0))]
                );
                assert_eq!(verify_update(&chain, &c, x).unwrap(), 0.0);
            }
            assert_eq!(unitarity_check(&chain, &c).unwrap(), 0.0);
        }
    }

    #[test]
    fn uniform_row_matches_ideal() {
        let chain =
            MarkovChain::new(2, 4, 8, vec![vec![(0, 64), (1, 64), (2, 64), (3, 64)]; 4]).unwrap();
        let c = synth(&chain);
        let s = simulate_update(&c, 2).unwrap();
        assert_eq!(s.branches.len(), 4);
        let ideal = grover_rudolph::ideal_superposition(&[64; 4], 8);
        let bound = precision_bound(4, 8, c.layout().n);
        for ((y, amp), want) in s.output_amplitudes(c.layout()).iter().zip(ideal) {
            assert!(*y < 4);
            assert!((amp.re - want).abs() <= bound, "{amp} vs {want}");
            assert_eq!(amp.im, 0.0);
        }
    }

    #[test]
    fn padded_slots_stay_empty() {
        let chain =
            load_chain("m=2 d=4 t=4\n0: (1,4) (3,12)\n1: (1,16)\n2: (2,16)\n3: (0,12) (3,4)\n")
                .unwrap();
        let c = synth(&chain);
        let s = simulate_update(&c, 0).unwrap();
        assert_eq!(s.branches.len(), 2);
        let ys: Vec<u64> = s
            .output_amplitudes(c.layout())
            .iter()
            .map(|p| p.0)
            .collect();
        assert_eq!(ys, vec![1, 3]);
        assert!(verify_update(&chain, &c, 0).unwrap() <= precision_bound(4, 4, c.layout().n));
    }

    #[test]
    fn point_mass_rows_are_exact() {
        let chain =
            load_chain("m=2 d=4 t=4\n0: (2,16)\n1: (3,16)\n2: (0,16)\n3: (1,16)\n").unwrap();
        let c = synth(&chain);
        for x in 0..4 {
            assert_eq!(verify_update(&chain, &c, x).unwrap(), 0.0);
        }
    }

    #[test]
    fn trace_reports_branch_growth() {
        let chain =
            MarkovChain::new(2, 4, 8, vec![vec![(0, 64), (1, 64), (2, 64), (3, 64)]; 4]).unwrap();
        let c = synth(&chain);
        let mut trace = Vec::new();
        simulate_update_traced(&c, 1, Some(&mut trace)).unwrap();
        assert_eq!(trace.len(), c.ops().len());
        let rotations: Vec<usize> = trace
            .iter()
            .filter(|l| l.kind == "CONTROLLED_ROTATION")
            .map(|l| l.branches)
            .collect();
        assert_eq!(rotations, vec![2, 3, 4]);
        assert!(format_trace(&trace).lines().count() == trace.len());
    }

    #[test]
    fn dirty_ancilla_is_detected() {
        let chain =
            MarkovChain::new(1, 2, 2, vec![vec![(0, 3), (1, 1)], vec![(0, 1), (1, 3)]]).unwrap();
        let mut c = synth(&chain);
        let mut ops = c.ops().to_vec();
        ops.pop();
        c = c.with_ops_unchecked(ops);
        assert!(matches!(
            simulate_update(&c, 0),
            Err(SimulationError::DirtyAncilla { .. })
        ));
    }

    #[test]
    fn out_of_range_input() {
        let chain = identity(2, 2, 4);
        assert!(matches!(
            simulate_update(&synth(&chain), 4),
            Err(SimulationError::StateOutOfRange { state: 4, size: 4 })
        ));
    }

    #[test]
    fn random_d8_row_within_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let chain = random_chain(&mut rng, 4, 8, 12);
        let c = synthesize_update(&chain, 22).unwrap();
        let bound = precision_bound(8, 12, 22);
        for r in verify_all(&chain, &c).unwrap() {
            assert!(r <= bound, "{r} > {bound}");
        }
        assert!(unitarity_check(&chain, &c).unwrap() <= 1e-10);
    }

    #[test]
    fn unitarity_rejects_large_or_foreign_chains() {
        let c = synth(&identity(7, 2, 4));
        assert!(matches!(
            unitarity_check(c.chain(), &c),
            Err(SimulationError::TooManyStates { states: 128, .. })
        ));
        assert!(matches!(
            unitarity_check(&identity(2, 2, 4), &synth(&identity(2, 2, 5))),
            Err(SimulationError::ChainMismatch)
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn branch_count_and_cleanliness(seed in any::<u64>(), m in 2u32..=5, r in 0u32..=3, t in 4u32..=12) {
            let d = 1u32 << r;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let chain = random_chain(&mut rng, m, d, t);
            let c = synth(&chain);
            let x = rng.gen_range(0..1u64 << m);
            let mut trace = Vec::new();
            let s = simulate_update_traced(&c, x, Some(&mut trace)).unwrap();
            prop_assert!(trace.iter().all(|l| l.branches <= d as usize));
            prop_assert!(trace.iter().all(|l| (l.norm - 1.0).abs() <= 1e-12));
            prop_assert_eq!(s.branches.len(), chain.row(x).unwrap().len());
            let bound = precision_bound(d, t, c.layout().n);
            prop_assert!(verify_update(&chain, &c, x).unwrap() <= bound.max(1e-15));
        }
    }
}
