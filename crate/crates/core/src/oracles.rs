//! Classical neighbor (`N`) and transition-probability (`T`) oracles.
//!
//! Both return fixed-length rows of `d` slots in ascending neighbor order.
//! Slots past the actual degree hold neighbor 0, numerator 0 and a cleared
//! presence flag.

use serde::Serialize;
use thiserror::Error;

use crate::chain::MarkovChain;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("state {state} is outside the state space of size {size}")]
    StateOutOfRange { state: u64, size: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NeighborRow {
    pub x: u64,
    pub neighbors: Vec<u64>,
    pub numerators: Vec<u64>,
    pub flags: Vec<bool>,
}

impl NeighborRow {
    /// Presence flags packed little-endian: bit `i` is slot `i`.
    pub fn flag_mask(&self) -> u64 {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .fold(0, |acc, (i, _)| acc | (1 << i))
    }

    pub fn degree(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }
}

pub fn neighbor_oracle(chain: &MarkovChain, x: u64) -> Result<NeighborRow, OracleError> {
    let row = chain.row(x).ok_or(OracleError::StateOutOfRange {
        state: x,
        size: chain.num_states() as u64,
    })?;
    let d = chain.d() as usize;
    let mut out = NeighborRow {
        x,
        neighbors: vec![0; d],
        numerators: vec![0; d],
        flags: vec![false; d],
    };
    // Chain rows are stored sorted by target, which fixes the slot order.
    for (slot, tr) in row.iter().enumerate() {
        out.neighbors[slot] = tr.target;
        out.numerators[slot] = tr.numerator;
        out.flags[slot] = true;
    }
    Ok(out)
}

pub fn probability_oracle(chain: &MarkovChain, x: u64) -> Result<Vec<u64>, OracleError> {
    neighbor_oracle(chain, x).map(|row| row.numerators)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::load_chain;

    #[test]
    fn padded_row() {
        let c = MarkovChain::new(
            3,
            4,
            2,
            (0..8)
                .map(|x| {
                    if x == 1 {
                        vec![(5, 1), (2, 3)]
                    } else {
                        vec![(x, 4)]
                    }
                })
                .collect(),
        )
        .unwrap();
        let row = neighbor_oracle(&c, 1).unwrap();
        assert_eq!(row.neighbors, vec![2, 5, 0, 0]);
        assert_eq!(row.flags, vec![true, true, false, false]);
        assert_eq!(row.flag_mask(), 0b0011);
        assert_eq!(probability_oracle(&c, 1).unwrap(), vec![3, 1, 0, 0]);
    }

    #[test]
    fn identity_chain_row() {
        let c = load_chain("m=1 d=2 t=1\n0: (0,2)\n1: (1,2)\n").unwrap();
        let row = neighbor_oracle(&c, 1).unwrap();
        assert_eq!(row.neighbors, vec![1, 0]);
        assert_eq!(row.flags, vec![true, false]);
    }

    #[test]
    fn complete_uniform_row() {
        let c = MarkovChain::new(2, 4, 4, vec![vec![(0, 4), (1, 4), (2, 4), (3, 4)]; 4]).unwrap();
        let row = neighbor_oracle(&c, 3).unwrap();
        assert_eq!(row.neighbors, vec![0, 1, 2, 3]);
        assert!(row.flags.iter().all(|f| *f));
        assert_eq!(row.numerators, vec![4, 4, 4, 4]);
    }

    #[test]
    fn dyadic_read_off() {
        let c = MarkovChain::new(2, 4, 4, vec![vec![(0, 8), (1, 4), (2, 2), (3, 2)]; 4]).unwrap();
        assert_eq!(probability_oracle(&c, 0).unwrap(), vec![8, 4, 2, 2]);
    }

    #[test]
    fn out_of_range_state() {
        let c = load_chain("m=1 d=2 t=1\n0: (0,2)\n1: (1,2)\n").unwrap();
        assert_eq!(
            neighbor_oracle(&c, 2),
            Err(OracleError::StateOutOfRange { state: 2, size: 2 })
        );
        assert!(probability_oracle(&c, 7).is_err());
    }

    #[test]
    fn rows_reconstruct_the_chain() {
        let c = load_chain(
            "m=2 d=4 t=3\n0: (3,1) (0,7)\n1: (1,8)\n2: (0,2) (1,2) (2,2) (3,2)\n3: (3,8)\n",
        )
        .unwrap();
        for (x, row) in c.rows() {
            let a = neighbor_oracle(&c, x).unwrap();
            assert_eq!(a, neighbor_oracle(&c, x).unwrap());
            let listed: Vec<(u64, u64)> = (0..a.neighbors.len())
                .filter(|&i| a.flags[i])
                .map(|i| (a.neighbors[i], a.numerators[i]))
                .collect();
            let expected: Vec<(u64, u64)> = row.iter().map(|t| (t.target, t.numerator)).collect();
            assert_eq!(listed, expected);
            assert_eq!(a.numerators.iter().sum::<u64>(), c.one());
            for i in 0..a.flags.len() {
                assert_eq!(a.flags[i], a.numerators[i] > 0);
            }
        }
    }
}
