//! Random reversible test chains with exact dyadic transition probabilities.
//!
//! Off-diagonal numerators are `w_xy · 2^{e_x}` for a symmetric positive
//! integer weight `w` and a per-state exponent `e_x ∈ {0, 1, 2}`. Then
//! `π_x ∝ 2^{−e_x}` satisfies detailed balance exactly, and the self-loop
//! absorbs the rest of each row.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::chain::{ChainError, MarkovChain};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RandomChainError {
    #[error("cannot build a chain with m = {m}, d = {d}, t = {t}{lazy}: {reason}", lazy = if *.lazy { " (lazy)" } else { "" })]
    Infeasible {
        m: u32,
        d: u32,
        t: u32,
        lazy: bool,
        reason: &'static str,
    },
    #[error(transparent)]
    Chain(#[from] ChainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomChainSpec {
    pub m: u32,
    pub d: u32,
    pub t: u32,
    /// Every self-loop carries probability at least 1/2, so `P` has a
    /// non-negative spectrum.
    pub lazy: bool,
}

/// Generates a reversible chain.
///
/// For `d ≥ 4` the chain is ergodic: a random Hamiltonian path plus random
/// extra edges, with a self-loop on every state. For `d = 2` it is a
/// birth–death path with self-loops at the two ends. For `d = 1` it is a
/// random involution, which is reversible but not ergodic.
pub fn random_reversible_chain<R: Rng + ?Sized>(
    spec: RandomChainSpec,
    rng: &mut R,
) -> Result<MarkovChain, RandomChainError> {
    let RandomChainSpec { m, d, t, lazy } = spec;
    let infeasible = |reason| RandomChainError::Infeasible {
        m,
        d,
        t,
        lazy,
        reason,
    };
    if m == 0 || t == 0 || !d.is_power_of_two() {
        return Err(infeasible("need m ≥ 1, t ≥ 1 and d a power of two"));
    }
    let n = 1usize << m;
    let rows = match d {
        1 if lazy => return Err(infeasible("a permutation chain has no self-loop mass")),
        1 => involution(n, 1 << t, rng),
        2 if lazy && n > 2 => {
            return Err(infeasible("interior path states have no self-loop slot"))
        }
        2 => birth_death(n, t, lazy, rng),
        _ => sparse_graph(n, d, t, lazy, rng)
            .ok_or_else(|| infeasible("t is too small for the degree"))?,
    };
    Ok(MarkovChain::new(m, d, t, rows)?)
}

fn involution<R: Rng + ?Sized>(n: usize, one: u64, rng: &mut R) -> Vec<Vec<(u64, u64)>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut partner: Vec<usize> = (0..n).collect();
    for pair in order.chunks(2) {
        if let [a, b] = *pair {
            if rng.gen_bool(0.5) {
                partner[a] = b;
                partner[b] = a;
            }
        }
    }
    partner.into_iter().map(|y| vec![(y as u64, one)]).collect()
}

fn birth_death<R: Rng + ?Sized>(n: usize, t: u32, lazy: bool, rng: &mut R) -> Vec<Vec<(u64, u64)>> {
    let one = 1u64 << t;
    let cap = if lazy { one / 2 } else { one - 1 };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut rows: Vec<Vec<(u64, u64)>> = vec![Vec::new(); n];
    // Numerator for the path edge (order[k], order[k+1]) as seen from each end.
    let link = |rows: &mut Vec<Vec<(u64, u64)>>, a: usize, b: usize, w: u64, ea: u32, eb: u32| {
        rows[a].push((b as u64, w << ea));
        rows[b].push((a as u64, w << eb));
    };

    let exponents_for = |w: u64, limit: u64| (0..=2u32).filter(move |e| w << e <= limit);
    let first_e: u32 = rng.gen_range(0..=1);
    let mut w = rng.gen_range(1..=cap >> first_e);
    let mut e_prev = first_e;
    for k in 0..n - 1 {
        let (a, b) = (order[k], order[k + 1]);
        let e_b = if k + 1 == n - 1 {
            let options: Vec<u32> = exponents_for(w, cap).collect();
            *options.choose(rng).expect("e = 0 is always feasible")
        } else {
            // Interior: the two path edges must fill the row exactly.
            let options: Vec<u32> = (0..=1).filter(|e| one >> e > w).collect();
            *options.choose(rng).expect("e = 0 is always feasible")
        };
        link(&mut rows, a, b, w, e_prev, e_b);
        if k + 1 < n - 1 {
            w = (one >> e_b) - w;
        }
        e_prev = e_b;
    }
    finish_rows(rows, one)
}

fn sparse_graph<R: Rng + ?Sized>(
    n: usize,
    d: u32,
    t: u32,
    lazy: bool,
    rng: &mut R,
) -> Option<Vec<Vec<(u64, u64)>>> {
    let one = 1u64 << t;
    let cap = if lazy { one / 2 } else { one - 1 };
    let max_degree = (d as usize - 1).min(n - 1);
    if max_degree as u64 > cap {
        return None;
    }
    let exponent: Vec<u32> = (0..n)
        .map(|_| {
            let feasible = (0..=2u32)
                .filter(|e| (max_degree as u64) << e <= cap)
                .count() as u32;
            rng.gen_range(0..feasible)
        })
        .collect();

    let mut adjacent = vec![vec![false; n]; n];
    let mut degree = vec![0usize; n];
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut add = |a: usize, b: usize, adjacent: &mut Vec<Vec<bool>>, degree: &mut Vec<usize>| {
        adjacent[a][b] = true;
        adjacent[b][a] = true;
        degree[a] += 1;
        degree[b] += 1;
        edges.push((a, b));
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for pair in order.windows(2) {
        add(pair[0], pair[1], &mut adjacent, &mut degree);
    }
    let attempts = n * max_degree;
    for _ in 0..attempts {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b && !adjacent[a][b] && degree[a] < max_degree && degree[b] < max_degree {
            add(a, b, &mut adjacent, &mut degree);
        }
    }

    // Each endpoint caps the shared weight so its own row cannot overflow.
    let weight_cap = |x: usize| cap / ((max_degree as u64) << exponent[x]);
    let mut rows: Vec<Vec<(u64, u64)>> = vec![Vec::new(); n];
    for (a, b) in edges {
        let w = rng.gen_range(1..=weight_cap(a).min(weight_cap(b)));
        rows[a].push((b as u64, w << exponent[a]));
        rows[b].push((a as u64, w << exponent[b]));
    }
    Some(finish_rows(rows, one))
}

/// Adds the self-loop that completes each row to `one` and sorts by target.
fn finish_rows(mut rows: Vec<Vec<(u64, u64)>>, one: u64) -> Vec<Vec<(u64, u64)>> {
    for (x, row) in rows.iter_mut().enumerate() {
        let used: u64 = row.iter().map(|e| e.1).sum();
        if used < one {
            row.push((x as u64, one - used));
        }
        row.sort_unstable();
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{detailed_balance_violation, spectral_gap};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Stationary distribution from detailed balance alone: `π_y = π_x p_xy / p_yx`
    /// propagated outward from state 0 along listed edges.
    fn balance_stationary(chain: &MarkovChain) -> Vec<f64> {
        let n = chain.num_states();
        let mut pi = vec![0.0; n];
        pi[0] = 1.0;
        let mut queue = std::collections::VecDeque::from([0u64]);
        while let Some(x) = queue.pop_front() {
            for tr in chain.row(x).unwrap() {
                let y = tr.target as usize;
                if pi[y] == 0.0 {
                    pi[y] = pi[x as usize] * chain.probability(x, tr.target)
                        / chain.probability(tr.target, x);
                    queue.push_back(tr.target);
                }
            }
        }
        let total: f64 = pi.iter().sum();
        pi.iter().map(|p| p / total).collect()
    }

    fn generate(seed: u64, m: u32, d: u32, t: u32, lazy: bool) -> MarkovChain {
        random_reversible_chain(
            RandomChainSpec { m, d, t, lazy },
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    }

    #[test]
    fn seeded_output_is_deterministic() {
        assert_eq!(generate(3, 4, 4, 8, false), generate(3, 4, 4, 8, false));
        assert_ne!(generate(3, 4, 4, 8, false), generate(4, 4, 4, 8, false));
    }

    #[test]
    fn involution_is_symmetric() {
        let c = generate(11, 4, 1, 6, false);
        for (x, row) in c.rows() {
            assert_eq!(row.len(), 1);
            let y = row[0].target;
            assert_eq!(c.row(y).unwrap()[0].target, x);
        }
    }

    #[test]
    fn infeasible_requests() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut try_spec =
            |m, d, t, lazy| random_reversible_chain(RandomChainSpec { m, d, t, lazy }, &mut rng);
        assert!(try_spec(3, 1, 4, true).is_err());
        assert!(try_spec(3, 2, 4, true).is_err());
        assert!(try_spec(1, 2, 4, true).is_ok());
        assert!(try_spec(4, 16, 4, true).is_err());
        assert!(try_spec(3, 3, 8, false).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn generated_chains_are_reversible_and_ergodic(
            seed in any::<u64>(), m in 1u32..=5, r in 1u32..=3, t in 6u32..=16, lazy in any::<bool>(),
        ) {
            let d = 1 << r;
            let lazy = lazy && (d > 2 || m == 1);
            let c = generate(seed, m, d, t, lazy);
            let pi = balance_stationary(&c);
            prop_assert!(pi.iter().all(|p| *p > 0.0));
            prop_assert!(detailed_balance_violation(&c, &pi) <= 1e-12);
            let spectrum = spectral_gap(&c).unwrap();
            for (a, b) in pi.iter().zip(&spectrum.stationary) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
            prop_assert!(spectrum.gap > 1e-9, "not ergodic: {:?}", spectrum.eigenvalues);
            if lazy {
                prop_assert!(spectrum.eigenvalues.iter().all(|l| *l >= -1e-12));
                for (x, _) in c.rows() {
                    prop_assert!(c.probability(x, x) >= 0.5);
                }
            }
        }
    }
}
