use proptest::prelude::*;
use qwalk::branchsim;
use qwalk::chain::{self, load_chain};
use qwalk::circuit::{self, default_angle_bits, precision_bound, DEFAULT_ANGLE_BITS_EXTRA};
use qwalk::randchain::{random_reversible_chain, RandomChainSpec};
use qwalk::szegedy::{self, ColumnSource};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn chain_for(seed: u64, m: u32, d: u32, t: u32, lazy: bool) -> chain::MarkovChain {
    random_reversible_chain(
        RandomChainSpec { m, d, t, lazy },
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap()
}

#[test]
fn serialized_chain_round_trips_through_synthesis() {
    let c = chain_for(1, 4, 8, 12, false);
    let from_text = load_chain(&c.to_text()).unwrap();
    let from_json = load_chain(&c.to_json()).unwrap();
    assert_eq!(from_text, c);
    assert_eq!(from_json, c);
    let n = default_angle_bits(12, DEFAULT_ANGLE_BITS_EXTRA);
    let a = circuit::synthesize_update(&c, n).unwrap();
    let b = circuit::synthesize_update(&from_json, n).unwrap();
    for x in [0, 5, 15] {
        assert_eq!(a.to_text(Some(x)).unwrap(), b.to_text(Some(x)).unwrap());
    }
}

#[test]
fn more_angle_bits_shrink_the_residual() {
    let c = chain_for(2, 3, 4, 12, false);
    let worst = |n| {
        let u = circuit::synthesize_update(&c, n).unwrap();
        branchsim::verify_all(&c, &u)
            .unwrap()
            .into_iter()
            .fold(0.0, f64::max)
    };
    let coarse = worst(18);
    let fine = worst(40);
    assert!(fine < coarse, "{fine} !< {coarse}");
    // At 40 bits the angle error sits below double-precision noise of the products.
    assert!(fine <= 1e-11);
}

#[test]
fn raising_precision_keeps_the_chain() {
    let c = chain_for(3, 3, 4, 8, false);
    let hi = c.with_precision(20).unwrap();
    assert_eq!(hi.dense_matrix(), c.dense_matrix());
    let gap_lo = chain::spectral_gap(&c).unwrap().gap;
    let gap_hi = chain::spectral_gap(&hi).unwrap().gap;
    assert!((gap_lo - gap_hi).abs() <= 1e-12);
}

#[test]
fn circuit_and_ideal_walks_agree_within_precision() {
    let c = chain_for(4, 3, 4, 16, true);
    let u =
        circuit::synthesize_update(&c, default_angle_bits(16, DEFAULT_ANGLE_BITS_EXTRA)).unwrap();
    let ideal = szegedy::spectrum_report(&c, ColumnSource::Ideal).unwrap();
    let circ = szegedy::spectrum_report(&c, ColumnSource::Circuit(&u)).unwrap();
    assert!(ideal.pass && circ.pass, "{ideal:#?}\n{circ:#?}");
    let eps = precision_bound(4, 16, u.layout().n);
    assert!((ideal.phase_gap.unwrap() - circ.phase_gap.unwrap()).abs() <= 10.0 * eps);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Lazy reversible chains: the walk's phase gap is at least the square root
    /// of the classical gap, and ψ_π is fixed.
    #[test]
    fn quadratic_relation(seed in any::<u64>(), m in 1u32..=3, r in 2u32..=3, t in 6u32..=12) {
        let c = chain_for(seed, m, 1 << r, t, true);
        let report = szegedy::spectrum_report(&c, ColumnSource::Ideal).unwrap();
        prop_assert!(report.pass, "{:?}", report);
        prop_assert!(report.phase_gap.unwrap() >= report.sqrt_delta - 1e-9);
        // Phases come in ± pairs.
        let mut neg: Vec<f64> = report.eigenphases.iter().map(|p| -p).collect();
        neg.sort_by(f64::total_cmp);
        for (a, b) in neg.iter().zip(&report.eigenphases) {
            prop_assert!((a - b).abs() <= 1e-7 || (a.abs() - std::f64::consts::PI).abs() <= 1e-7);
        }
    }

    /// Every x of a random chain: clean ancillas, residual within bound.
    #[test]
    fn end_to_end_update(seed in any::<u64>(), m in 2u32..=5, r in 0u32..=4, t in 6u32..=16) {
        let d = 1u32 << r;
        let c = chain_for(seed, m, d, t, false);
        let u = circuit::synthesize_update(&c, default_angle_bits(t, DEFAULT_ANGLE_BITS_EXTRA)).unwrap();
        let bound = precision_bound(d, t, u.layout().n);
        for residual in branchsim::verify_all(&c, &u).unwrap() {
            prop_assert!(residual <= bound);
        }
        prop_assert!(branchsim::unitarity_check(&c, &u).unwrap() <= 1e-10);
    }
}
