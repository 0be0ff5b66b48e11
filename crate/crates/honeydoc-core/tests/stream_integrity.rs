//! Stream-integrity sweep: randomized ISN triples (attacker, frontend,
//! backend), including values right at the 32-bit wrap, for both migration
//! mechanisms and dialogues of up to 10 turns.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use honeydoc_core::experiments::check_isn_triple;
use honeydoc_core::orchestrator::Mechanism;

/// Values within 50 of the 32-bit wrap, on both sides.
fn boundary_values() -> Vec<u32> {
    let mut v = Vec::new();
    for d in [0u32, 1, 2, 25, 49, 50] {
        v.push(u32::MAX - d);
        v.push(d);
    }
    v
}

/// The triple list shared with the acceptance gate: boundary combinations
/// first, then uniform random fills up to `n`.
pub fn sweep_cases(n: usize, seed: u64) -> Vec<(u32, u32, u32)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<(u32, u32, u32)> = Vec::new();
    let boundary = boundary_values();
    for (i, &v) in boundary.iter().enumerate() {
        let other = boundary[(i + 5) % boundary.len()];
        cases.push((v, other, rng.next_u32()));
        cases.push((rng.next_u32(), v, other));
        cases.push((other, rng.next_u32(), v));
    }
    while cases.len() < n {
        cases.push((rng.next_u32(), rng.next_u32(), rng.next_u32()));
    }
    cases
}

#[test]
fn randomized_isn_triples_preserve_the_byte_streams() {
    for (i, (a, f, b)) in sweep_cases(1_000, 0x73747265616d).into_iter().enumerate() {
        let mechanism = if i % 2 == 0 { Mechanism::M1 } else { Mechanism::M2 };
        let turns = i % 10 + 1;
        check_isn_triple(mechanism, a, f, b, turns, i as u64).unwrap();
    }
}

#[test]
fn equal_isns_give_zero_diffs_and_still_work() {
    for mechanism in [Mechanism::M1, Mechanism::M2] {
        check_isn_triple(mechanism, 7_000, 12_345, 12_345, 4, 99).unwrap();
    }
}
