//! Inputs shared by the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BLOCKSWORLD: &str = include_str!("../../core/tests/fixtures/pddl/blocksworld.pddl");
pub const CHILD_SNACK: &str = include_str!("../../core/tests/fixtures/pddl/child_snack_generated.pddl");

/// `n` pairs of strings over `alphabet` with lengths in `0..=max_len`.
pub fn random_pairs(n: usize, max_len: usize, alphabet: &[u8], seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let word = |rng: &mut ChaCha8Rng| -> String {
        let len = rng.random_range(0..=max_len);
        (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())] as char).collect()
    };
    (0..n).map(|_| (word(&mut rng), word(&mut rng))).collect()
}
