//! Deterministic seed derivation.
//!
//! Every random draw in a run descends from a single root seed through
//! [`derive`] chains tagged with a stream constant plus loop indices. Child
//! seeds depend only on their path from the root, never on scheduling order,
//! so parallel and sequential executions draw identically.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags separating unrelated consumers of randomness.
pub mod stream {
    /// Per-task root.
    pub const TASK: u64 = 1;
    /// Per-step candidate sampling.
    pub const STEP: u64 = 2;
    /// Per-candidate draw inside one sampling call.
    pub const CANDIDATE: u64 = 3;
    /// Fallback selection after judge-retry exhaustion.
    pub const FALLBACK: u64 = 4;
    /// Presentation-order flip of one tournament pair.
    pub const PAIR_ORDER: u64 = 5;
    /// Per-branch rollout inside a segment block.
    pub const BRANCH: u64 = 6;
    /// Random branch pick when all final-block rewards are 0.
    pub const FINAL_PICK: u64 = 7;
    /// Easy-filter trial index.
    pub const TRIAL: u64 = 8;
    /// Collection pass index.
    pub const PASS: u64 = 9;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One derivation step: child = mix(parent ^ mix(tag)).
pub fn derive(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// Derive through a path of tags, left to right.
pub fn derive_path(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(seed, |s, &t| derive(s, t))
}

/// Stable 64-bit hash of a string (FNV-1a), for task-id keyed derivation.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Root seed for one task's rollout, keyed by id rather than list position.
pub fn for_task(root: u64, task_id: &str) -> u64 {
    derive_path(root, &[stream::TASK, hash_str(task_id)])
}

/// Seeded RNG for a derived seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_tag_sensitive() {
        assert_eq!(derive(7, 1), derive(7, 1));
        assert_ne!(derive(7, 1), derive(7, 2));
        assert_ne!(derive(7, 1), derive(8, 1));
        assert_eq!(derive_path(7, &[1, 2, 3]), derive(derive(derive(7, 1), 2), 3));
    }

    #[test]
    fn task_seeds_do_not_depend_on_ordering() {
        let a = for_task(0, "task-a");
        let b = for_task(0, "task-b");
        assert_ne!(a, b);
        assert_eq!(a, for_task(0, "task-a"));
    }
}
