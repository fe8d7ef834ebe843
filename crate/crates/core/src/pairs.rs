//! Canonical microphone-pair ordering.
//!
//! Pairs `(i, j)` with `i < j` are enumerated lexicographically, so for four
//! microphones the order is `(0,1) (0,2) (0,3) (1,2) (1,3) (2,3)`. Every
//! per-pair vector in the crate (delays, correlations, peak sets) uses it.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MicPair {
    pub i: usize,
    pub j: usize,
}

impl MicPair {
    pub fn new(i: usize, j: usize) -> Self {
        debug_assert!(i < j, "pairs are stored with i < j");
        Self { i, j }
    }
}

impl std::fmt::Display for MicPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.i, self.j)
    }
}

/// Number of pairs for `n` microphones, `n(n-1)/2`.
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// All pairs for `n` microphones in canonical order.
pub fn canonical_pairs(n: usize) -> Vec<MicPair> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| MicPair::new(i, j)))
        .collect()
}

/// Position of `(i, j)` in the canonical order. Requires `i < j < n`.
pub fn pair_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i < j && j < n);
    // pairs before row i: sum_{r<i} (n-1-r)
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

/// Number of microphones that produce `d` pairs, if `d` is triangular.
pub fn mics_for_pairs(d: usize) -> Option<usize> {
    (2..=d + 1).find(|&n| pair_count(n) == d)
}
