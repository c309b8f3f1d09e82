//! Round-based simulator for synchronous message-passing graph algorithms
//! (CONGEST model: one O(log n)-bit message per edge per round) together with
//! a randomized exact weighted all-pairs shortest-path protocol built from
//! three pieces:
//!
//! * hop-bounded distributed Bellman-Ford relaxation,
//! * a value-filtered broadcast primitive that disseminates per-source
//!   distance offers through a sampled hierarchy of "between" nodes while
//!   keeping per-node traffic polylogarithmic,
//! * a random-delay scheduler that multiplexes many protocol instances over
//!   the same graph without violating the per-round bandwidth budget.
//!
//! Everything is seed-deterministic: the same root seed reproduces the same
//! sampled sets, the same message transcript, and the same metrics.

pub mod apsp;
pub mod cli;
pub mod engine;
pub mod filtered_broadcast;
pub mod graph;
pub mod primitives;
pub mod report;
pub mod rng;
pub mod scheduler;
pub mod tuning;

pub use graph::{Graph, NodeId, Weight, INF};

/// Smallest k with 2^k >= n (0 for n <= 1).
pub fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}
