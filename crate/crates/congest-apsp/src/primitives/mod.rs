//! Distributed building blocks: hop-bounded relaxation and pipelined
//! set broadcast. Both are delay-tolerant, so batches of them can share
//! the network through the scheduler without changing any output.

pub mod bellman_ford;
pub mod broadcast;

pub use bellman_ford::{
    default_bf_congestion, distributed_bellman_ford, virtual_source_potentials, BfBatchConfig,
    BfProgram, BfTables, Frontier, PotentialOutcome,
};
pub use broadcast::{pipelined_broadcast, BroadcastError, BroadcastOutcome};
