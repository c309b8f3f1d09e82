//! Pipelined set broadcast: every node ends holding the union of all
//! nodes' initial items.
//!
//! Each round every node broadcasts the smallest item it knows but has
//! not broadcast yet, ordered by (origin, sequence). Smallest-first makes
//! the pipeline non-blocking: with K items total and diameter D the run
//! quiesces within a small multiple of K + D rounds.
//!
//! Completeness needs bidirectional links and a connected graph: at
//! quiescence a node has broadcast everything it knows, so its neighbors
//! know at least as much, and induction closes the component. Both
//! preconditions are checked up front.

use crate::engine::{
    run_simulation, CommunicationMode, Ctx, Direction, Emission, EngineError, MessageKind,
    NodeProgram, ProtocolMessage, RunMetrics,
};
use crate::graph::{Graph, NodeId};
use std::collections::{BTreeMap, BTreeSet};

/// One node's state: everything it knows, minus what it already told its
/// neighbors.
struct BcastProgram {
    known: BTreeMap<(NodeId, u32), f64>,
    unsent: BTreeSet<(NodeId, u32)>,
}

impl BcastProgram {
    fn new(origin: NodeId, items: &[(u32, f64)], comm_degree: usize) -> BcastProgram {
        let known: BTreeMap<(NodeId, u32), f64> =
            items.iter().map(|&(seq, value)| ((origin, seq), value)).collect();
        assert_eq!(known.len(), items.len(), "node {origin} repeats a sequence number");
        // A node with no neighbors keeps its items local; the connectivity
        // check rules this out everywhere except the single-node graph.
        let unsent = if comm_degree == 0 { BTreeSet::new() } else { known.keys().copied().collect() };
        BcastProgram { known, unsent }
    }
}

impl NodeProgram for BcastProgram {
    fn on_receive(&mut self, msg: &ProtocolMessage, _from: NodeId, _ctx: &Ctx) {
        debug_assert_eq!(msg.kind, MessageKind::Bcast);
        let key = (msg.source, msg.iteration);
        if self.known.insert(key, msg.value).is_none() {
            self.unsent.insert(key);
        }
    }

    fn emit(&mut self, _ctx: &Ctx) -> Option<Emission> {
        let key = self.unsent.pop_first()?;
        Some(Emission::Broadcast(ProtocolMessage::item(key.0, key.1, self.known[&key])))
    }

    fn done(&self) -> bool {
        self.unsent.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BroadcastError {
    #[error("pipelined broadcast needs bidirectional communication")]
    NeedsBidirectional,
    #[error("graph is not connected; unreachable nodes: {0:?}")]
    Disconnected(Vec<NodeId>),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug)]
pub struct BroadcastOutcome {
    /// The union of all initial items, sorted by (origin, sequence); every
    /// node holds exactly this set at the end.
    pub items: Vec<(NodeId, u32, f64)>,
    pub metrics: RunMetrics,
}

/// Flood `initial[v]`'s items (sequence, value) from every node v until
/// all nodes hold the union.
pub fn pipelined_broadcast(
    g: &Graph,
    initial: &[Vec<(u32, f64)>],
    mode: CommunicationMode,
    round_limit: u64,
) -> Result<BroadcastOutcome, BroadcastError> {
    let n = g.n();
    assert_eq!(initial.len(), n);
    if mode.direction != Direction::Bidirectional {
        return Err(BroadcastError::NeedsBidirectional);
    }
    let unreachable = g.undirected_unreachable();
    if !unreachable.is_empty() {
        return Err(BroadcastError::Disconnected(unreachable));
    }
    let degrees = crate::engine::comm_degrees(g, mode.direction);
    let programs: Vec<BcastProgram> = (0..n as NodeId)
        .map(|v| BcastProgram::new(v, &initial[v as usize], degrees[v as usize]))
        .collect();
    let out = run_simulation(g, programs, mode, 0, round_limit)?;

    let first = &out.programs[0].known;
    for (v, p) in out.programs.iter().enumerate().skip(1) {
        assert_eq!(&p.known, first, "node {v} ended with a different item set");
    }
    Ok(BroadcastOutcome {
        items: first.iter().map(|(&(o, s), &val)| (o, s, val)).collect(),
        metrics: out.metrics,
    })
}
