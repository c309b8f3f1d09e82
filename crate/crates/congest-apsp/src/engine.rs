//! The round-based network simulator.
//!
//! One round = deliver everything emitted in the previous round, then let
//! every node emit at most one message (broadcast discipline) or at most one
//! message per incident arc (unicast discipline). Nodes run arbitrary
//! [`NodeProgram`]s and may only touch their own state; global facts
//! (quiescence, iteration advancement for multi-phase protocols) are the
//! business of an omniscient [`Supervisor`] that watches the run from
//! outside and injects control events, which cost no bandwidth.
//!
//! Everything here is deterministic: node order, delivery order, and target
//! expansion are fixed, so identical inputs give byte-identical transcripts.

use crate::graph::{Graph, NodeId};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Wire label reserved for the virtual source used by potential
/// computations; never a real node id.
pub const VIRTUAL_SOURCE: NodeId = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    /// Distance relaxation carrying (source, estimate, hop count).
    BfRelax,
    /// Filtered-broadcast offer carrying (source, between node, estimate).
    FbOffer,
    /// Pipelined dissemination item carrying (origin, sequence, value).
    Bcast,
    /// Verification traffic: streamed table entries and violation reports.
    Verify,
}

impl MessageKind {
    pub fn wire_name(self) -> &'static str {
        match self {
            MessageKind::BfRelax => "BF_RELAX",
            MessageKind::FbOffer => "FB_OFFER",
            MessageKind::Bcast => "BCAST",
            MessageKind::Verify => "VERIFY",
        }
    }
}

/// One O(log n)-bit message. All protocols share the same frame; fields a
/// protocol does not use stay zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolMessage {
    pub kind: MessageKind,
    pub source: NodeId,
    pub between: NodeId,
    pub value: f64,
    pub hops: u32,
    pub instance: u32,
    pub iteration: u32,
}

impl ProtocolMessage {
    pub fn relax(source: NodeId, value: f64, hops: u32, instance: u32) -> ProtocolMessage {
        ProtocolMessage {
            kind: MessageKind::BfRelax,
            source,
            between: 0,
            value,
            hops,
            instance,
            iteration: 0,
        }
    }

    pub fn offer(
        source: NodeId,
        between: NodeId,
        value: f64,
        instance: u32,
        iteration: u32,
    ) -> ProtocolMessage {
        ProtocolMessage { kind: MessageKind::FbOffer, source, between, value, hops: 0, instance, iteration }
    }

    pub fn item(origin: NodeId, seq: u32, value: f64) -> ProtocolMessage {
        ProtocolMessage {
            kind: MessageKind::Bcast,
            source: origin,
            between: 0,
            value,
            hops: 0,
            instance: 0,
            iteration: seq,
        }
    }

    pub fn verify(label: NodeId, value: f64, instance: u32) -> ProtocolMessage {
        ProtocolMessage {
            kind: MessageKind::Verify,
            source: label,
            between: 0,
            value,
            hops: 0,
            instance,
            iteration: 0,
        }
    }
}

/// Which way messages may travel relative to arc orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Along arc direction only.
    Unidirectional,
    /// Both ways across every edge.
    Bidirectional,
}

/// Per-round bandwidth shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discipline {
    /// One message per node per round, delivered to every comm-neighbor.
    Broadcast,
    /// At most one message per directed comm-arc per round.
    Unicast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommunicationMode {
    pub direction: Direction,
    pub discipline: Discipline,
}

impl CommunicationMode {
    pub const BROADCAST_BIDI: CommunicationMode =
        CommunicationMode { direction: Direction::Bidirectional, discipline: Discipline::Broadcast };
    pub const BROADCAST_UNI: CommunicationMode =
        CommunicationMode { direction: Direction::Unidirectional, discipline: Discipline::Broadcast };
}

/// What a node hands to the network in one round.
#[derive(Debug, Clone)]
pub enum Emission {
    /// The same message to every comm-neighbor. Legal in both disciplines.
    Broadcast(ProtocolMessage),
    /// Distinct messages to chosen neighbors; unicast discipline only, at
    /// most one per target.
    Unicast(Vec<(NodeId, ProtocolMessage)>),
}

/// Read-only facts a program may consult: its own id, the node count, and
/// the current round number (round numbers are common knowledge in a
/// synchronous network).
#[derive(Debug, Clone, Copy)]
pub struct Ctx {
    pub node: NodeId,
    pub n: usize,
    pub round: u64,
}

/// Simulator-level event injected by a supervisor; models synchronization
/// facts that the analysis treats as globally known, so it costs no
/// bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlEvent {
    pub instance: u32,
    pub kind: ControlKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlKind {
    /// The named instance starts iteration j next round.
    BeginIteration(u32),
    /// The named instance performs its final check round next round.
    Probe,
    /// The named instance is finished and must go quiet.
    Finish,
}

/// Behavior of one node. Handlers run in a fixed order each round:
/// `on_round_start`, then `on_receive` for every delivered message, then
/// `on_deliveries_done` once the round's arrivals are complete, then
/// `emit`, then any `on_control` events issued by the supervisor.
pub trait NodeProgram {
    fn on_round_start(&mut self, _ctx: &Ctx) {}
    fn on_receive(&mut self, msg: &ProtocolMessage, from: NodeId, ctx: &Ctx);
    /// Runs after the last delivery of the round, before emission. Programs
    /// that resolve each round's arrivals as one batch (tie rules, frontier
    /// merges) do it here so `emit` and `done` see settled state.
    fn on_deliveries_done(&mut self, _ctx: &Ctx) {}
    fn on_control(&mut self, _ev: &ControlEvent, _ctx: &Ctx) {}
    fn emit(&mut self, ctx: &Ctx) -> Option<Emission>;
    /// True once this node will neither emit nor need future deliveries.
    fn done(&self) -> bool;
}

/// A message emitted this round and awaiting delivery next round.
#[derive(Debug, Clone)]
pub struct PendingEmission {
    pub from: NodeId,
    pub msg: ProtocolMessage,
    /// `None` = broadcast to all comm-neighbors.
    pub unicast_to: Option<NodeId>,
}

/// End-of-round view handed to the supervisor: the messages still in
/// flight. An empty slice plus empty node queues means global quiescence.
pub struct RoundView<'a> {
    pub round: u64,
    pub pending: &'a [PendingEmission],
}

/// Where a control event is delivered.
#[derive(Debug, Clone, Copy)]
pub enum Target {
    All,
    Node(NodeId),
}

#[derive(Debug, Clone, Copy)]
pub struct Directive {
    pub target: Target,
    pub event: ControlEvent,
}

/// Omniscient observer. Runs after each round with mutable access to every
/// program (for reading per-node queues and draining bookkeeping); returns
/// control events the engine delivers before the next round.
pub trait Supervisor<P: NodeProgram> {
    fn after_round(&mut self, view: &RoundView<'_>, programs: &mut [P]) -> Vec<Directive>;
}

/// Supervisor that never intervenes.
pub struct NoSupervisor;

impl<P: NodeProgram> Supervisor<P> for NoSupervisor {
    fn after_round(&mut self, _view: &RoundView<'_>, _programs: &mut [P]) -> Vec<Directive> {
        Vec::new()
    }
}

/// Aggregated run counters. `messages_total` counts emissions
/// (broadcast = one message); `per_edge_load` counts traversals per
/// directed comm-arc, so one broadcast to k neighbors adds k arc
/// traversals but one emission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunMetrics {
    pub rounds: u64,
    pub messages_total: u64,
    pub per_node_sent: Vec<u64>,
    pub per_edge_load: BTreeMap<(NodeId, NodeId), u64>,
    /// Deepest pending-emission queue any node reached (filled in by the
    /// scheduler; solo runs have no queues).
    pub max_queue_depth: usize,
}

impl RunMetrics {
    pub fn empty(n: usize) -> RunMetrics {
        RunMetrics {
            rounds: 0,
            messages_total: 0,
            per_node_sent: vec![0; n],
            per_edge_load: BTreeMap::new(),
            max_queue_depth: 0,
        }
    }

    /// Fold `count` additional traversals of `edge` into the load map.
    /// Pure accumulation: counters only grow.
    pub fn record_congestion(&mut self, edge: (NodeId, NodeId), count: u64) {
        *self.per_edge_load.entry(edge).or_insert(0) += count;
    }

    pub fn max_edge_load(&self) -> u64 {
        self.per_edge_load.values().copied().max().unwrap_or(0)
    }

    pub fn max_node_sent(&self) -> u64 {
        self.per_node_sent.iter().copied().max().unwrap_or(0)
    }

    /// Merge counters of a sequentially later run into this one; rounds
    /// add, queue depths take the max.
    pub fn absorb(&mut self, other: &RunMetrics) {
        self.rounds += other.rounds;
        self.messages_total += other.messages_total;
        for (v, c) in other.per_node_sent.iter().enumerate() {
            self.per_node_sent[v] += c;
        }
        for (&e, &c) in &other.per_edge_load {
            self.record_congestion(e, c);
        }
        self.max_queue_depth = self.max_queue_depth.max(other.max_queue_depth);
    }
}

/// One delivery, as written to the transcript. `round` is the round whose
/// delivery phase processed the message (one after its emission round).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranscriptRecord {
    pub round: u64,
    pub from: NodeId,
    pub to: NodeId,
    pub msg: ProtocolMessage,
}

#[derive(Debug, Clone, Default)]
pub struct Transcript {
    pub records: Vec<TranscriptRecord>,
}

impl Transcript {
    /// CSV with one row per delivery:
    /// `round,from,to,kind,source,between,value,instance,iteration`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("round,from,to,kind,source,between,value,instance,iteration\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.round,
                r.from,
                r.to,
                r.msg.kind.wire_name(),
                r.msg.source,
                r.msg.between,
                r.msg.value,
                r.msg.instance,
                r.msg.iteration
            );
        }
        s
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("round limit {limit} exceeded; nodes still busy: {busy:?}")]
    RoundLimitExceeded { limit: u64, busy: Vec<NodeId>, metrics: RunMetrics },
    #[error("node {node} violated the message discipline in round {round}: {detail}")]
    DisciplineViolation { node: NodeId, round: u64, detail: String },
}

/// Default round budget: generous polylog headroom over the expected
/// near-linear round counts, as a runaway-protocol guard.
pub fn default_round_limit(n: usize) -> u64 {
    let lg = crate::ceil_log2(n).max(1) as u64;
    64 * n as u64 * lg.pow(4)
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub mode: CommunicationMode,
    pub seed: u64,
    pub round_limit: u64,
    pub record_transcript: bool,
}

impl RunOptions {
    pub fn new(mode: CommunicationMode, seed: u64, n: usize) -> RunOptions {
        RunOptions { mode, seed, round_limit: default_round_limit(n), record_transcript: false }
    }
}

pub struct RunOutcome<P> {
    pub programs: Vec<P>,
    pub metrics: RunMetrics,
    pub transcript: Option<Transcript>,
}

impl<P> std::fmt::Debug for RunOutcome<P> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunOutcome").field("metrics", &self.metrics).finish_non_exhaustive()
    }
}

/// Comm-graph adjacency under a direction mode, with dense arc indices for
/// cheap load accounting.
struct CommGraph {
    /// Per node: sorted comm-neighbors with their arc index.
    targets: Vec<Vec<(NodeId, u32)>>,
    arcs: Vec<(NodeId, NodeId)>,
}

impl CommGraph {
    fn build(g: &Graph, direction: Direction) -> CommGraph {
        let n = g.n();
        let mut targets: Vec<Vec<(NodeId, u32)>> = vec![Vec::new(); n];
        let mut arcs = Vec::new();
        for v in 0..n as NodeId {
            let mut heads: Vec<NodeId> = g.out_arcs(v).iter().map(|&(u, _)| u).collect();
            if direction == Direction::Bidirectional {
                heads.extend(g.in_arcs(v).iter().map(|&(u, _)| u));
                heads.sort_unstable();
                heads.dedup();
            }
            for u in heads {
                let idx = arcs.len() as u32;
                arcs.push((v, u));
                targets[v as usize].push((u, idx));
            }
        }
        CommGraph { targets, arcs }
    }
}

pub fn run_simulation<P: NodeProgram>(
    g: &Graph,
    programs: Vec<P>,
    mode: CommunicationMode,
    seed: u64,
    round_limit: u64,
) -> Result<RunOutcome<P>, EngineError> {
    let mut opts = RunOptions::new(mode, seed, g.n());
    opts.round_limit = round_limit;
    run_simulation_with(g, programs, &opts, &mut NoSupervisor)
}

pub fn run_simulation_with<P: NodeProgram, S: Supervisor<P>>(
    g: &Graph,
    mut programs: Vec<P>,
    opts: &RunOptions,
    supervisor: &mut S,
) -> Result<RunOutcome<P>, EngineError> {
    let n = g.n();
    assert_eq!(programs.len(), n, "one program per node");
    let comm = CommGraph::build(g, opts.mode.direction);

    let mut metrics = RunMetrics::empty(n);
    let mut edge_load: Vec<u64> = vec![0; comm.arcs.len()];
    let mut transcript = opts.record_transcript.then(Transcript::default);

    let mut in_transit: Vec<PendingEmission> = Vec::new();
    let mut round: u64 = 0;

    loop {
        if in_transit.is_empty() && programs.iter().all(|p| p.done()) {
            break;
        }
        if round >= opts.round_limit {
            let busy =
                (0..n as NodeId).filter(|&v| !programs[v as usize].done()).collect();
            metrics.rounds = round;
            finalize_edge_load(&mut metrics, &comm, &edge_load);
            return Err(EngineError::RoundLimitExceeded {
                limit: opts.round_limit,
                busy,
                metrics,
            });
        }
        round += 1;

        for v in 0..n as NodeId {
            let ctx = Ctx { node: v, n, round };
            programs[v as usize].on_round_start(&ctx);
        }

        // Delivery phase: everything emitted last round, in emitter order,
        // targets in ascending id order.
        for pe in &in_transit {
            match pe.unicast_to {
                None => {
                    for &(to, arc) in &comm.targets[pe.from as usize] {
                        edge_load[arc as usize] += 1;
                        let ctx = Ctx { node: to, n, round };
                        programs[to as usize].on_receive(&pe.msg, pe.from, &ctx);
                        if let Some(t) = transcript.as_mut() {
                            t.records.push(TranscriptRecord { round, from: pe.from, to, msg: pe.msg });
                        }
                    }
                }
                Some(to) => {
                    let arc = comm.targets[pe.from as usize]
                        .iter()
                        .find(|&&(u, _)| u == to)
                        .map(|&(_, a)| a)
                        .expect("validated at emission time");
                    edge_load[arc as usize] += 1;
                    let ctx = Ctx { node: to, n, round };
                    programs[to as usize].on_receive(&pe.msg, pe.from, &ctx);
                    if let Some(t) = transcript.as_mut() {
                        t.records.push(TranscriptRecord { round, from: pe.from, to, msg: pe.msg });
                    }
                }
            }
        }
        in_transit.clear();

        for v in 0..n as NodeId {
            let ctx = Ctx { node: v, n, round };
            programs[v as usize].on_deliveries_done(&ctx);
        }

        // Emission phase.
        for v in 0..n as NodeId {
            let ctx = Ctx { node: v, n, round };
            match programs[v as usize].emit(&ctx) {
                None => {}
                Some(Emission::Broadcast(msg)) => {
                    metrics.per_node_sent[v as usize] += 1;
                    metrics.messages_total += 1;
                    in_transit.push(PendingEmission { from: v, msg, unicast_to: None });
                }
                Some(Emission::Unicast(list)) => {
                    if opts.mode.discipline != Discipline::Unicast {
                        return Err(EngineError::DisciplineViolation {
                            node: v,
                            round,
                            detail: "unicast emission under broadcast discipline".into(),
                        });
                    }
                    let mut seen = Vec::with_capacity(list.len());
                    for (to, msg) in list {
                        if seen.contains(&to) {
                            return Err(EngineError::DisciplineViolation {
                                node: v,
                                round,
                                detail: format!("second emission on arc to {to}"),
                            });
                        }
                        if !comm.targets[v as usize].iter().any(|&(u, _)| u == to) {
                            return Err(EngineError::DisciplineViolation {
                                node: v,
                                round,
                                detail: format!("{to} is not a comm-neighbor"),
                            });
                        }
                        seen.push(to);
                        metrics.per_node_sent[v as usize] += 1;
                        metrics.messages_total += 1;
                        in_transit.push(PendingEmission { from: v, msg, unicast_to: Some(to) });
                    }
                }
            }
        }

        let view = RoundView { round, pending: &in_transit };
        let directives = supervisor.after_round(&view, &mut programs);
        for d in directives {
            match d.target {
                Target::All => {
                    for v in 0..n as NodeId {
                        let ctx = Ctx { node: v, n, round };
                        programs[v as usize].on_control(&d.event, &ctx);
                    }
                }
                Target::Node(v) => {
                    let ctx = Ctx { node: v, n, round };
                    programs[v as usize].on_control(&d.event, &ctx);
                }
            }
        }
    }

    metrics.rounds = round;
    finalize_edge_load(&mut metrics, &comm, &edge_load);
    Ok(RunOutcome { programs, metrics, transcript })
}

/// Number of comm-neighbors each node can reach under `direction`. Nodes
/// know their incident links, so programs may consult this at build time
/// (an isolated node has nobody to talk to and can skip staging).
pub fn comm_degrees(g: &Graph, direction: Direction) -> Vec<usize> {
    let comm = CommGraph::build(g, direction);
    comm.targets.iter().map(|t| t.len()).collect()
}

fn finalize_edge_load(metrics: &mut RunMetrics, comm: &CommGraph, load: &[u64]) {
    for (i, &c) in load.iter().enumerate() {
        if c > 0 {
            metrics.record_congestion(comm.arcs[i], c);
        }
    }
}
