//! Hop-bounded distance relaxation.
//!
//! Each instance serves one source. Estimates are upper bounds at every
//! node throughout the run, and wherever the true shortest path uses at
//! most h arcs the final estimate is exact. A node's state is the Pareto
//! frontier of (walk weight, arc count) pairs it has learned; keeping the
//! whole frontier instead of just the cheapest walk makes the final state
//! a pure function of the message multiset, so instances multiplexed
//! behind random delays end exactly where their solo runs end.
//!
//! The virtual-source mode prepends a conceptual start with a zero-weight
//! arc to every node and admits negative arc weights. Once relaxation
//! settles, one probe round re-checks every arc: an arc that could still
//! improve its head certifies a negative cycle, and a clean probe
//! certifies the settled values as valid reweighting potentials.

use crate::engine::{
    CommunicationMode, ControlEvent, ControlKind, Ctx, Direction, Emission, MessageKind,
    NodeProgram, ProtocolMessage, RunMetrics, Transcript, VIRTUAL_SOURCE,
};
use crate::graph::{find_negative_cycle, Graph, NegativeCycleReport, NodeId, INF};
use crate::scheduler::{
    schedule_parallel, BatchPolicy, InstanceDescriptor, InstanceKind, MuxSlot, ScheduleConfig,
    SchedulerError,
};
use std::collections::VecDeque;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq)]
struct FrontierPoint {
    value: f64,
    hops: u32,
}

/// Pareto frontier of (walk weight, arc count) pairs: arc counts strictly
/// increase, weights strictly decrease. The cheapest known walk is the
/// last entry.
#[derive(Debug, Clone, Default)]
pub struct Frontier {
    pts: Vec<FrontierPoint>,
}

impl Frontier {
    pub fn min_value(&self) -> f64 {
        self.pts.last().map_or(INF, |p| p.value)
    }

    pub fn min_value_hops(&self) -> u32 {
        self.pts.last().map_or(u32::MAX, |p| p.hops)
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    /// Insert unless some kept pair is at least as cheap in at most as
    /// many arcs; inserting evicts every pair it now covers. Returns
    /// whether the pair was kept.
    fn insert(&mut self, value: f64, hops: u32) -> bool {
        let i = self.pts.partition_point(|p| p.hops < hops);
        if i > 0 && self.pts[i - 1].value <= value {
            return false;
        }
        if i < self.pts.len() && self.pts[i].hops == hops && self.pts[i].value <= value {
            return false;
        }
        let mut j = i;
        while j < self.pts.len() && self.pts[j].value >= value {
            j += 1;
        }
        self.pts.splice(i..j, [FrontierPoint { value, hops }]);
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BfMode {
    Plain { source: NodeId },
    Virtual,
}

/// One relaxation instance at one node.
pub struct BfProgram {
    node: NodeId,
    instance: u32,
    /// Wire label carried by this instance's messages: the source id, or
    /// `VIRTUAL_SOURCE` in virtual mode.
    label: NodeId,
    h: u32,
    /// Shared in-arc table, `in_w[v]` sorted by tail id.
    in_w: Arc<Vec<Vec<(NodeId, f64)>>>,
    frontier: Frontier,
    round_buf: Vec<FrontierPoint>,
    out_queue: VecDeque<FrontierPoint>,
    staged_verify: Option<f64>,
    /// Nodes with no comm-neighbors keep their state local instead of
    /// queueing messages nobody would hear.
    mute: bool,
    violated: bool,
    finished: bool,
    max_queue_depth: usize,
    emitted_total: u64,
}

impl BfProgram {
    fn new(
        node: NodeId,
        instance: u32,
        mode: BfMode,
        h: u32,
        in_w: Arc<Vec<Vec<(NodeId, f64)>>>,
        comm_degree: usize,
    ) -> BfProgram {
        assert!(h >= 1, "hop budget must be positive");
        let mut p = BfProgram {
            node,
            instance,
            label: match mode {
                BfMode::Plain { source } => source,
                BfMode::Virtual => VIRTUAL_SOURCE,
            },
            h,
            in_w,
            frontier: Frontier::default(),
            round_buf: Vec::new(),
            out_queue: VecDeque::new(),
            staged_verify: None,
            mute: comm_degree == 0,
            violated: false,
            // Plain instances go quiet on their own; virtual ones wait
            // for the probe and its Finish.
            finished: mode != BfMode::Virtual,
            max_queue_depth: 0,
            emitted_total: 0,
        };
        match mode {
            BfMode::Plain { source } if source == node => p.accept(0.0, 0),
            BfMode::Plain { .. } => {}
            // The conceptual start reaches every node through one
            // zero-weight arc.
            BfMode::Virtual => p.accept(0.0, 1),
        }
        p
    }

    fn accept(&mut self, value: f64, hops: u32) {
        if self.frontier.insert(value, hops) && hops < self.h && !self.mute {
            self.out_queue.push_back(FrontierPoint { value, hops });
            self.max_queue_depth = self.max_queue_depth.max(self.out_queue.len());
        }
    }

    fn arc_from(&self, x: NodeId) -> Option<f64> {
        let arcs = &self.in_w[self.node as usize];
        arcs.binary_search_by_key(&x, |&(t, _)| t).ok().map(|i| arcs[i].1)
    }

    pub fn est(&self) -> f64 {
        self.frontier.min_value()
    }

    pub fn est_hops(&self) -> u32 {
        self.frontier.min_value_hops()
    }

    pub fn violated(&self) -> bool {
        self.violated
    }

    pub fn emitted_total(&self) -> u64 {
        self.emitted_total
    }

    pub fn frontier_len(&self) -> usize {
        self.frontier.len()
    }
}

impl NodeProgram for BfProgram {
    fn on_receive(&mut self, msg: &ProtocolMessage, from: NodeId, _ctx: &Ctx) {
        debug_assert_eq!(msg.instance, self.instance);
        // Bidirectional comm delivers across both arc directions;
        // relaxation still follows real arcs only.
        let Some(w) = self.arc_from(from) else { return };
        match msg.kind {
            MessageKind::BfRelax => {
                debug_assert_eq!(msg.source, self.label);
                let hops = msg.hops + 1;
                if hops <= self.h {
                    self.round_buf.push(FrontierPoint { value: msg.value + w, hops });
                }
            }
            MessageKind::Verify => {
                if msg.value + w < self.frontier.min_value() {
                    self.violated = true;
                }
            }
            _ => debug_assert!(false, "unexpected message kind"),
        }
    }

    fn on_deliveries_done(&mut self, _ctx: &Ctx) {
        if self.round_buf.is_empty() {
            return;
        }
        // Cheapest first, fewest arcs on ties: no pair queued here is
        // evicted by a later pair from the same round.
        self.round_buf.sort_unstable_by(|a, b| {
            a.value.partial_cmp(&b.value).unwrap().then(a.hops.cmp(&b.hops))
        });
        let batch = std::mem::take(&mut self.round_buf);
        for p in &batch {
            self.accept(p.value, p.hops);
        }
        self.round_buf = batch;
        self.round_buf.clear();
    }

    fn on_control(&mut self, ev: &ControlEvent, _ctx: &Ctx) {
        if ev.instance != self.instance {
            return;
        }
        match ev.kind {
            ControlKind::Probe if !self.mute => {
                self.staged_verify = Some(self.frontier.min_value());
            }
            ControlKind::Probe => {}
            ControlKind::Finish => self.finished = true,
            ControlKind::BeginIteration(_) => {}
        }
    }

    fn emit(&mut self, _ctx: &Ctx) -> Option<Emission> {
        if let Some(p) = self.out_queue.pop_front() {
            self.emitted_total += 1;
            return Some(Emission::Broadcast(ProtocolMessage::relax(
                self.label,
                p.value,
                p.hops,
                self.instance,
            )));
        }
        if let Some(est) = self.staged_verify.take() {
            self.emitted_total += 1;
            return Some(Emission::Broadcast(ProtocolMessage::verify(
                self.node,
                est,
                self.instance,
            )));
        }
        None
    }

    fn done(&self) -> bool {
        self.finished && self.out_queue.is_empty() && self.staged_verify.is_none()
    }
}

impl MuxSlot for BfProgram {
    fn ready(&self) -> bool {
        !self.out_queue.is_empty() || self.staged_verify.is_some()
    }
}

/// Declared per-node message estimate for one relaxation instance, used
/// to size scheduler delays.
pub fn default_bf_congestion(n: usize) -> f64 {
    (n.max(2) as f64).ln() + 2.0
}

#[derive(Debug, Clone)]
pub struct BfBatchConfig {
    pub mode: CommunicationMode,
    pub seed: u64,
    pub h: u32,
    pub round_limit: u64,
    pub congestion_estimate: f64,
    /// Override for the delay draw; `None` derives it from the estimates.
    pub delay_bound: Option<u64>,
    pub record_transcript: bool,
}

impl BfBatchConfig {
    pub fn new(mode: CommunicationMode, seed: u64, h: u32, n: usize) -> BfBatchConfig {
        BfBatchConfig {
            mode,
            seed,
            h,
            round_limit: crate::engine::default_round_limit(n),
            congestion_estimate: default_bf_congestion(n),
            delay_bound: None,
            record_transcript: false,
        }
    }
}

#[derive(Debug)]
pub struct BfTables {
    pub sources: Vec<NodeId>,
    /// `est[i][v]` bounds the source[i]-to-v distance; exact wherever the
    /// shortest path uses at most h arcs.
    pub est: Vec<Vec<f64>>,
    /// Arc count of the cheapest known walk behind each estimate.
    pub hops: Vec<Vec<u32>>,
    pub metrics: RunMetrics,
    pub retried: bool,
    pub transcript: Option<Transcript>,
}

fn in_arc_table(g: &Graph) -> Arc<Vec<Vec<(NodeId, f64)>>> {
    Arc::new((0..g.n() as NodeId).map(|v| g.in_arcs(v).to_vec()).collect())
}

/// Run one relaxation instance per source, multiplexed over one network.
pub fn distributed_bellman_ford(
    g: &Graph,
    sources: &[NodeId],
    cfg: &BfBatchConfig,
) -> Result<BfTables, SchedulerError> {
    assert!(!sources.is_empty());
    assert!(sources.iter().all(|&s| (s as usize) < g.n()));
    let in_w = in_arc_table(g);
    let degrees = crate::engine::comm_degrees(g, cfg.mode.direction);
    let descriptors: Vec<InstanceDescriptor> = (0..sources.len() as u32)
        .map(|i| InstanceDescriptor {
            instance: i,
            kind: InstanceKind::Bf,
            dilation_estimate: cfg.h as u64 + 2,
            congestion_estimate: cfg.congestion_estimate,
        })
        .collect();
    let mut scfg = ScheduleConfig::new(cfg.mode, cfg.seed, BatchPolicy::RunToQuiescence, g.n());
    scfg.delay_bound = cfg.delay_bound;
    scfg.round_limit = cfg.round_limit;
    scfg.record_transcript = cfg.record_transcript;

    let out = schedule_parallel(
        g,
        &descriptors,
        |i, v| {
            BfProgram::new(
                v,
                i,
                BfMode::Plain { source: sources[i as usize] },
                cfg.h,
                in_w.clone(),
                degrees[v as usize],
            )
        },
        &scfg,
    )?;

    Ok(BfTables {
        sources: sources.to_vec(),
        est: out
            .per_instance
            .iter()
            .map(|ps| ps.iter().map(|p| p.est()).collect())
            .collect(),
        hops: out
            .per_instance
            .iter()
            .map(|ps| ps.iter().map(|p| p.est_hops()).collect())
            .collect(),
        metrics: out.metrics,
        retried: out.retried,
        transcript: out.transcript,
    })
}

#[derive(Debug)]
pub struct PotentialOutcome {
    /// `phi[v]` = cheapest walk weight from the conceptual start; all
    /// zero when no arc weight is negative.
    pub phi: Vec<f64>,
    /// Present exactly when the probe found a remaining improvement.
    pub cycle: Option<NegativeCycleReport>,
    pub metrics: RunMetrics,
}

/// Settle reweighting potentials over arbitrary arc weights, or detect a
/// negative cycle. Runs bidirectional so detection works on directed
/// graphs whose reverse arcs are missing.
pub fn virtual_source_potentials(
    g: &Graph,
    seed: u64,
    round_limit: u64,
) -> Result<PotentialOutcome, SchedulerError> {
    let n = g.n();
    let in_w = in_arc_table(g);
    let degrees = crate::engine::comm_degrees(g, Direction::Bidirectional);
    let descriptors = [InstanceDescriptor {
        instance: 0,
        kind: InstanceKind::Bf,
        dilation_estimate: n as u64 + 2,
        congestion_estimate: default_bf_congestion(n),
    }];
    let mut scfg = ScheduleConfig::new(
        CommunicationMode::BROADCAST_BIDI,
        seed,
        BatchPolicy::QuiesceThenProbe,
        n,
    );
    scfg.delay_bound = Some(0);
    scfg.round_limit = round_limit;

    let out = schedule_parallel(
        g,
        &descriptors,
        |i, v| BfProgram::new(v, i, BfMode::Virtual, n as u32, in_w.clone(), degrees[v as usize]),
        &scfg,
    )?;

    let programs = &out.per_instance[0];
    let cycle = programs.iter().any(|p| p.violated()).then(|| {
        let cycle = find_negative_cycle(g)
            .expect("a probed improvement at full hop budget implies a negative cycle");
        NegativeCycleReport { cycle }
    });
    Ok(PotentialOutcome {
        phi: programs.iter().map(|p| p.est()).collect(),
        cycle,
        metrics: out.metrics,
    })
}
