//! Random-delay multiplexing of many protocol instances over one network.
//!
//! Each instance would be correct run alone; running k of them at once must
//! still respect one message per node per round. Every instance gets a
//! random initial delay drawn from [0, delay_bound], and each node keeps
//! one FIFO queue of instances with pending emissions, serving the head
//! each round. Delay-tolerant programs (everything in this crate) then
//! produce outputs identical to their solo runs; only round counts change.
//!
//! Iteration hand-over inside an instance (filtered broadcast levels, the
//! probe after a relaxation settles) is driven by an omniscient supervisor
//! that watches per-instance in-flight and queued counts, so no instance
//! advances while its previous stage still has traffic.

use crate::engine::{
    run_simulation_with, CommunicationMode, ControlEvent, ControlKind, Ctx, Directive, Emission,
    EngineError, NodeProgram, ProtocolMessage, RoundView, RunMetrics, RunOptions, Supervisor,
    Target, Transcript,
};
use crate::graph::{Graph, NodeId};
use crate::rng::{stream, Purpose};
use rand::Rng;
use std::collections::VecDeque;

/// A node program that can be multiplexed: it exposes whether it has a
/// message staged. When `ready` returns true, `emit` must return `Some`.
pub trait MuxSlot: NodeProgram {
    fn ready(&self) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceKind {
    Bf,
    Fb,
    Bcast,
}

/// Declared shape of one instance, used to size delays and reporting.
#[derive(Debug, Clone)]
pub struct InstanceDescriptor {
    pub instance: u32,
    pub kind: InstanceKind,
    /// Estimated solo rounds.
    pub dilation_estimate: u64,
    /// Estimated per-node messages this instance sends.
    pub congestion_estimate: f64,
}

/// How instances advance through internal stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchPolicy {
    /// Instances run until their programs go quiet on their own.
    RunToQuiescence,
    /// Each instance steps through iterations `top, top-1, …, 0`; an
    /// iteration starts only after the previous one has no in-flight
    /// messages and no queued emissions anywhere.
    Iterated { top: u32 },
    /// When the instance goes quiet, every node gets one Probe, its
    /// responses flow, and a Finish follows at the next quiescence.
    QuiesceThenProbe,
}

#[derive(Debug, Clone)]
pub struct ScheduleConfig {
    pub mode: CommunicationMode,
    pub seed: u64,
    pub policy: BatchPolicy,
    /// Upper end of the uniform delay draw. `None` derives it from the
    /// declared congestion estimates.
    pub delay_bound: Option<u64>,
    pub round_limit: u64,
    pub record_transcript: bool,
}

impl ScheduleConfig {
    pub fn new(mode: CommunicationMode, seed: u64, policy: BatchPolicy, n: usize) -> ScheduleConfig {
        ScheduleConfig {
            mode,
            seed,
            policy,
            delay_bound: None,
            round_limit: crate::engine::default_round_limit(n),
            record_transcript: false,
        }
    }
}

/// One node's multiplexer: owns a slot per instance and serves queued
/// slots in FIFO order, one emission per round.
pub struct MuxProgram<P> {
    slots: Vec<P>,
    fifo: VecDeque<u32>,
    in_fifo: Vec<bool>,
    /// (first legal emission round, slot) sorted by round; `next_wakeup`
    /// indexes the first entry not yet processed.
    wakeups: Vec<(u64, u32)>,
    next_wakeup: usize,
    started: Vec<bool>,
    /// Slots that received a delivery this round; their batch resolution
    /// runs once arrivals are complete.
    received: Vec<u32>,
    in_received: Vec<bool>,
    /// Readiness transitions (+1 armed, -1 drained) for the supervisor.
    busy_delta: Vec<(u32, i32)>,
    max_depth: usize,
}

impl<P: MuxSlot> MuxProgram<P> {
    fn new(slots: Vec<P>, delays: &[u64]) -> MuxProgram<P> {
        let k = slots.len();
        let mut wakeups: Vec<(u64, u32)> =
            delays.iter().enumerate().map(|(i, &d)| (1 + d, i as u32)).collect();
        wakeups.sort_unstable();
        MuxProgram {
            slots,
            fifo: VecDeque::new(),
            in_fifo: vec![false; k],
            wakeups,
            next_wakeup: 0,
            started: vec![false; k],
            received: Vec::new(),
            in_received: vec![false; k],
            busy_delta: Vec::new(),
            max_depth: 0,
        }
    }

    fn enqueue_if_ready(&mut self, i: u32) {
        if self.started[i as usize] && !self.in_fifo[i as usize] && self.slots[i as usize].ready()
        {
            self.in_fifo[i as usize] = true;
            self.fifo.push_back(i);
            self.max_depth = self.max_depth.max(self.fifo.len());
        }
    }

    /// Route one handler call to slot `i`, recording a readiness
    /// transition for the supervisor and queueing a newly armed slot.
    fn route<F: FnOnce(&mut P)>(&mut self, i: u32, f: F) {
        let before = self.slots[i as usize].ready();
        f(&mut self.slots[i as usize]);
        let after = self.slots[i as usize].ready();
        if before != after {
            self.busy_delta.push((i, if after { 1 } else { -1 }));
        }
        if !before && after {
            self.enqueue_if_ready(i);
        }
    }

    pub fn take_busy_delta(&mut self) -> Vec<(u32, i32)> {
        std::mem::take(&mut self.busy_delta)
    }

    pub fn max_queue_depth(&self) -> usize {
        self.max_depth
    }

    pub fn into_slots(self) -> Vec<P> {
        self.slots
    }

    pub fn slot(&self, i: u32) -> &P {
        &self.slots[i as usize]
    }
}

impl<P: MuxSlot> NodeProgram for MuxProgram<P> {
    fn on_round_start(&mut self, ctx: &Ctx) {
        while self.next_wakeup < self.wakeups.len() && self.wakeups[self.next_wakeup].0 <= ctx.round
        {
            let i = self.wakeups[self.next_wakeup].1;
            self.next_wakeup += 1;
            self.started[i as usize] = true;
            self.enqueue_if_ready(i);
        }
    }

    fn on_receive(&mut self, msg: &ProtocolMessage, from: NodeId, ctx: &Ctx) {
        let i = msg.instance;
        debug_assert!((i as usize) < self.slots.len(), "unknown instance {i}");
        if !self.in_received[i as usize] {
            self.in_received[i as usize] = true;
            self.received.push(i);
        }
        self.route(i, |s| s.on_receive(msg, from, ctx));
    }

    fn on_deliveries_done(&mut self, ctx: &Ctx) {
        for i in std::mem::take(&mut self.received) {
            self.in_received[i as usize] = false;
            self.route(i, |s| s.on_deliveries_done(ctx));
        }
    }

    fn on_control(&mut self, ev: &ControlEvent, ctx: &Ctx) {
        self.route(ev.instance, |s| s.on_control(ev, ctx));
    }

    fn emit(&mut self, ctx: &Ctx) -> Option<Emission> {
        let i = self.fifo.pop_front()?;
        self.in_fifo[i as usize] = false;
        let out = self.slots[i as usize].emit(ctx);
        debug_assert!(out.is_some(), "queued slot {i} had nothing to emit");
        if self.slots[i as usize].ready() {
            self.in_fifo[i as usize] = true;
            self.fifo.push_back(i);
            self.max_depth = self.max_depth.max(self.fifo.len());
        } else {
            self.busy_delta.push((i, -1));
        }
        out
    }

    fn done(&self) -> bool {
        self.fifo.is_empty() && self.slots.iter().all(|s| s.done())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InstancePhase {
    Running,
    Probing,
    Done,
}

/// Watches per-instance activity and issues stage-advance controls.
/// `busy[i]` counts (node, slot) pairs with a staged emission; together
/// with the engine's in-flight view this detects per-instance quiescence
/// exactly.
struct BatchSupervisor {
    policy: BatchPolicy,
    busy: Vec<i64>,
    pending_scratch: Vec<u64>,
    phase: Vec<InstancePhase>,
    cur_iter: Vec<u32>,
}

impl BatchSupervisor {
    fn new(policy: BatchPolicy, initial_busy: Vec<i64>) -> BatchSupervisor {
        let k = initial_busy.len();
        let top = match policy {
            BatchPolicy::Iterated { top } => top,
            _ => 0,
        };
        BatchSupervisor {
            policy,
            busy: initial_busy,
            pending_scratch: vec![0; k],
            phase: vec![InstancePhase::Running; k],
            cur_iter: vec![top; k],
        }
    }

    /// Instance with staged or queued traffic, for starvation reports.
    fn stuck_instance(&self) -> u32 {
        self.busy
            .iter()
            .enumerate()
            .filter(|&(_, &b)| b > 0)
            .map(|(i, _)| i as u32)
            .next()
            .unwrap_or(0)
    }
}

impl<P: MuxSlot> Supervisor<MuxProgram<P>> for BatchSupervisor {
    fn after_round(
        &mut self,
        view: &RoundView<'_>,
        programs: &mut [MuxProgram<P>],
    ) -> Vec<Directive> {
        for m in programs.iter_mut() {
            for (i, d) in m.take_busy_delta() {
                self.busy[i as usize] += d as i64;
                debug_assert!(self.busy[i as usize] >= 0);
            }
        }
        if self.policy == BatchPolicy::RunToQuiescence {
            return Vec::new();
        }
        for c in self.pending_scratch.iter_mut() {
            *c = 0;
        }
        for pe in view.pending {
            self.pending_scratch[pe.msg.instance as usize] += 1;
        }
        let mut out = Vec::new();
        for i in 0..self.busy.len() {
            if self.phase[i] == InstancePhase::Done
                || self.busy[i] > 0
                || self.pending_scratch[i] > 0
            {
                continue;
            }
            let kind = match (self.policy, self.phase[i]) {
                (BatchPolicy::Iterated { .. }, InstancePhase::Running) => {
                    if self.cur_iter[i] == 0 {
                        self.phase[i] = InstancePhase::Done;
                        ControlKind::Finish
                    } else {
                        self.cur_iter[i] -= 1;
                        ControlKind::BeginIteration(self.cur_iter[i])
                    }
                }
                (BatchPolicy::QuiesceThenProbe, InstancePhase::Running) => {
                    self.phase[i] = InstancePhase::Probing;
                    ControlKind::Probe
                }
                (BatchPolicy::QuiesceThenProbe, InstancePhase::Probing) => {
                    self.phase[i] = InstancePhase::Done;
                    ControlKind::Finish
                }
                _ => continue,
            };
            out.push(Directive {
                target: Target::All,
                event: ControlEvent { instance: i as u32, kind },
            });
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SchedulerError {
    #[error("instance {instance} starved after {attempts} attempt(s): {source}")]
    Starved { instance: u32, attempts: u32, source: EngineError },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

pub struct ScheduleOutcome<P> {
    /// Final programs, `per_instance[i][v]` = instance i's program at
    /// node v.
    pub per_instance: Vec<Vec<P>>,
    pub metrics: RunMetrics,
    pub delays: Vec<u64>,
    pub retried: bool,
    pub transcript: Option<Transcript>,
}

impl<P> std::fmt::Debug for ScheduleOutcome<P> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScheduleOutcome")
            .field("metrics", &self.metrics)
            .field("delays", &self.delays)
            .field("retried", &self.retried)
            .finish_non_exhaustive()
    }
}

fn draw_delays(seed: u64, attempt: u64, k: usize, bound: u64) -> Vec<u64> {
    (0..k)
        .map(|i| {
            let mut r = stream(seed, Purpose::SchedulerDelay, (attempt << 32) | i as u64);
            r.gen_range(0..=bound)
        })
        .collect()
}

/// Run `descriptors.len()` instances concurrently. `make(i, v)` builds
/// instance i's program for node v; on a retry the batch is rebuilt from
/// scratch with fresh delays sized by the observed congestion.
pub fn schedule_parallel<P, F>(
    g: &Graph,
    descriptors: &[InstanceDescriptor],
    make: F,
    cfg: &ScheduleConfig,
) -> Result<ScheduleOutcome<P>, SchedulerError>
where
    P: MuxSlot,
    F: Fn(u32, NodeId) -> P,
{
    let n = g.n();
    let k = descriptors.len();
    assert!(k > 0, "empty batch");
    for (i, d) in descriptors.iter().enumerate() {
        assert_eq!(d.instance, i as u32, "instances must be labeled 0..k in order");
    }
    let declared_bound = cfg.delay_bound.unwrap_or_else(|| {
        descriptors.iter().map(|d| d.congestion_estimate).sum::<f64>().ceil().max(0.0) as u64
    });

    let mut bound = declared_bound;
    let mut last_err = None;
    for attempt in 0..2u64 {
        let delays = draw_delays(cfg.seed, attempt, k, bound);
        let programs: Vec<MuxProgram<P>> = (0..n as NodeId)
            .map(|v| {
                MuxProgram::new((0..k as u32).map(|i| make(i, v)).collect(), &delays)
            })
            .collect();
        let initial_busy = (0..k)
            .map(|i| programs.iter().filter(|m| m.slots[i].ready()).count() as i64)
            .collect();
        let mut sup = BatchSupervisor::new(cfg.policy, initial_busy);

        let mut opts = RunOptions::new(cfg.mode, cfg.seed, n);
        opts.round_limit = cfg.round_limit;
        opts.record_transcript = cfg.record_transcript;

        match run_simulation_with(g, programs, &opts, &mut sup) {
            Ok(out) => {
                let mut metrics = out.metrics;
                metrics.max_queue_depth = metrics
                    .max_queue_depth
                    .max(out.programs.iter().map(|m| m.max_depth).max().unwrap_or(0));
                let mut per_instance: Vec<Vec<P>> = (0..k).map(|_| Vec::with_capacity(n)).collect();
                for m in out.programs {
                    for (i, s) in m.into_slots().into_iter().enumerate() {
                        per_instance[i].push(s);
                    }
                }
                return Ok(ScheduleOutcome {
                    per_instance,
                    metrics,
                    delays,
                    retried: attempt > 0,
                    transcript: out.transcript,
                });
            }
            Err(e @ EngineError::DisciplineViolation { .. }) => {
                return Err(SchedulerError::Engine(e));
            }
            Err(e @ EngineError::RoundLimitExceeded { .. }) => {
                // Starved: redraw delays over the observed per-node load,
                // which dominates whatever the declared estimates missed.
                if let EngineError::RoundLimitExceeded { metrics, .. } = &e {
                    bound = bound.max(metrics.max_node_sent()).max(1);
                }
                last_err = Some((e, sup.stuck_instance()));
            }
        }
    }
    let (source, instance) = last_err.expect("loop exits only via return or error");
    Err(SchedulerError::Starved { instance, attempts: 2, source })
}
