//! Discrete-event engine.
//!
//! Each released job is shown to the policy as a fixed-length state vector,
//! the chosen target is executed (transmission, non-preemptive EDF queue,
//! execution), the outcome is possibly tampered with by a compromised
//! executor, rewarded, and recorded on the ledger. Ledger confirmations
//! feed back into the per-fog-node corruption-rate features.
//!
//! State layout for `N` fog nodes (length `2 (N + 2) + 2`):
//!
//! | range            | feature                                                   |
//! |------------------|-----------------------------------------------------------|
//! | `0..N+2`         | backlog per target, `min(1, backlog_work / capacity / D)` |
//! | `N+2..2N+4`      | detected / confirmed corruption per target (0 for local and cloud) |
//! | `2N+4`           | job size / largest stream size                            |
//! | `2N+5`           | deadline slack, `clamp((deadline - now) / D, 0, 1)`       |

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::Transition;
use crate::attacks::{audit, mark_compromised, maybe_tamper, AttackConfig, SecurityReport};
use crate::ledger::{hash_bytes, Chain, Hash32, LedgerConfig, Miner, OffloadRecord};
use crate::metrics::RunMetrics;
use crate::policies::{Decision, Policy};
use crate::seed;
use crate::topology::Topology;
use crate::workload::{generate_jobs, slot_parameters_for_size, JobStatus, SlotParams, TaskInstance, TaskStream};

pub const FEATURE_LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// Non-negative reward weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub done: f64,
    pub latency: f64,
    pub energy: f64,
    pub security: f64,
    pub miss: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            done: 1.0,
            latency: 0.5,
            energy: 0.2,
            security: 2.0,
            miss: 1.0,
        }
    }
}

impl RewardWeights {
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        [
            ("done", self.done),
            ("latency", self.latency),
            ("energy", self.energy),
            ("security", self.security),
            ("miss", self.miss),
        ]
        .into_iter()
        .filter(|(_, v)| !(*v >= 0.0 && v.is_finite()))
        .map(|(n, v)| (n, format!("weight must be finite and >= 0 (got {v})")))
        .collect()
    }
}

/// Final result of one job as seen by the engine.
///
/// Canonical encoding (89 bytes, little-endian): `job u64 | action u32 |
/// executor u32 | release f64 | deadline f64 | completion f64 | latency f64 |
/// energy f64 | flags u8 (bit0 deadline_met, bit1 corrupted, bit2 finished) |
/// payload [32]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub job: u64,
    pub action: usize,
    pub executor: usize,
    pub release_time: f64,
    pub absolute_deadline: f64,
    /// When the job reached the executor's queue, if it did.
    pub arrival_time: Option<f64>,
    pub start_time: Option<f64>,
    /// Completion instant, or the horizon for unfinished jobs.
    pub completion_time: f64,
    pub latency: f64,
    pub energy: f64,
    pub deadline_met: bool,
    pub corrupted: bool,
    pub finished: bool,
    pub payload: Hash32,
}

impl Outcome {
    pub fn relative_deadline(&self) -> f64 {
        self.absolute_deadline - self.release_time
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(89);
        b.extend_from_slice(&self.job.to_le_bytes());
        b.extend_from_slice(&(self.action as u32).to_le_bytes());
        b.extend_from_slice(&(self.executor as u32).to_le_bytes());
        for v in [
            self.release_time,
            self.absolute_deadline,
            self.completion_time,
            self.latency,
            self.energy,
        ] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let flags = self.deadline_met as u8 | (self.corrupted as u8) << 1 | (self.finished as u8) << 2;
        b.push(flags);
        b.extend_from_slice(&self.payload);
        b
    }

    pub fn status(&self) -> JobStatus {
        if self.corrupted {
            JobStatus::Corrupted
        } else if self.deadline_met {
            JobStatus::Completed
        } else {
            JobStatus::Missed
        }
    }

    #[cfg(test)]
    pub(crate) fn honest_for_test(job: u64) -> Self {
        Outcome {
            job,
            action: 1,
            executor: 1,
            release_time: 0.0,
            absolute_deadline: 10.0,
            arrival_time: Some(1.0),
            start_time: Some(1.0),
            completion_time: 3.0,
            latency: 3.0,
            energy: 2.0,
            deadline_met: true,
            corrupted: false,
            finished: true,
            payload: honest_payload(job, 1, 1.0),
        }
    }
}

pub fn outcome_digest(o: &Outcome) -> Hash32 {
    hash_bytes(&o.canonical_bytes())
}

/// Stand-in for the computed result of a job.
fn honest_payload(job: u64, executor: usize, size: f64) -> Hash32 {
    let mut b = b"result".to_vec();
    b.extend_from_slice(&job.to_le_bytes());
    b.extend_from_slice(&(executor as u32).to_le_bytes());
    b.extend_from_slice(&size.to_le_bytes());
    hash_bytes(&b)
}

/// `w_done [met] - w_lat min(latency / D, 2) - w_en energy / E_ref - w_sec [corrupted] - w_miss [not met]`.
///
/// Unfinished jobs take the capped latency term of 2.
pub fn compute_reward(o: &Outcome, w: &RewardWeights, energy_ref: f64) -> f64 {
    let lat = if o.finished {
        (o.latency / o.relative_deadline()).min(2.0)
    } else {
        2.0
    };
    let en = if energy_ref > 0.0 { o.energy / energy_ref } else { 0.0 };
    let met = o.deadline_met as u8 as f64;
    w.done * met - w.latency * lat - w.energy * en - w.security * (o.corrupted as u8 as f64) - w.miss * (1.0 - met)
}

/// Everything that stays fixed across the episodes of one experiment.
#[derive(Debug, Clone)]
pub struct Scenario {
    topology: Topology,
    streams: Vec<TaskStream>,
    stream_source: Vec<usize>,
    pub ledger: LedgerConfig,
    pub attack: AttackConfig,
    pub reward: RewardWeights,
    horizon: f64,
    energy_ref: f64,
    max_size: f64,
}

impl Scenario {
    /// Validates inputs and applies the attack configuration: fog nodes
    /// chosen by `mark_compromised` are added to any flagged in `topology`.
    pub fn new(
        topology: &Topology,
        streams: Vec<TaskStream>,
        ledger: LedgerConfig,
        attack: AttackConfig,
        reward: RewardWeights,
        horizon: f64,
    ) -> Result<Self, SimError> {
        let mut errs = Vec::new();
        let mut stream_source = Vec::new();
        let mut ids = std::collections::BTreeSet::new();
        for (i, s) in streams.iter().enumerate() {
            if !ids.insert(s.id.as_str()) {
                errs.push(format!("streams[{i}]: duplicate id `{}`", s.id));
            }
            errs.extend(s.violations().into_iter().map(|v| format!("streams[{i}]: {v}")));
            match topology.device_index(&s.source) {
                Ok(d) => stream_source.push(d),
                Err(e) => errs.push(format!("streams[{i}]: {e}")),
            }
        }
        if streams.is_empty() {
            errs.push("at least one stream is required".into());
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            errs.push(format!("horizon must be finite and > 0 (got {horizon})"));
        }
        errs.extend(ledger.violations().into_iter().map(|(f, m)| format!("ledger.{f}: {m}")));
        errs.extend(attack.violations().into_iter().map(|(f, m)| format!("attack.{f}: {m}")));
        errs.extend(reward.violations().into_iter().map(|(f, m)| format!("reward.{f}: {m}")));
        if !errs.is_empty() {
            return Err(SimError::Invalid(errs));
        }

        let mut compromised = mark_compromised(topology, attack.compromised_fraction, attack.seed);
        compromised.extend(topology.fog_nodes().iter().filter(|n| n.compromised).map(|n| n.id.clone()));
        let topology = topology
            .with_compromised(&compromised)
            .map_err(|e| SimError::Invalid(vec![e.to_string()]))?;

        let cloud = topology.cloud();
        let mean_cloud_exec = streams.iter().map(|s| s.size / cloud.capacity).sum::<f64>() / streams.len() as f64;
        let max_size = streams.iter().map(|s| s.size).fold(0.0, f64::max);
        Ok(Self {
            energy_ref: cloud.busy_power * mean_cloud_exec,
            topology,
            streams,
            stream_source,
            ledger,
            attack,
            reward,
            horizon,
            max_size,
        })
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self, SimError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(SimError::Invalid(vec![format!("horizon must be finite and > 0 (got {horizon})")]));
        }
        Ok(Self { horizon, ..self.clone() })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn streams(&self) -> &[TaskStream] {
        &self.streams
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `busy_power(cloud) * mean C_cloud`, the energy normaliser.
    pub fn energy_ref(&self) -> f64 {
        self.energy_ref
    }

    pub fn action_count(&self) -> usize {
        self.topology.action_count()
    }

    pub fn state_len(&self) -> usize {
        2 * self.action_count() + 2
    }

    /// Expected number of releases per episode.
    pub fn expected_jobs(&self) -> f64 {
        self.streams
            .iter()
            .map(|s| match s.arrival {
                crate::workload::ArrivalKind::Periodic => (self.horizon / s.period).floor() + 1.0,
                crate::workload::ArrivalKind::Poisson => self.horizon / s.period,
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    JobRelease(usize),
    TxComplete(usize),
    ExecComplete { node: usize, job: usize },
    BlockMined,
    /// Records of the given block become confirmed.
    BlockValidated(usize),
    EpisodeEnd,
}

#[derive(Debug, Clone, Copy)]
pub struct Event {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap pops the smallest (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub transitions: Vec<Transition>,
    /// Reported outcomes, indexed by job id (= decision order).
    pub outcomes: Vec<Outcome>,
    /// Outcomes as honestly computed, indexed by job id.
    pub honest: Vec<Outcome>,
    pub jobs: Vec<TaskInstance>,
    pub security: SecurityReport,
    pub metrics: RunMetrics,
    #[serde(skip)]
    pub chain: Option<Chain>,
}

struct JobRt {
    inst: TaskInstance,
    device: usize,
    action: usize,
    node: usize,
    slot: SlotParams,
    tx_energy_rate: f64,
    arrival: Option<f64>,
    start: Option<f64>,
    energy: f64,
}

#[derive(Default)]
struct NodeRt {
    queue: Vec<usize>,
    running: Option<(usize, f64)>,
    queued_work: f64,
    inflight_work: f64,
}

#[derive(Default, Clone, Copy)]
struct Trust {
    confirmed: u64,
    detected: u64,
}

struct PendingDecision {
    state: Vec<f64>,
    action: usize,
    reward: Option<f64>,
}

struct Engine<'a> {
    sc: &'a Scenario,
    policy: &'a mut dyn Policy,
    now: f64,
    seq: u64,
    events: BinaryHeap<Event>,
    jobs: Vec<JobRt>,
    nodes: Vec<NodeRt>,
    trust: Vec<Trust>,
    miner: Option<Miner>,
    miner_free_at: f64,
    outcomes: Vec<Option<Outcome>>,
    honest: Vec<Option<Outcome>>,
    decisions: Vec<PendingDecision>,
    flushed: usize,
    transitions: Vec<Transition>,
    policy_rng: rand_chacha::ChaCha8Rng,
    tamper_rng: rand_chacha::ChaCha8Rng,
}

/// Runs one episode. The engine is total: every released job ends
/// Completed, Missed or Corrupted, and identical inputs give identical
/// traces.
pub fn run_episode(scenario: &Scenario, policy: &mut dyn Policy, seed_: u64) -> EpisodeTrace {
    policy.reset();
    let mut released: Vec<(f64, usize, u64, TaskInstance)> = Vec::new();
    for (si, s) in scenario.streams.iter().enumerate() {
        let jobs = generate_jobs(s, scenario.horizon, seed::derive(seed_, seed::TAG_WORKLOAD + si as u64))
            .expect("scenario validated streams and horizon");
        released.extend(jobs.into_iter().map(|j| (j.release_time, si, j.id, j)));
    }
    released.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let topo = &scenario.topology;
    let jobs: Vec<JobRt> = released
        .into_iter()
        .enumerate()
        .map(|(id, (_, si, _, mut inst))| {
            inst.id = id as u64;
            JobRt {
                inst,
                device: scenario.stream_source[si],
                action: 0,
                node: 0,
                slot: SlotParams {
                    exec_time: 0.0,
                    tx_time: 0.0,
                    total_budget: 0.0,
                },
                tx_energy_rate: 0.0,
                arrival: None,
                start: None,
                energy: 0.0,
            }
        })
        .collect();

    let n_jobs = jobs.len();
    let mut engine = Engine {
        sc: scenario,
        policy,
        now: 0.0,
        seq: 0,
        events: BinaryHeap::new(),
        jobs,
        nodes: (0..topo.nodes().len()).map(|_| NodeRt::default()).collect(),
        trust: vec![Trust::default(); topo.nodes().len()],
        miner: scenario
            .ledger
            .enabled
            .then(|| Miner::new(&scenario.ledger).expect("scenario validated ledger config")),
        miner_free_at: 0.0,
        outcomes: vec![None; n_jobs],
        honest: vec![None; n_jobs],
        decisions: Vec::with_capacity(n_jobs),
        flushed: 0,
        transitions: Vec::with_capacity(n_jobs),
        policy_rng: seed::rng(seed_, seed::TAG_POLICY),
        tamper_rng: seed::rng(seed_, seed::TAG_TAMPER),
    };
    for j in 0..n_jobs {
        let t = engine.jobs[j].inst.release_time;
        engine.schedule(t, EventKind::JobRelease(j));
    }
    engine.schedule(scenario.horizon, EventKind::EpisodeEnd);
    engine.run();
    engine.into_trace()
}

impl Engine<'_> {
    fn schedule(&mut self, time: f64, kind: EventKind) {
        debug_assert!(time >= self.now, "event scheduled in the past");
        self.events.push(Event {
            time,
            seq: self.seq,
            kind,
        });
        self.seq += 1;
    }

    fn run(&mut self) {
        while let Some(ev) = self.events.pop() {
            debug_assert!(ev.time >= self.now);
            self.now = ev.time;
            match ev.kind {
                EventKind::JobRelease(j) => self.release(j),
                EventKind::TxComplete(j) => self.tx_complete(j),
                EventKind::ExecComplete { node, job } => self.exec_complete(node, job),
                EventKind::BlockMined => {
                    if let Some(m) = self.miner.as_mut() {
                        m.finish();
                    }
                    self.try_mine();
                }
                EventKind::BlockValidated(b) => self.block_validated(b),
                EventKind::EpisodeEnd => {
                    // let every other event at the horizon instant run first
                    if self.events.peek().is_some_and(|e| e.time <= self.now) {
                        self.schedule(self.now, EventKind::EpisodeEnd);
                        continue;
                    }
                    self.end_episode();
                    return;
                }
            }
            self.flush_transitions(false);
        }
    }

    fn backlog_seconds(&self, node: usize) -> f64 {
        let n = &self.nodes[node];
        let cap = self.sc.topology.node(node).capacity;
        let running = n.running.map_or(0.0, |(_, end)| (end - self.now).max(0.0));
        running + (n.queued_work + n.inflight_work) / cap
    }

    fn trust_rate(&self, node: usize) -> f64 {
        let t = self.trust[node];
        if t.confirmed == 0 {
            0.0
        } else {
            t.detected as f64 / t.confirmed as f64
        }
    }

    fn observe_state(&self, j: usize) -> Vec<f64> {
        let job = &self.jobs[j];
        let topo = &self.sc.topology;
        let a_n = topo.action_count();
        let d = job.inst.relative_deadline();
        let mut s = Vec::with_capacity(2 * a_n + 2);
        for a in 0..a_n {
            let node = topo.target_node(job.device, a);
            s.push((self.backlog_seconds(node) / d).min(1.0));
        }
        for a in 0..a_n {
            s.push(if a == 0 || a == a_n - 1 {
                0.0
            } else {
                self.trust_rate(topo.target_node(job.device, a))
            });
        }
        s.push(job.inst.size / self.sc.max_size);
        s.push(((job.inst.absolute_deadline - self.now) / d).clamp(0.0, 1.0));
        s
    }

    fn estimates(&self, j: usize) -> Vec<f64> {
        let job = &self.jobs[j];
        let topo = &self.sc.topology;
        (0..topo.action_count())
            .map(|a| {
                let node = topo.target_node(job.device, a);
                let slot = slot_parameters_for_size(job.inst.size, topo.node(node), topo.link(job.device, a))
                    .expect("validated topology");
                slot.tx_time + self.backlog_seconds(node) + slot.exec_time
            })
            .collect()
    }

    fn release(&mut self, j: usize) {
        let state = self.observe_state(j);
        let estimates = self.estimates(j);
        let action_count = self.sc.topology.action_count();
        let action = self.policy.decide(
            &Decision {
                state: &state,
                action_count,
                estimates: &estimates,
            },
            &mut self.policy_rng,
        );
        assert!(action < action_count, "policy returned out-of-range action {action}");
        self.decisions.push(PendingDecision {
            state,
            action,
            reward: None,
        });
        self.execute_offload(j, action);
    }

    fn execute_offload(&mut self, j: usize, action: usize) {
        let topo = &self.sc.topology;
        let job = &mut self.jobs[j];
        job.inst.advance(JobStatus::Offloaded).expect("fresh job is pending");
        job.action = action;
        job.node = topo.target_node(job.device, action);
        let link = topo.link(job.device, action);
        job.slot = slot_parameters_for_size(job.inst.size, topo.node(job.node), link).expect("validated topology");
        job.tx_energy_rate = link.map_or(0.0, |l| l.tx_power);
        let (node, size, tx) = (job.node, job.inst.size, job.slot.tx_time);
        if link.is_none() {
            self.enqueue(node, j);
        } else {
            self.nodes[node].inflight_work += size;
            self.schedule(self.now + tx, EventKind::TxComplete(j));
        }
    }

    fn tx_complete(&mut self, j: usize) {
        let job = &mut self.jobs[j];
        job.energy += job.tx_energy_rate * job.slot.tx_time;
        let (node, size) = (job.node, job.inst.size);
        self.nodes[node].inflight_work -= size;
        self.enqueue(node, j);
    }

    fn enqueue(&mut self, node: usize, j: usize) {
        self.jobs[j].arrival = Some(self.now);
        let n = &mut self.nodes[node];
        n.queue.push(j);
        n.queued_work += self.jobs[j].inst.size;
        self.try_start(node);
    }

    /// Non-preemptive EDF: when idle, serve the queued job with the
    /// earliest absolute deadline (ties by job id).
    fn try_start(&mut self, node: usize) {
        if self.nodes[node].running.is_some() || self.nodes[node].queue.is_empty() {
            return;
        }
        let jobs = &self.jobs;
        let q = &self.nodes[node].queue;
        let (pos, _) = q
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &b)| {
                jobs[a]
                    .inst
                    .absolute_deadline
                    .total_cmp(&jobs[b].inst.absolute_deadline)
                    .then(a.cmp(&b))
            })
            .unwrap();
        let j = self.nodes[node].queue.swap_remove(pos);
        let end = self.now + self.jobs[j].slot.exec_time;
        self.nodes[node].queued_work -= self.jobs[j].inst.size;
        self.nodes[node].running = Some((j, end));
        self.jobs[j].start = Some(self.now);
        self.schedule(end, EventKind::ExecComplete { node, job: j });
    }

    fn exec_complete(&mut self, node: usize, j: usize) {
        let busy = self.sc.topology.node(node).busy_power;
        self.jobs[j].energy += busy * self.jobs[j].slot.exec_time;
        self.nodes[node].running = None;
        self.finalize(j, true);
        self.try_start(node);
    }

    fn finalize(&mut self, j: usize, finished: bool) {
        let job = &self.jobs[j];
        let completion = self.now;
        let honest = Outcome {
            job: job.inst.id,
            action: job.action,
            executor: job.node,
            release_time: job.inst.release_time,
            absolute_deadline: job.inst.absolute_deadline,
            arrival_time: job.arrival,
            start_time: job.start,
            completion_time: completion,
            latency: completion - job.inst.release_time,
            energy: job.energy,
            deadline_met: finished && completion <= job.inst.absolute_deadline,
            corrupted: false,
            finished,
            payload: honest_payload(job.inst.id, job.node, job.inst.size),
        };
        let reported = if finished {
            let compromised = self.sc.topology.is_compromised(job.node);
            maybe_tamper(&honest, compromised, &self.sc.attack, &mut self.tamper_rng)
        } else {
            honest.clone()
        };
        let reward = compute_reward(&reported, &self.sc.reward, self.sc.energy_ref);
        self.decisions[j].reward = Some(reward);
        let status = reported.status();
        self.jobs[j].inst.advance(status).expect("offloaded job reaches a terminal status once");

        if let Some(miner) = self.miner.as_mut() {
            miner.submit(OffloadRecord {
                id: 0,
                job: reported.job,
                action: reported.action as u32,
                executor: reported.executor as u32,
                outcome_digest: outcome_digest(&reported),
                submit_time: self.now,
                record_deadline: reported.absolute_deadline,
                confirmed_time: None,
            });
        }
        self.outcomes[j] = Some(reported);
        self.honest[j] = Some(honest);
        self.try_mine();
    }

    fn try_mine(&mut self) {
        let Some(miner) = self.miner.as_mut() else {
            return;
        };
        if let Some(m) = miner.try_start(self.now) {
            self.miner_free_at = m.mined_at;
            self.schedule(m.mined_at, EventKind::BlockMined);
            self.schedule(m.confirmed_at, EventKind::BlockValidated(m.index as usize));
        }
    }

    fn block_validated(&mut self, b: usize) {
        let Some(miner) = self.miner.as_ref() else {
            return;
        };
        for r in &miner.chain.blocks[b].transactions {
            let honest = self.honest[r.job as usize].as_ref().expect("recorded jobs are finalized");
            let t = &mut self.trust[r.executor as usize];
            t.confirmed += 1;
            if outcome_digest(honest) != r.outcome_digest {
                t.detected += 1;
            }
        }
    }

    fn end_episode(&mut self) {
        for j in 0..self.jobs.len() {
            if self.outcomes[j].is_some() {
                continue;
            }
            let job = &mut self.jobs[j];
            if job.inst.status == JobStatus::Pending {
                // unreachable: releases at the horizon precede EpisodeEnd
                continue;
            }
            // partial work done by the horizon
            let tx_start = job.inst.release_time;
            if job.arrival.is_none() && job.tx_energy_rate > 0.0 {
                job.energy += job.tx_energy_rate * (self.now - tx_start).clamp(0.0, job.slot.tx_time);
            }
            if let Some(start) = job.start {
                job.energy += self.sc.topology.node(job.node).busy_power * (self.now - start);
            }
            self.finalize(j, false);
        }
        let free_at = self.miner_free_at.max(self.now);
        if let Some(miner) = self.miner.as_mut() {
            // confirm the backlog after the horizon so every record is audited
            miner.drain(free_at);
        }
        self.flush_transitions(true);
    }

    /// Emits transitions whose reward and successor state are both known.
    fn flush_transitions(&mut self, end: bool) {
        let n = self.decisions.len();
        while self.flushed < n {
            let i = self.flushed;
            let Some(reward) = self.decisions[i].reward else {
                break;
            };
            let last = i + 1 == n;
            if last && !end {
                break;
            }
            let next_state = if last {
                vec![0.0; self.decisions[i].state.len()]
            } else {
                self.decisions[i + 1].state.clone()
            };
            let t = Transition {
                state: self.decisions[i].state.clone(),
                action: self.decisions[i].action,
                reward,
                next_state,
                done: last,
            };
            self.policy.observe(&t);
            self.transitions.push(t);
            self.flushed += 1;
        }
    }

    fn into_trace(self) -> EpisodeTrace {
        let outcomes: Vec<Outcome> = self.outcomes.into_iter().map(|o| o.expect("every job finalized")).collect();
        let honest: Vec<Outcome> = self.honest.into_iter().map(|o| o.expect("every job finalized")).collect();
        let chain = self.miner.map(|m| m.chain);
        let security = match &chain {
            Some(c) => audit(c, &honest, &outcomes, &self.sc.topology).expect("engine-built chain verifies"),
            None => SecurityReport {
                incidents: outcomes.iter().filter(|o| o.corrupted).count() as u64,
                ..SecurityReport::default()
            },
        };
        let metrics = RunMetrics::from_episode(&outcomes, &self.transitions, &security, chain.as_ref());
        EpisodeTrace {
            transitions: self.transitions,
            outcomes,
            honest,
            jobs: self.jobs.into_iter().map(|j| j.inst).collect(),
            security,
            metrics,
            chain,
        }
    }
}
