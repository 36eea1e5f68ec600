//! Run metrics, experiment configuration and result tables.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{train, AgentError, CurvePoint, QNetwork, Transition, TrainingConfig};
use crate::attacks::{AttackConfig, SecurityReport};
use crate::ledger::{hash_bytes, Chain, Hash32, LedgerConfig};
use crate::policies::{DqnPolicy, Policy, PolicyKind};
use crate::simcore::{run_episode, Outcome, RewardWeights, Scenario, SimError, FEATURE_LAYOUT_VERSION};
use crate::topology::{build_topology, TopologyConfig, TopologyError};
use crate::workload::{JobStatus, TaskStream};

pub const CSV_HEADER: &str = "policy,seed,scheduled,completed,misses,sched_ratio,mean_latency,p95_latency,\
total_energy,incidents,detected,mean_confirm_latency,mean_reward,config_digest";

#[derive(Debug, Error, PartialEq)]
#[error("undefined metric: {0}")]
pub struct UndefinedMetric(pub &'static str);

/// `completed / scheduled`.
pub fn schedulability_ratio(completed: u64, scheduled: u64) -> Result<f64, UndefinedMetric> {
    if scheduled == 0 {
        return Err(UndefinedMetric("schedulability ratio with no scheduled jobs"));
    }
    Ok(completed as f64 / scheduled as f64)
}

/// Per-episode metrics. Undefined means (no samples) are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scheduled: u64,
    pub completed: u64,
    pub misses: u64,
    pub corrupted: u64,
    pub sched_ratio: f64,
    /// Over finished jobs.
    pub mean_latency: f64,
    pub p95_latency: f64,
    pub total_energy: f64,
    pub incidents: u64,
    pub detected: u64,
    pub mean_confirm_latency: f64,
    pub mean_reward: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Nearest-rank percentile, `q` in `(0, 1]`.
pub fn percentile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (q * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

impl RunMetrics {
    pub fn from_episode(
        outcomes: &[Outcome],
        transitions: &[Transition],
        security: &SecurityReport,
        chain: Option<&Chain>,
    ) -> Self {
        let count = |s: JobStatus| outcomes.iter().filter(|o| o.status() == s).count() as u64;
        let scheduled = outcomes.len() as u64;
        let completed = count(JobStatus::Completed);
        let latencies: Vec<f64> = outcomes.iter().filter(|o| o.finished).map(|o| o.latency).collect();
        Self {
            scheduled,
            completed,
            misses: count(JobStatus::Missed),
            corrupted: count(JobStatus::Corrupted),
            sched_ratio: schedulability_ratio(completed, scheduled).unwrap_or(f64::NAN),
            mean_latency: mean(latencies.iter().copied()),
            p95_latency: percentile(&latencies, 0.95),
            total_energy: outcomes.iter().map(|o| o.energy).sum(),
            incidents: security.incidents,
            detected: security.detected,
            mean_confirm_latency: chain.map_or(f64::NAN, |c| {
                mean(c.records().filter_map(|r| r.confirmation_latency().ok()))
            }),
            mean_reward: mean(transitions.iter().map(|t| t.reward)),
        }
    }

    /// Numeric columns in CSV order, for aggregation.
    pub fn columns(&self) -> [(&'static str, f64); 11] {
        [
            ("scheduled", self.scheduled as f64),
            ("completed", self.completed as f64),
            ("misses", self.misses as f64),
            ("sched_ratio", self.sched_ratio),
            ("mean_latency", self.mean_latency),
            ("p95_latency", self.p95_latency),
            ("total_energy", self.total_energy),
            ("incidents", self.incidents as f64),
            ("detected", self.detected as f64),
            ("mean_confirm_latency", self.mean_confirm_latency),
            ("mean_reward", self.mean_reward),
        ]
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("training failed: {0}")]
    Training(#[from] AgentError),
    #[error("writing results: {0}")]
    Io(#[from] std::io::Error),
}

/// One experiment, as a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: TopologyConfig,
    pub streams: Vec<TaskStream>,
    pub policies: Vec<PolicyKind>,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub ledger: LedgerConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub reward: RewardWeights,
    pub seeds: Vec<u64>,
    pub horizon: f64,
    /// Version of the observation layout the agent is trained on.
    #[serde(default = "current_layout")]
    pub feature_layout: u32,
}

fn current_layout() -> u32 {
    FEATURE_LAYOUT_VERSION
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: e.path().to_string(),
            message: e.into_inner().to_string(),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical JSON serialisation (fields in declaration
    /// order, no whitespace).
    pub fn digest(&self) -> Hash32 {
        hash_bytes(&serde_json::to_vec(self).expect("config serialises"))
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest())
    }

    /// Validates every section and builds the scenario. All problems are
    /// reported together, each prefixed with its field path.
    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let mut errs = Vec::new();
        if self.policies.is_empty() {
            errs.push("policies: must list at least one policy".to_string());
        }
        if self.feature_layout != FEATURE_LAYOUT_VERSION {
            errs.push(format!(
                "feature_layout: unsupported version {} (this build uses {FEATURE_LAYOUT_VERSION})",
                self.feature_layout
            ));
        }
        if self.seeds.is_empty() {
            errs.push("seeds: must list at least one seed".to_string());
        }
        if self.policies.contains(&PolicyKind::Dqn) {
            errs.extend(
                self.training
                    .violations()
                    .into_iter()
                    .map(|(f, m)| format!("training.{f}: {m}")),
            );
        }
        let topology = match build_topology(&self.topology) {
            Ok(t) => Some(t),
            Err(TopologyError::Invalid(v)) => {
                errs.extend(v.into_iter().map(|m| format!("topology: {m}")));
                None
            }
            Err(e) => {
                errs.push(format!("topology: {e}"));
                None
            }
        };
        if let Some(t) = &topology {
            match Scenario::new(
                t,
                self.streams.clone(),
                self.ledger.clone(),
                self.attack.clone(),
                self.reward,
                self.horizon,
            ) {
                Ok(s) if errs.is_empty() => return Ok(s),
                Ok(_) => {}
                Err(SimError::Invalid(v)) => errs.extend(v),
            }
        }
        Err(ConfigError::Invalid(errs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub policy: PolicyKind,
    pub seed: u64,
    pub metrics: RunMetrics,
    pub config_digest: String,
    pub wall_clock_s: f64,
}

fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x}")
    }
}

impl ResultRow {
    pub fn csv_line(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.policy,
            self.seed,
            m.scheduled,
            m.completed,
            m.misses,
            fmt_f64(m.sched_ratio),
            fmt_f64(m.mean_latency),
            fmt_f64(m.p95_latency),
            fmt_f64(m.total_energy),
            m.incidents,
            m.detected,
            fmt_f64(m.mean_confirm_latency),
            fmt_f64(m.mean_reward),
            self.config_digest
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub grad_steps: u64,
    pub wall_clock_s: f64,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultTable {
    pub config_digest: String,
    /// Sorted by `(policy name, seed)`.
    pub rows: Vec<ResultRow>,
    pub training: Option<TrainingSummary>,
}

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(s, "{}", r.csv_line()).unwrap();
        }
        s
    }

    /// Writes the header and then one flushed row at a time.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        w.flush()?;
        for r in &self.rows {
            writeln!(w, "{}", r.csv_line())?;
            w.flush()?;
        }
        Ok(())
    }

    /// Provenance sidecar: full config echo, digest, timings, training curve.
    pub fn sidecar_json(&self, config: &ExperimentConfig) -> serde_json::Value {
        serde_json::json!({
            "config": config,
            "config_digest": self.config_digest,
            "rows": self.rows.iter().map(|r| serde_json::json!({
                "policy": r.policy,
                "seed": r.seed,
                "wall_clock_s": r.wall_clock_s,
            })).collect::<Vec<_>>(),
            "training": self.training,
        })
    }

    pub fn rows_for(&self, policy: PolicyKind) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(move |r| r.policy == policy)
    }
}

/// Builds the policy for one cell. `network` is required for `Dqn`.
pub fn make_policy(kind: PolicyKind, network: Option<&QNetwork>) -> Option<Box<dyn Policy + Send>> {
    match kind {
        PolicyKind::Dqn => network.map(|n| Box::new(DqnPolicy { network: n.clone() }) as Box<dyn Policy + Send>),
        k => k.baseline(),
    }
}

/// Runs a single `(policy, seed)` cell. Batch rows equal solo runs.
pub fn run_cell(
    scenario: &Scenario,
    kind: PolicyKind,
    network: Option<&QNetwork>,
    seed: u64,
    config_digest: &str,
) -> ResultRow {
    let start = Instant::now();
    let mut policy = make_policy(kind, network).expect("dqn cells need a trained network");
    let trace = run_episode(scenario, policy.as_mut(), seed);
    ResultRow {
        policy: kind,
        seed,
        metrics: trace.metrics,
        config_digest: config_digest.to_string(),
        wall_clock_s: start.elapsed().as_secs_f64(),
    }
}

/// Validates the config, trains the DQN if requested (unless `network` is
/// given), then evaluates every `(policy, seed)` cell in parallel with
/// epsilon = 0.
pub fn run_experiment_with(config: &ExperimentConfig, network: Option<QNetwork>) -> Result<ResultTable, ExperimentError> {
    let scenario = config.scenario()?;
    let digest = config.digest_hex();
    let mut training = None;
    let network = match network {
        Some(n) => Some(n),
        None if config.policies.contains(&PolicyKind::Dqn) => {
            let start = Instant::now();
            let out = train(&scenario, &config.training)?;
            training = Some(TrainingSummary {
                grad_steps: out.grad_steps,
                wall_clock_s: start.elapsed().as_secs_f64(),
                curve: out.curve,
            });
            Some(out.network)
        }
        None => None,
    };
    if let Some(n) = &network {
        if n.input_len() != scenario.state_len() || n.output_len() != scenario.action_count() {
            return Err(ConfigError::Invalid(vec![format!(
                "network shape {:?} does not fit state length {} and {} actions",
                n.sizes(),
                scenario.state_len(),
                scenario.action_count()
            )])
            .into());
        }
    }

    let mut policies = config.policies.clone();
    policies.sort_by_key(|p| p.as_str());
    policies.dedup();
    let mut seeds = config.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let cells: Vec<(PolicyKind, u64)> = policies
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let mut rows: Vec<ResultRow> = cells
        .par_iter()
        .map(|&(p, s)| run_cell(&scenario, p, network.as_ref(), s, &digest))
        .collect();
    rows.sort_by(|a, b| a.policy.as_str().cmp(b.policy.as_str()).then(a.seed.cmp(&b.seed)));
    Ok(ResultTable {
        config_digest: digest,
        rows,
        training,
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable, ExperimentError> {
    run_experiment_with(config, None)
}

#[derive(Debug, Error, PartialEq)]
pub enum CompareError {
    #[error("policy `{0}` has no rows")]
    Missing(PolicyKind),
    #[error("seed sets differ: {baseline:?} vs {candidate:?}")]
    SeedMismatch { baseline: Vec<u64>, candidate: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricDelta {
    pub metric: &'static str,
    pub mean: f64,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub baseline: PolicyKind,
    pub candidate: PolicyKind,
    pub seeds: Vec<u64>,
    pub deltas: Vec<MetricDelta>,
}

impl Comparison {
    pub fn delta(&self, metric: &str) -> Option<&MetricDelta> {
        self.deltas.iter().find(|d| d.metric == metric)
    }
}

/// `candidate - baseline` per metric and seed, aggregated across seeds.
pub fn compare(table: &ResultTable, baseline: PolicyKind, candidate: PolicyKind) -> Result<Comparison, CompareError> {
    let collect = |p: PolicyKind| {
        let mut rows: Vec<&ResultRow> = table.rows_for(p).collect();
        rows.sort_by_key(|r| r.seed);
        rows
    };
    let b = collect(baseline);
    let c = collect(candidate);
    if b.is_empty() {
        return Err(CompareError::Missing(baseline));
    }
    if c.is_empty() {
        return Err(CompareError::Missing(candidate));
    }
    let bs: Vec<u64> = b.iter().map(|r| r.seed).collect();
    let cs: Vec<u64> = c.iter().map(|r| r.seed).collect();
    if bs != cs {
        return Err(CompareError::SeedMismatch {
            baseline: bs,
            candidate: cs,
        });
    }
    let n = bs.len();
    let names = b[0].metrics.columns().map(|(name, _)| name);
    let deltas = names
        .iter()
        .enumerate()
        .map(|(k, &metric)| {
            let d: Vec<f64> = b
                .iter()
                .zip(&c)
                .map(|(rb, rc)| rc.metrics.columns()[k].1 - rb.metrics.columns()[k].1)
                .collect();
            let m = d.iter().sum::<f64>() / n as f64;
            let std = if n < 2 {
                0.0
            } else {
                (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            MetricDelta { metric, mean: m, std }
        })
        .collect();
    Ok(Comparison {
        baseline,
        candidate,
        seeds: bs,
        deltas,
    })
}
