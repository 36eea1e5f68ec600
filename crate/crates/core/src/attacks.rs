//! Compromised fog nodes that corrupt results, and ledger-based auditing.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{hash_bytes, Chain, Verdict};
use crate::seed;
use crate::simcore::{outcome_digest, Outcome};
use crate::topology::Topology;

#[derive(Debug, Error, PartialEq)]
pub enum AuditError {
    #[error("chain failed verification at block {index}: {reason}")]
    Unverifiable { index: usize, reason: String },
    #[error("chain references unknown job {0}")]
    UnknownJob(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub compromised_fraction: f64,
    pub tamper_probability: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            compromised_fraction: 0.0,
            tamper_probability: 0.0,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        for (name, v) in [
            ("compromised_fraction", self.compromised_fraction),
            ("tamper_probability", self.tamper_probability),
        ] {
            if !(0.0..=1.0).contains(&v) {
                out.push((name, format!("must lie in [0, 1] (got {v})")));
            }
        }
        out
    }
}

/// Picks `round(fraction * N_fog)` distinct fog nodes uniformly at random.
pub fn mark_compromised(topology: &Topology, fraction: f64, seed: u64) -> BTreeSet<String> {
    let fraction = fraction.clamp(0.0, 1.0);
    let k = (fraction * topology.fog_count() as f64).round() as usize;
    if k == 0 {
        return BTreeSet::new();
    }
    let mut ids: Vec<&str> = topology.fog_nodes().iter().map(|n| n.id.as_str()).collect();
    let mut rng = seed::rng(seed, seed::TAG_ATTACK);
    ids.shuffle(&mut rng);
    ids.into_iter().take(k).map(str::to_string).collect()
}

/// Applies the attacker to an honestly computed outcome. Honest executors
/// never touch `rng`, so a run without compromised nodes draws nothing.
pub fn maybe_tamper<R: Rng>(outcome: &Outcome, compromised: bool, config: &AttackConfig, rng: &mut R) -> Outcome {
    if !compromised || !rng.random_bool(config.tamper_probability) {
        return outcome.clone();
    }
    let mut forged = outcome.payload.to_vec();
    forged.extend_from_slice(&rng.random::<u64>().to_le_bytes());
    let mut out = outcome.clone();
    out.payload = hash_bytes(&forged);
    out.corrupted = true;
    out.deadline_met = false;
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport {
    pub incidents: u64,
    pub detected: u64,
    pub per_node: BTreeMap<String, u64>,
}

/// Recomputes each confirmed record's outcome digest from the honest
/// outcomes (indexed by job id) and counts mismatches per executing node.
/// `incidents` is the ground-truth count of corrupted reported outcomes.
pub fn audit(
    chain: &Chain,
    honest: &[Outcome],
    reported: &[Outcome],
    topology: &Topology,
) -> Result<SecurityReport, AuditError> {
    if let Verdict::Bad { index, reason } = chain.verify() {
        return Err(AuditError::Unverifiable {
            index,
            reason: reason.to_string(),
        });
    }
    let mut report = SecurityReport {
        incidents: reported.iter().filter(|o| o.corrupted).count() as u64,
        ..SecurityReport::default()
    };
    for r in chain.records().filter(|r| r.confirmed_time.is_some()) {
        let truth = honest.get(r.job as usize).ok_or(AuditError::UnknownJob(r.job))?;
        if outcome_digest(truth) != r.outcome_digest {
            report.detected += 1;
            let node = topology
                .nodes()
                .get(r.executor as usize)
                .map_or_else(|| format!("#{}", r.executor), |n| n.id.clone());
            *report.per_node.entry(node).or_default() += 1;
        }
    }
    Ok(report)
}
