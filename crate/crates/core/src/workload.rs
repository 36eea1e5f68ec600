//! Task streams, released job instances and slot-level parameters.

use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::topology::{LinkSpec, NodeSpec};

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("job {job}: illegal status transition {from:?} -> {to:?}")]
    Transition {
        job: u64,
        from: JobStatus,
        to: JobStatus,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalKind {
    #[default]
    Periodic,
    Poisson,
}

/// A recurring source of work: period `T_i`, relative deadline `D_i`,
/// size `S_i` in work units, released by one IoT device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskStream {
    pub id: String,
    pub period: f64,
    pub deadline: f64,
    pub size: f64,
    pub source: String,
    #[serde(default)]
    pub arrival: ArrivalKind,
}

impl TaskStream {
    pub fn periodic(id: &str, period: f64, deadline: f64, size: f64, source: &str) -> Self {
        Self {
            id: id.to_string(),
            period,
            deadline,
            size,
            source: source.to_string(),
            arrival: ArrivalKind::Periodic,
        }
    }

    /// Lists every violated field invariant (empty when valid).
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("period", self.period),
            ("deadline", self.deadline),
            ("size", self.size),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name} must be finite and > 0 (got {v})"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some(v) => Err(WorkloadError::Parameter(format!("stream {}: {v}", self.id))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobStatus {
    Pending,
    Offloaded,
    Completed,
    Missed,
    Corrupted,
}

impl JobStatus {
    fn rank(self) -> u8 {
        match self {
            JobStatus::Pending => 0,
            JobStatus::Offloaded => 1,
            _ => 2,
        }
    }

    pub fn is_terminal(self) -> bool {
        self.rank() == 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: u64,
    pub stream: String,
    pub release_time: f64,
    pub absolute_deadline: f64,
    pub size: f64,
    pub status: JobStatus,
}

impl TaskInstance {
    pub fn relative_deadline(&self) -> f64 {
        self.absolute_deadline - self.release_time
    }

    /// Moves the job forward along Pending → Offloaded → terminal.
    pub fn advance(&mut self, to: JobStatus) -> Result<(), WorkloadError> {
        let ok = match self.status {
            JobStatus::Pending => to == JobStatus::Offloaded,
            JobStatus::Offloaded => to.is_terminal(),
            _ => false,
        };
        if !ok {
            return Err(WorkloadError::Transition {
                job: self.id,
                from: self.status,
                to,
            });
        }
        self.status = to;
        Ok(())
    }
}

/// Releases the jobs of `stream` on `[0, horizon]`, sorted by release time.
///
/// Periodic streams release synchronously at `k * T` for
/// `k = 0..=floor(horizon / T)`. Poisson streams draw exponential
/// inter-arrival gaps with mean `T` from a generator seeded by `rng_seed`.
/// Job ids are the per-stream release index.
pub fn generate_jobs(
    stream: &TaskStream,
    horizon: f64,
    rng_seed: u64,
) -> Result<Vec<TaskInstance>, WorkloadError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(WorkloadError::Parameter(format!(
            "horizon must be finite and > 0 (got {horizon})"
        )));
    }
    stream.validate()?;

    let releases: Vec<f64> = match stream.arrival {
        ArrivalKind::Periodic => {
            let count = (horizon / stream.period).floor() as u64 + 1;
            (0..count).map(|k| k as f64 * stream.period).collect()
        }
        ArrivalKind::Poisson => {
            let mut rng = seed::rng(rng_seed, seed::TAG_WORKLOAD);
            let gap = Exp::new(1.0 / stream.period)
                .map_err(|e| WorkloadError::Parameter(e.to_string()))?;
            let mut t = 0.0;
            let mut out = Vec::new();
            loop {
                t += gap.sample(&mut rng);
                if t > horizon {
                    break;
                }
                out.push(t);
            }
            out
        }
    };

    Ok(releases
        .into_iter()
        .enumerate()
        .map(|(k, release)| TaskInstance {
            id: k as u64,
            stream: stream.id.clone(),
            release_time: release,
            absolute_deadline: release + stream.deadline,
            size: stream.size,
            status: JobStatus::Pending,
        })
        .collect())
}

/// Execution and transmission budget of one job of a stream on a given
/// node, reached over a given link (`None` for local execution).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotParams {
    pub exec_time: f64,
    pub tx_time: f64,
    pub total_budget: f64,
}

pub fn slot_parameters(
    stream: &TaskStream,
    node: &NodeSpec,
    link: Option<&LinkSpec>,
) -> Result<SlotParams, WorkloadError> {
    slot_parameters_for_size(stream.size, node, link)
}

pub fn slot_parameters_for_size(
    size: f64,
    node: &NodeSpec,
    link: Option<&LinkSpec>,
) -> Result<SlotParams, WorkloadError> {
    if !(node.capacity > 0.0) {
        return Err(WorkloadError::Parameter(format!(
            "node {} has non-positive capacity",
            node.id
        )));
    }
    let exec_time = size / node.capacity;
    let tx_time = match link {
        None => 0.0,
        Some(l) => {
            if !(l.bandwidth > 0.0) {
                return Err(WorkloadError::Parameter(format!(
                    "link {}->{} has non-positive bandwidth",
                    l.from, l.to
                )));
            }
            size / l.bandwidth + l.propagation
        }
    };
    Ok(SlotParams {
        exec_time,
        tx_time,
        total_budget: tx_time + exec_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Tier;
    use proptest::prelude::*;

    fn node(capacity: f64) -> NodeSpec {
        NodeSpec::new("fog-1", Tier::Fog, capacity, 10.0, 2.0)
    }

    fn link(bandwidth: f64, propagation: f64) -> LinkSpec {
        LinkSpec::new("iot-1", "fog-1", bandwidth, propagation, 1.0)
    }

    #[test]
    fn periodic_releases() {
        let s = TaskStream::periodic("s", 10.0, 12.0, 1.0, "iot-1");
        let jobs = generate_jobs(&s, 25.0, 0).unwrap();
        let rel: Vec<f64> = jobs.iter().map(|j| j.release_time).collect();
        let dl: Vec<f64> = jobs.iter().map(|j| j.absolute_deadline).collect();
        assert_eq!(rel, vec![0.0, 10.0, 20.0]);
        assert_eq!(dl, vec![12.0, 22.0, 32.0]);
    }

    #[test]
    fn periodic_includes_horizon_endpoint() {
        let s = TaskStream::periodic("s", 10.0, 12.0, 1.0, "iot-1");
        assert_eq!(generate_jobs(&s, 30.0, 0).unwrap().len(), 4);
    }

    #[test]
    fn zero_horizon_rejected() {
        let s = TaskStream::periodic("s", 10.0, 12.0, 1.0, "iot-1");
        assert!(matches!(
            generate_jobs(&s, 0.0, 0),
            Err(WorkloadError::Parameter(_))
        ));
    }

    #[test]
    fn poisson_count_within_three_sigma() {
        let mut s = TaskStream::periodic("s", 10.0, 12.0, 1.0, "iot-1");
        s.arrival = ArrivalKind::Poisson;
        let n = generate_jobs(&s, 10_000.0, 1).unwrap().len() as f64;
        assert!((n - 1000.0).abs() <= 3.0 * 1000f64.sqrt(), "count {n}");
    }

    #[test]
    fn poisson_seeded() {
        let mut s = TaskStream::periodic("s", 5.0, 12.0, 1.0, "iot-1");
        s.arrival = ArrivalKind::Poisson;
        let a = generate_jobs(&s, 500.0, 3).unwrap();
        let b = generate_jobs(&s, 500.0, 3).unwrap();
        let c = generate_jobs(&s, 500.0, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.windows(2).all(|w| w[0].release_time <= w[1].release_time));
    }

    #[test]
    fn status_transitions_are_monotone() {
        let s = TaskStream::periodic("s", 10.0, 12.0, 1.0, "iot-1");
        let mut job = generate_jobs(&s, 1.0, 0).unwrap().remove(0);
        assert!(job.advance(JobStatus::Completed).is_err());
        job.advance(JobStatus::Offloaded).unwrap();
        assert!(job.advance(JobStatus::Pending).is_err());
        job.advance(JobStatus::Missed).unwrap();
        assert!(job.advance(JobStatus::Completed).is_err());
    }

    #[test]
    fn slot_parameters_remote() {
        let s = TaskStream::periodic("s", 10.0, 12.0, 8.0, "iot-1");
        let p = slot_parameters(&s, &node(4.0), Some(&link(4.0, 0.1))).unwrap();
        assert_eq!(p.exec_time, 2.0);
        assert!((p.tx_time - 2.1).abs() < 1e-12);
        assert!((p.total_budget - 4.1).abs() < 1e-12);
    }

    #[test]
    fn slot_parameters_local() {
        let s = TaskStream::periodic("s", 10.0, 12.0, 8.0, "iot-1");
        let p = slot_parameters(&s, &node(8.0), None).unwrap();
        assert_eq!((p.exec_time, p.tx_time), (1.0, 0.0));
    }

    #[test]
    fn slot_parameters_huge_capacity() {
        let s = TaskStream::periodic("s", 10.0, 12.0, 1.0, "iot-1");
        let p = slot_parameters(&s, &node(1e9), Some(&link(4.0, 0.1))).unwrap();
        assert!((p.exec_time - 1e-9).abs() < 1e-18);
        assert!((p.total_budget - p.tx_time).abs() < 1e-8);
    }

    #[test]
    fn slot_parameters_zero_capacity_or_bandwidth() {
        let s = TaskStream::periodic("s", 10.0, 12.0, 1.0, "iot-1");
        assert!(slot_parameters(&s, &node(0.0), None).is_err());
        assert!(slot_parameters(&s, &node(1.0), Some(&link(0.0, 0.1))).is_err());
    }

    proptest! {
        #[test]
        fn budget_monotone_in_capacity_and_bandwidth(
            size in 0.1f64..100.0,
            cap in 0.1f64..100.0,
            bw in 0.1f64..100.0,
            bump in 1.0f64..10.0,
            prop in 0.0f64..1.0,
        ) {
            let s = TaskStream::periodic("s", 10.0, 12.0, size, "iot-1");
            let base = slot_parameters(&s, &node(cap), Some(&link(bw, prop))).unwrap();
            let faster_node = slot_parameters(&s, &node(cap * bump), Some(&link(bw, prop))).unwrap();
            let faster_link = slot_parameters(&s, &node(cap), Some(&link(bw * bump, prop))).unwrap();
            prop_assert!(faster_node.total_budget <= base.total_budget);
            prop_assert!(faster_link.total_budget <= base.total_budget);
        }

        #[test]
        fn periodic_generation_is_pure(period in 0.5f64..50.0, horizon in 1.0f64..500.0) {
            let s = TaskStream::periodic("s", period, period * 1.2, 1.0, "iot-1");
            let a = generate_jobs(&s, horizon, 1).unwrap();
            let b = generate_jobs(&s, horizon, 99).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.len() as f64, (horizon / period).floor() + 1.0);
            prop_assert!(a.iter().all(|j| j.absolute_deadline > j.release_time));
        }
    }
}
