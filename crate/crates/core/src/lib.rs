//! Discrete-event simulation of task offloading across an IoT/fog/cloud
//! hierarchy.
//!
//! The crate is organised bottom-up:
//!
//! - [`workload`]: task streams, released jobs and slot-level parameters.
//! - [`topology`]: the three-tier node/link graph and the action space.
//! - [`schedulability`]: demand-bound function, interval load and admission.
//! - [`ledger`]: hash-chained, proof-of-work ledger of offloading records.
//! - [`attacks`]: compromised fog nodes and digest-based auditing.
//! - [`agent`]: a from-scratch deep Q-network and its training loop.
//! - [`policies`]: non-learning baselines and the trained-network policy.
//! - [`simcore`]: the event engine tying everything together.
//! - [`metrics`]: run metrics, experiment configs and result tables.

pub mod agent;
pub mod attacks;
pub mod ledger;
pub mod metrics;
pub mod policies;
pub mod schedulability;
pub mod seed;
pub mod simcore;
pub mod topology;
pub mod workload;

pub use metrics::{ExperimentConfig, RunMetrics};
pub use simcore::{run_episode, EpisodeTrace, Scenario};
pub use topology::{OffloadTarget, Topology};
pub use workload::{TaskInstance, TaskStream};
