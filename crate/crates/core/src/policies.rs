//! Offloading policies: non-learning baselines and the trained Q-network.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{argmax, QNetwork, Transition};

/// Everything a policy may look at when a job is released.
#[derive(Debug, Clone, Copy)]
pub struct Decision<'a> {
    pub state: &'a [f64],
    pub action_count: usize,
    /// Per-action estimated completion delay:
    /// `tx_time + backlog / capacity + C_i` in seconds.
    pub estimates: &'a [f64],
}

pub trait Policy {
    fn name(&self) -> &str;

    /// Called at the start of every episode.
    fn reset(&mut self) {}

    /// Returns an action index `< ctx.action_count`.
    fn decide(&mut self, ctx: &Decision<'_>, rng: &mut ChaCha8Rng) -> usize;

    /// Completed transitions, in decision order.
    fn observe(&mut self, _transition: &Transition) {}
}

pub fn decide_random<R: Rng>(action_count: usize, rng: &mut R) -> usize {
    rng.random_range(0..action_count)
}

pub fn decide_round_robin(counter: u64, action_count: usize) -> usize {
    (counter % action_count as u64) as usize
}

/// Index of the smallest estimate; ties resolve to the lowest index.
pub fn decide_greedy(estimates: &[f64]) -> usize {
    let mut best = 0;
    for (i, e) in estimates.iter().enumerate() {
        if *e < estimates[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    RoundRobin,
    Greedy,
    LocalOnly,
    CloudOnly,
    Dqn,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Random,
        PolicyKind::RoundRobin,
        PolicyKind::Greedy,
        PolicyKind::LocalOnly,
        PolicyKind::CloudOnly,
        PolicyKind::Dqn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::RoundRobin => "round_robin",
            PolicyKind::Greedy => "greedy",
            PolicyKind::LocalOnly => "local_only",
            PolicyKind::CloudOnly => "cloud_only",
            PolicyKind::Dqn => "dqn",
        }
    }

    /// Builds a baseline policy; `Dqn` needs a network and returns `None`.
    pub fn baseline(self) -> Option<Box<dyn Policy + Send>> {
        Some(match self {
            PolicyKind::Random => Box::new(RandomPolicy),
            PolicyKind::RoundRobin => Box::new(RoundRobin::default()),
            PolicyKind::Greedy => Box::new(GreedyMinLatency),
            PolicyKind::LocalOnly => Box::new(LocalOnly),
            PolicyKind::CloudOnly => Box::new(CloudOnly),
            PolicyKind::Dqn => return None,
        })
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(&mut self, ctx: &Decision<'_>, rng: &mut ChaCha8Rng) -> usize {
        decide_random(ctx.action_count, rng)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RoundRobin {
    counter: u64,
}

impl Policy for RoundRobin {
    fn name(&self) -> &str {
        "round_robin"
    }

    fn reset(&mut self) {
        self.counter = 0;
    }

    fn decide(&mut self, ctx: &Decision<'_>, _rng: &mut ChaCha8Rng) -> usize {
        let a = decide_round_robin(self.counter, ctx.action_count);
        self.counter += 1;
        a
    }
}

/// Minimum estimated completion time; sees true backlogs, ignores trust.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyMinLatency;

impl Policy for GreedyMinLatency {
    fn name(&self) -> &str {
        "greedy"
    }

    fn decide(&mut self, ctx: &Decision<'_>, _rng: &mut ChaCha8Rng) -> usize {
        decide_greedy(ctx.estimates)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LocalOnly;

impl Policy for LocalOnly {
    fn name(&self) -> &str {
        "local_only"
    }

    fn decide(&mut self, _ctx: &Decision<'_>, _rng: &mut ChaCha8Rng) -> usize {
        0
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CloudOnly;

impl Policy for CloudOnly {
    fn name(&self) -> &str {
        "cloud_only"
    }

    fn decide(&mut self, ctx: &Decision<'_>, _rng: &mut ChaCha8Rng) -> usize {
        ctx.action_count - 1
    }
}

/// Greedy action of a trained Q-network.
#[derive(Debug, Clone)]
pub struct DqnPolicy {
    pub network: QNetwork,
}

impl Policy for DqnPolicy {
    fn name(&self) -> &str {
        "dqn"
    }

    fn decide(&mut self, ctx: &Decision<'_>, _rng: &mut ChaCha8Rng) -> usize {
        let q = self
            .network
            .forward(ctx.state)
            .expect("network input matches the scenario state length");
        argmax(&q).min(ctx.action_count - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;

    fn ctx<'a>(state: &'a [f64], estimates: &'a [f64]) -> Decision<'a> {
        Decision {
            state,
            action_count: estimates.len(),
            estimates,
        }
    }

    #[test]
    fn random_singleton_and_determinism() {
        let mut rng = seed::rng(1, 0);
        assert!((0..100).all(|_| decide_random(1, &mut rng) == 0));
        let mut a = seed::rng(9, 0);
        let mut b = seed::rng(9, 0);
        let xs: Vec<_> = (0..50).map(|_| decide_random(5, &mut a)).collect();
        let ys: Vec<_> = (0..50).map(|_| decide_random(5, &mut b)).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn random_is_uniform() {
        let mut rng = seed::rng(3, 0);
        let n = 50_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[decide_random(5, &mut rng)] += 1;
        }
        let sigma = (n as f64 * 0.2 * 0.8).sqrt();
        assert!(counts.iter().all(|&c| (c as f64 - 10_000.0).abs() <= 3.0 * sigma), "{counts:?}");
    }

    #[test]
    fn round_robin_cycles_and_resets() {
        let got: Vec<_> = (0..6).map(|c| decide_round_robin(c, 3)).collect();
        assert_eq!(got, vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(decide_round_robin(7, 5), 2);

        let mut rr = RoundRobin::default();
        let mut rng = seed::rng(0, 0);
        let est = [0.0; 3];
        let mut counts = [0usize; 3];
        for _ in 0..3000 {
            counts[rr.decide(&ctx(&[], &est), &mut rng)] += 1;
        }
        assert_eq!(counts, [1000, 1000, 1000]);
        rr.decide(&ctx(&[], &est), &mut rng);
        rr.reset();
        assert_eq!(rr.decide(&ctx(&[], &est), &mut rng), 0);
    }

    #[test]
    fn greedy_fixture() {
        // 3-target fixture: local (C=8), fog (tx 2.1 + C 2), cloud (tx 3 + C 0.5 + prop 1.5)
        let idle = [8.0, 4.1, 5.0];
        assert_eq!(decide_greedy(&idle), 1);
        // fog saturated with 6 s of backlog
        let saturated = [8.0, 10.1, 5.0];
        assert_eq!(decide_greedy(&saturated), 2);
        assert_eq!(decide_greedy(&[3.0]), 0);
        assert_eq!(decide_greedy(&[2.0, 2.0]), 0);
    }

    #[test]
    fn fixed_target_policies() {
        let mut rng = seed::rng(0, 0);
        let est = [1.0, 0.5, 0.2, 3.0];
        assert_eq!(LocalOnly.decide(&ctx(&[], &est), &mut rng), 0);
        assert_eq!(CloudOnly.decide(&ctx(&[], &est), &mut rng), 3);
        assert_eq!(GreedyMinLatency.decide(&ctx(&[], &est), &mut rng), 2);
    }

    #[test]
    fn dqn_policy_is_greedy_on_network() {
        let net = QNetwork::new(&[2, 4, 3], 5).unwrap();
        let s = [0.4, 0.1];
        let want = argmax(&net.forward(&s).unwrap());
        let mut p = DqnPolicy { network: net };
        let mut rng = seed::rng(0, 0);
        assert_eq!(p.decide(&ctx(&s, &[0.0; 3]), &mut rng), want);
    }

    #[test]
    fn names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.as_str().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("throttled".parse::<PolicyKind>().is_err());
        assert!(PolicyKind::Dqn.baseline().is_none());
    }

    proptest! {
        #[test]
        fn greedy_shift_invariant(est in prop::collection::vec(0.0f64..100.0, 1..8), c in 0.0f64..50.0) {
            let shifted: Vec<f64> = est.iter().map(|e| e + c).collect();
            let mut sorted = est.clone();
            sorted.sort_by(f64::total_cmp);
            if sorted.len() < 2 || sorted[1] - sorted[0] > 1e-9 {
                prop_assert_eq!(decide_greedy(&est), decide_greedy(&shifted));
            }
        }

        #[test]
        fn every_baseline_in_range(n in 1usize..10, seed_ in 0u64..1000) {
            let mut rng = seed::rng(seed_, 0);
            let est: Vec<f64> = (0..n).map(|i| (i * 7 % 5) as f64).collect();
            for k in PolicyKind::ALL {
                if let Some(mut p) = k.baseline() {
                    for _ in 0..5 {
                        prop_assert!(p.decide(&ctx(&[], &est), &mut rng) < n);
                    }
                }
            }
        }
    }
}
