use proptest::prelude::*;

use fogsim::attacks::AttackConfig;
use fogsim::ledger::LedgerConfig;
use fogsim::metrics::{compare, run_cell, run_experiment, ConfigError, ExperimentConfig, ExperimentError};
use fogsim::policies::{PolicyKind, RandomPolicy};
use fogsim::simcore::RewardWeights;
use fogsim::topology::{build_topology, DefaultLinks, LinkTemplate, NodeSpec, Tier, TopologyConfig};
use fogsim::workload::{ArrivalKind, TaskStream};
use fogsim::{run_episode, Scenario};

fn topology(n_iot: usize, n_fog: usize) -> TopologyConfig {
    let mut nodes = Vec::new();
    for i in 0..n_iot {
        nodes.push(NodeSpec::new(&format!("iot-{i}"), Tier::Iot, 1.0, 2.0, 0.5));
    }
    for i in 0..n_fog {
        nodes.push(NodeSpec::new(&format!("fog-{i}"), Tier::Fog, 2.0 + i as f64, 10.0, 2.0));
    }
    nodes.push(NodeSpec::new("cloud", Tier::Cloud, 16.0, 40.0, 10.0));
    TopologyConfig {
        nodes,
        links: vec![],
        default_links: DefaultLinks {
            fog: Some(LinkTemplate {
                bandwidth: 4.0,
                propagation: 0.1,
                tx_power: 1.0,
            }),
            cloud: Some(LinkTemplate {
                bandwidth: 4.0,
                propagation: 1.5,
                tx_power: 1.0,
            }),
        },
    }
}

fn experiment(policies: Vec<PolicyKind>, seeds: Vec<u64>) -> ExperimentConfig {
    ExperimentConfig {
        topology: topology(2, 2),
        streams: vec![
            TaskStream::periodic("a", 4.0, 4.0, 2.0, "iot-0"),
            TaskStream::periodic("b", 5.0, 3.0, 3.0, "iot-1"),
        ],
        policies,
        training: Default::default(),
        ledger: LedgerConfig {
            difficulty: 4,
            ..LedgerConfig::default()
        },
        attack: AttackConfig {
            compromised_fraction: 0.5,
            tamper_probability: 0.5,
            seed: 1,
        },
        reward: RewardWeights::default(),
        seeds,
        horizon: 60.0,
        feature_layout: 1,
    }
}

fn stream_strategy() -> impl Strategy<Value = Vec<TaskStream>> {
    prop::collection::vec((1u32..10, 1u32..12, 1u32..12, 0usize..2, any::<bool>()), 1..5).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (t, d, s, src, poisson))| TaskStream {
                id: format!("s{i}"),
                period: t as f64,
                deadline: d as f64,
                size: s as f64 / 2.0,
                source: format!("iot-{src}"),
                arrival: if poisson { ArrivalKind::Poisson } else { ArrivalKind::Periodic },
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn queue_discipline_and_causality(streams in stream_strategy(), seed in 0u64..1000, frac in 0.0f64..1.0) {
        let topo = build_topology(&topology(2, 3)).unwrap();
        let attack = AttackConfig { compromised_fraction: frac, tamper_probability: 0.5, seed };
        let ledger = LedgerConfig { difficulty: 2, ..LedgerConfig::default() };
        let sc = Scenario::new(&topo, streams, ledger, attack, RewardWeights::default(), 40.0).unwrap();
        let tr = run_episode(&sc, &mut RandomPolicy, seed);

        prop_assert_eq!(tr.transitions.len(), tr.jobs.len());
        prop_assert!(tr.jobs.iter().all(|j| j.status.is_terminal()));
        for o in &tr.outcomes {
            if let Some(a) = o.arrival_time {
                prop_assert!(a >= o.release_time);
            }
            if let Some(s) = o.start_time {
                prop_assert!(s >= o.arrival_time.unwrap());
                prop_assert!(o.completion_time >= s);
            }
            prop_assert!(!o.deadline_met || (o.finished && o.completion_time <= o.absolute_deadline && !o.corrupted));
            prop_assert!(!o.corrupted || sc.topology().is_compromised(o.executor));
        }
        // at every service start, no job already waiting at that node had
        // an earlier (deadline, id)
        for j in &tr.outcomes {
            let Some(start) = j.start_time else { continue };
            for k in &tr.outcomes {
                if k.executor != j.executor || k.job == j.job {
                    continue;
                }
                let waiting = k.arrival_time.is_some_and(|a| a < start)
                    && k.start_time.is_none_or(|s| s > start);
                if waiting {
                    prop_assert!(
                        (k.absolute_deadline, k.job) > (j.absolute_deadline, j.job),
                        "job {} started at {} ahead of job {}", j.job, start, k.job
                    );
                }
            }
        }
        // non-preemptive, one job at a time per node
        let mut spans: Vec<(usize, f64, f64)> = tr.outcomes.iter()
            .filter_map(|o| o.start_time.map(|s| (o.executor, s, o.completion_time)))
            .collect();
        spans.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        for w in spans.windows(2) {
            if w[0].0 == w[1].0 {
                prop_assert!(w[1].1 >= w[0].2);
            }
        }
        let m = &tr.metrics;
        prop_assert_eq!(m.completed + m.misses + m.corrupted, m.scheduled);
        prop_assert!(m.sched_ratio.is_nan() || (0.0..=1.0).contains(&m.sched_ratio));
    }
}

#[test]
fn row_count_and_repeatability() {
    let cfg = experiment(vec![PolicyKind::Random], vec![1, 2, 3]);
    let a = run_experiment(&cfg).unwrap();
    assert_eq!(a.rows.len(), 3);
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(a.rows.iter().all(|r| r.config_digest == cfg.digest_hex()));
}

#[test]
fn rows_sorted_and_solo_reproducible() {
    let cfg = experiment(vec![PolicyKind::RoundRobin, PolicyKind::Greedy, PolicyKind::CloudOnly], vec![9, 4]);
    let table = run_experiment(&cfg).unwrap();
    let keys: Vec<(&str, u64)> = table.rows.iter().map(|r| (r.policy.as_str(), r.seed)).collect();
    assert_eq!(
        keys,
        vec![("cloud_only", 4), ("cloud_only", 9), ("greedy", 4), ("greedy", 9), ("round_robin", 4), ("round_robin", 9)]
    );
    let sc = cfg.scenario().unwrap();
    let solo = run_cell(&sc, PolicyKind::Greedy, None, 9, &cfg.digest_hex());
    assert_eq!(solo.csv_line(), table.rows[3].csv_line());

    let c = compare(&table, PolicyKind::Greedy, PolicyKind::Greedy).unwrap();
    assert!(c.deltas.iter().all(|d| d.mean == 0.0 && d.std == 0.0));
}

#[test]
fn local_only_on_capable_device() {
    // device capacity 1, one stream needing 0.5 s every 2 s; the horizon is
    // off the release grid so the last job can finish inside it
    let mut cfg = experiment(vec![PolicyKind::LocalOnly], vec![1, 2]);
    cfg.horizon = 59.0;
    cfg.topology = topology(1, 1);
    cfg.streams = vec![TaskStream::periodic("s", 2.0, 2.0, 0.5, "iot-0")];
    let table = run_experiment(&cfg).unwrap();
    for r in &table.rows {
        assert_eq!(r.metrics.sched_ratio, 1.0);
        assert_eq!(r.metrics.incidents, 0);
        assert_eq!(r.metrics.mean_latency, 0.5);
    }
}

#[test]
fn config_errors_carry_paths() {
    let good = serde_json::to_string(&experiment(vec![PolicyKind::Random], vec![1])).unwrap();
    assert!(ExperimentConfig::from_json(&good).is_ok());

    let typo = good.replace("\"tamper_probability\"", "\"tamper_prob\"");
    let err = ExperimentConfig::from_json(&typo).unwrap_err().to_string();
    assert!(err.starts_with("attack"), "{err}");

    let wrong_type = good.replace("\"horizon\":60.0", "\"horizon\":\"long\"");
    let err = ExperimentConfig::from_json(&wrong_type).unwrap_err().to_string();
    assert!(err.starts_with("horizon"), "{err}");

    let mut cfg = experiment(vec![PolicyKind::Random], vec![]);
    cfg.streams[0].source = "iot-9".into();
    cfg.ledger.hash_rate = 0.0;
    let err = cfg.scenario().unwrap_err();
    let ConfigError::Invalid(msgs) = &err else { panic!("{err}") };
    let text = msgs.join("\n");
    assert!(text.contains("seeds"), "{text}");
    assert!(text.contains("streams[0]"), "{text}");
    assert!(text.contains("ledger.hash_rate"), "{text}");
    assert!(matches!(run_experiment(&cfg), Err(ExperimentError::Config(_))));
}

#[test]
fn digest_tracks_content() {
    let a = experiment(vec![PolicyKind::Random], vec![1]);
    let mut b = a.clone();
    assert_eq!(a.digest(), b.digest());
    b.horizon = 61.0;
    assert_ne!(a.digest(), b.digest());
}
