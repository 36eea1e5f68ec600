use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    select_action, sync_target, td_loss_and_grads, AgentError, QNetwork, ReplayBuffer, TrainingConfig, Transition,
};
use crate::policies::{Decision, Policy};
use crate::seed;
use crate::simcore::{run_episode, Scenario};

/// Online DQN learner: epsilon-greedy acting, replay, one SGD step per
/// stored transition once the buffer holds a full batch, and periodic
/// target syncs.
#[derive(Debug, Clone)]
pub struct DqnLearner {
    pub online: QNetwork,
    pub target: QNetwork,
    replay: ReplayBuffer,
    cfg: TrainingConfig,
    rng: ChaCha8Rng,
    decay_steps: u64,
    decisions: u64,
    grad_steps: u64,
    last_loss: f64,
}

impl DqnLearner {
    pub fn new(cfg: &TrainingConfig, state_len: usize, action_count: usize, decay_steps: u64) -> Result<Self, AgentError> {
        cfg.validate()?;
        let online = QNetwork::new(&cfg.layer_sizes(state_len, action_count), cfg.seed)?;
        Ok(Self {
            target: sync_target(&online),
            online,
            replay: ReplayBuffer::new(cfg.replay_capacity),
            cfg: cfg.clone(),
            rng: seed::rng(cfg.seed, seed::TAG_REPLAY),
            decay_steps,
            decisions: 0,
            grad_steps: 0,
            last_loss: f64::NAN,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.cfg.epsilon_at(self.decisions, self.decay_steps)
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    pub fn last_loss(&self) -> f64 {
        self.last_loss
    }

    pub fn act(&mut self, state: &[f64]) -> Result<usize, AgentError> {
        let eps = self.epsilon();
        let q = self.online.forward(state)?;
        self.decisions += 1;
        Ok(select_action(&q, eps, &mut self.rng))
    }

    pub fn learn(&mut self, t: Transition) -> Result<(), AgentError> {
        self.replay.push(t);
        if self.replay.len() < self.cfg.batch_size {
            return Ok(());
        }
        let batch = self.replay.sample(self.cfg.batch_size, &mut self.rng);
        let (loss, grads) = td_loss_and_grads(&self.online, &self.target, &batch, self.cfg.gamma, self.cfg.double_dqn)?;
        self.online.sgd_step(&grads, self.cfg.learning_rate)?;
        self.last_loss = loss;
        self.grad_steps += 1;
        if self.grad_steps.is_multiple_of(self.cfg.target_sync) {
            self.target = sync_target(&self.online);
        }
        Ok(())
    }
}

impl Policy for DqnLearner {
    fn name(&self) -> &str {
        "dqn-train"
    }

    fn decide(&mut self, ctx: &Decision<'_>, _rng: &mut ChaCha8Rng) -> usize {
        self.act(ctx.state).expect("state length fixed by the scenario")
    }

    fn observe(&mut self, t: &Transition) {
        self.learn(t.clone()).expect("transition shapes fixed by the scenario");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub mean_reward: f64,
    pub sched_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: QNetwork,
    pub curve: Vec<CurvePoint>,
    pub grad_steps: u64,
}

/// Trains on simulator episodes. Episode `e` runs with a seed derived
/// from `(cfg.seed, e)`, disjoint from raw evaluation seeds.
pub fn train(scenario: &Scenario, cfg: &TrainingConfig) -> Result<TrainOutcome, AgentError> {
    cfg.validate()?;
    let scenario = match cfg.horizon {
        Some(h) => scenario.with_horizon(h)?,
        None => scenario.clone(),
    };
    let decay = cfg
        .epsilon_decay_steps
        .unwrap_or_else(|| (0.5 * cfg.episodes as f64 * scenario.expected_jobs()).round() as u64);
    let mut learner = DqnLearner::new(cfg, scenario.state_len(), scenario.action_count(), decay)?;
    let mut curve = Vec::with_capacity(cfg.episodes);
    let base = seed::derive(cfg.seed, seed::TAG_EPISODE);
    for e in 0..cfg.episodes {
        let trace = run_episode(&scenario, &mut learner, seed::derive(base, e as u64));
        curve.push(CurvePoint {
            episode: e,
            mean_reward: trace.metrics.mean_reward,
            sched_ratio: trace.metrics.sched_ratio,
        });
    }
    Ok(TrainOutcome {
        grad_steps: learner.grad_steps,
        network: learner.online,
        curve,
    })
}

/// Minimal step-based environment, used to train against small MDPs with
/// known solutions.
pub trait Environment {
    fn state_len(&self) -> usize;
    fn action_count(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    /// Returns `(reward, next_state, done)`.
    fn step(&mut self, action: usize) -> (f64, Vec<f64>, bool);
}

/// Trains on `env` for `cfg.episodes` episodes of at most `steps` steps.
/// Truncation at `steps` is not terminal.
pub fn train_env<E: Environment>(env: &mut E, cfg: &TrainingConfig, steps: usize) -> Result<TrainOutcome, AgentError> {
    let decay = cfg
        .epsilon_decay_steps
        .unwrap_or((cfg.episodes * steps) as u64 / 2);
    let mut learner = DqnLearner::new(cfg, env.state_len(), env.action_count(), decay)?;
    let mut curve = Vec::with_capacity(cfg.episodes);
    let base = seed::derive(cfg.seed, seed::TAG_EPISODE);
    for e in 0..cfg.episodes {
        let mut state = env.reset(seed::derive(base, e as u64));
        let mut total = 0.0;
        let mut n = 0usize;
        for _ in 0..steps {
            let action = learner.act(&state)?;
            let (reward, next, done) = env.step(action);
            total += reward;
            n += 1;
            learner.learn(Transition {
                state,
                action,
                reward,
                next_state: next.clone(),
                done,
            })?;
            state = next;
            if done {
                break;
            }
        }
        curve.push(CurvePoint {
            episode: e,
            mean_reward: if n > 0 { total / n as f64 } else { f64::NAN },
            sched_ratio: f64::NAN,
        });
    }
    Ok(TrainOutcome {
        grad_steps: learner.grad_steps,
        network: learner.online,
        curve,
    })
}
