//! Deep Q-learning agent built from scratch.

mod checkpoint;
mod network;
mod replay;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointMeta};
pub use network::{argmax, bellman_target, td_loss_and_grads, Gradients, Layer, QNetwork};
pub use replay::ReplayBuffer;
pub use train::{train, train_env, CurvePoint, DqnLearner, Environment, TrainOutcome};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Sim(#[from] crate::simcore::SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Epsilon-greedy choice. Greedy ties go to the lowest index; `epsilon == 0`
/// never touches `rng`.
pub fn select_action<R: Rng>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}

/// Deep copy of the online weights for use as the target network.
pub fn sync_target(online: &QNetwork) -> QNetwork {
    online.clone()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Gradient steps between target-network syncs.
    pub target_sync: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Decisions over which epsilon decays linearly; `None` means half of
    /// the expected total number of decisions.
    pub epsilon_decay_steps: Option<u64>,
    pub episodes: usize,
    /// Episode horizon in seconds; `None` uses the experiment horizon.
    pub horizon: Option<f64>,
    pub seed: u64,
    pub double_dqn: bool,
    pub hidden: Vec<usize>,
    pub replay_capacity: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            learning_rate: 1e-3,
            batch_size: 32,
            target_sync: 200,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: None,
            episodes: 100,
            horizon: None,
            seed: 0,
            double_dqn: false,
            hidden: vec![64, 64],
            replay_capacity: 50_000,
        }
    }
}

impl TrainingConfig {
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(0.0..1.0).contains(&self.gamma) {
            out.push(("gamma", format!("must lie in [0, 1) (got {})", self.gamma)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(("learning_rate", "must be finite and > 0".to_string()));
        }
        if self.batch_size == 0 {
            out.push(("batch_size", "must be > 0".to_string()));
        }
        if self.target_sync == 0 {
            out.push(("target_sync", "must be > 0".to_string()));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            out.push(("epsilon_start", "epsilons must lie in [0, 1]".to_string()));
        }
        if self.epsilon_end > self.epsilon_start {
            out.push(("epsilon_end", "must not exceed epsilon_start".to_string()));
        }
        if self.replay_capacity < self.batch_size {
            out.push(("replay_capacity", "must be >= batch_size".to_string()));
        }
        if self.hidden.contains(&0) {
            out.push(("hidden", "layer widths must be > 0".to_string()));
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0 && h.is_finite()) {
                out.push(("horizon", "must be finite and > 0".to_string()));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some((f, m)) => Err(AgentError::Config(format!("{f}: {m}"))),
        }
    }

    /// Linear decay from `epsilon_start` to `epsilon_end` over `decay_steps`.
    pub fn epsilon_at(&self, decision: u64, decay_steps: u64) -> f64 {
        if decay_steps == 0 || decision >= decay_steps {
            return self.epsilon_end;
        }
        let frac = decision as f64 / decay_steps as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    pub fn layer_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(&self.hidden);
        s.push(output);
        s
    }
}
