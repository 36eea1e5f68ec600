//! Fully connected Q-network with rectifier hidden layers, trained by
//! plain SGD on the squared temporal-difference error.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AgentError, Transition};
use crate::seed;

/// Dense layer computing `W x + b`; `weights` is row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let dot: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(dot + self.bias[o]);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    layers: Vec<Layer>,
}

/// Gradients share the network's shape.
pub type Gradients = QNetwork;

impl QNetwork {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialisation.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self, AgentError> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = seed::rng(seed, seed::TAG_INIT);
        for l in &mut net.layers {
            let bound = 1.0 / (l.inputs as f64).sqrt();
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self, AgentError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(AgentError::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, AgentError> {
        if layers.is_empty() {
            return Err(AgentError::Shape("network needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(AgentError::Shape(format!("layer {k} buffers do not match its shape")));
            }
            if k > 0 && layers[k - 1].outputs != l.inputs {
                return Err(AgentError::Shape(format!("layer {k} input does not match layer {}", k - 1)));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters in checkpoint order: per layer, weights then bias.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    fn check_input(&self, x: &[f64]) -> Result<(), AgentError> {
        if x.len() != self.input_len() {
            return Err(AgentError::Shape(format!(
                "state has {} features, network expects {}",
                x.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, AgentError> {
        Ok(self.activations(x)?.pop().unwrap())
    }

    /// Layer outputs `[x, h1, ..., q]`, hidden ones after the rectifier.
    fn activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, AgentError> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(l.outputs);
            l.apply(&acts[k], &mut out);
            if k < last {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            acts.push(out);
        }
        Ok(acts)
    }

    /// Accumulates `d(loss)/d(theta)` into `grads` given `d(loss)/d(q)`.
    fn backward(&self, acts: &[Vec<f64>], dq: Vec<f64>, grads: &mut Gradients) {
        let mut delta = dq;
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            let g = &mut grads.layers[k];
            let input = &acts[k];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut g.weights[o * l.inputs..(o + 1) * l.inputs];
                for (w, x) in row.iter_mut().zip(input) {
                    *w += d * x;
                }
                g.bias[o] += d;
            }
            if k == 0 {
                break;
            }
            let mut prev = vec![0.0; l.inputs];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    /// `theta <- theta - lr * grads`, elementwise.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<(), AgentError> {
        if grads.sizes() != self.sizes() {
            return Err(AgentError::Shape("gradient shape does not match network".into()));
        }
        for (p, g) in self.params_mut().zip(grads.params()) {
            *p -= lr * g;
        }
        Ok(())
    }

    fn zeros_like(&self) -> Gradients {
        Self::zeros(&self.sizes()).expect("shape already validated")
    }
}

/// Bootstrapped target: `r` when `done`, else `r + gamma * max(next_target)`,
/// or with `next_online` given (double DQN) `r + gamma * next_target[argmax next_online]`.
pub fn bellman_target(reward: f64, gamma: f64, next_target: &[f64], next_online: Option<&[f64]>, done: bool) -> f64 {
    if done {
        return reward;
    }
    let bootstrap = match next_online {
        Some(online) => next_target[argmax(online)],
        None => next_target.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    reward + gamma * bootstrap
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean squared TD error over `batch` and its gradient with respect to the
/// online weights; the target network is held constant.
pub fn td_loss_and_grads(
    online: &QNetwork,
    target: &QNetwork,
    batch: &[&Transition],
    gamma: f64,
    double_dqn: bool,
) -> Result<(f64, Gradients), AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    if online.sizes() != target.sizes() {
        return Err(AgentError::Shape("target network shape differs from online network".into()));
    }
    let n = batch.len() as f64;
    let mut grads = online.zeros_like();
    let mut loss = 0.0;
    for t in batch {
        if t.action >= online.output_len() {
            return Err(AgentError::Shape(format!("action {} out of range", t.action)));
        }
        let acts = online.activations(&t.state)?;
        let q = acts.last().unwrap();
        let next_t = target.forward(&t.next_state)?;
        let next_o = if double_dqn && !t.done {
            Some(online.forward(&t.next_state)?)
        } else {
            None
        };
        let y = bellman_target(t.reward, gamma, &next_t, next_o.as_deref(), t.done);
        let err = q[t.action] - y;
        loss += err * err;
        let mut dq = vec![0.0; q.len()];
        dq[t.action] = 2.0 * err / n;
        online.backward(&acts, dq, &mut grads);
    }
    Ok((loss / n, grads))
}
