//! From-scratch DQN machinery, independent of the scheduling domain: a
//! three-layer fully connected Q-network (ReLU hidden layers, linear
//! output) with manual backpropagation, a ring replay buffer, a target
//! network, and the exponential epsilon schedule.
//!
//! Everything is `f64` and single-threaded per training run; distinct
//! seeded runs share nothing mutable.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RlError {
    #[error("shape mismatch: expected input of length {expected}, got {got}")]
    ShapeError { expected: usize, got: usize },
    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),
}

/// Hyperparameters of one DQN training run. None of these come from the
/// problem formulation; every value is a declared default, echoed into
/// each result record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnHyperparams {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Steps between target-network syncs.
    pub target_update_interval: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay: f64,
    /// Global gradient clip (L2 norm); `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub hidden_dims: (usize, usize),
    pub replay_capacity: usize,
    pub seed: u64,
}

impl Default for DqnHyperparams {
    fn default() -> Self {
        DqnHyperparams {
            gamma: 0.5,
            learning_rate: 0.05,
            batch_size: 32,
            target_update_interval: 200,
            epsilon_start: 0.9,
            epsilon_end: 0.05,
            epsilon_decay: 1000.0,
            grad_clip_norm: Some(1.0),
            hidden_dims: (128, 128),
            replay_capacity: 10_000,
            seed: 0,
        }
    }
}

impl DqnHyperparams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err("gamma must be in [0, 1]".into());
        }
        if !(0.0 <= self.epsilon_end
            && self.epsilon_end <= self.epsilon_start
            && self.epsilon_start <= 1.0)
        {
            return Err("need 0 <= epsilon_end <= epsilon_start <= 1".into());
        }
        if self.epsilon_decay <= 0.0 {
            return Err("epsilon_decay must be > 0".into());
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err("replay capacity must hold at least one batch".into());
        }
        Ok(())
    }
}

/// Exploration threshold after `step` global steps:
/// `eps_end + (eps_start - eps_end) * exp(-step / eps_decay)`.
/// Monotone non-increasing, bounded in `[eps_end, eps_start]`.
pub fn epsilon_threshold(step: u64, hyper: &DqnHyperparams) -> f64 {
    hyper.epsilon_end
        + (hyper.epsilon_start - hyper.epsilon_end) * (-(step as f64) / hyper.epsilon_decay).exp()
}

/// Three-layer fully connected Q-network. Weights are row-major
/// `out x in`; hidden activations are rectified-linear, the output layer
/// is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub input_dim: usize,
    pub hidden_dims: (usize, usize),
    pub output_dim: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: Vec<f64>,
}

impl QNetwork {
    /// Seeded initialization: weights and biases uniform in
    /// +-1/sqrt(fan_in) of their layer.
    pub fn new(
        input_dim: usize,
        hidden_dims: (usize, usize),
        output_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (h1, h2) = hidden_dims;
        let init = |count: usize, fan_in: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
            let limit = 1.0 / (fan_in as f64).sqrt();
            (0..count).map(|_| rng.random_range(-limit..=limit)).collect()
        };
        QNetwork {
            input_dim,
            hidden_dims,
            output_dim,
            w1: init(h1 * input_dim, input_dim, rng),
            b1: init(h1, input_dim, rng),
            w2: init(h2 * h1, h1, rng),
            b2: init(h2, h1, rng),
            w3: init(output_dim * h2, h2, rng),
            b3: init(output_dim, h2, rng),
        }
    }

    /// All-zero parameters; forward output is identically zero.
    pub fn zeroed(input_dim: usize, hidden_dims: (usize, usize), output_dim: usize) -> Self {
        let (h1, h2) = hidden_dims;
        QNetwork {
            input_dim,
            hidden_dims,
            output_dim,
            w1: vec![0.0; h1 * input_dim],
            b1: vec![0.0; h1],
            w2: vec![0.0; h2 * h1],
            b2: vec![0.0; h2],
            w3: vec![0.0; output_dim * h2],
            b3: vec![0.0; output_dim],
        }
    }

    /// Zero weights with the output biases set to `values`: the network
    /// then computes the constant vector `values` for every input. Handy
    /// for forcing a known Q-table in tests.
    pub fn with_constant_output(
        input_dim: usize,
        hidden_dims: (usize, usize),
        values: &[f64],
    ) -> Self {
        let mut net = Self::zeroed(input_dim, hidden_dims, values.len());
        net.b3.copy_from_slice(values);
        net
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, RlError> {
        if input.len() != self.input_dim {
            return Err(RlError::ShapeError { expected: self.input_dim, got: input.len() });
        }
        Ok(self.forward_cached(input).out)
    }

    fn forward_cached(&self, x: &[f64]) -> ForwardCache {
        let (h1, h2) = self.hidden_dims;
        let mut a1 = vec![0.0; h1];
        for i in 0..h1 {
            let row = &self.w1[i * self.input_dim..(i + 1) * self.input_dim];
            let z = self.b1[i] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            a1[i] = if z > 0.0 { z } else { 0.0 };
        }
        let mut a2 = vec![0.0; h2];
        for i in 0..h2 {
            let row = &self.w2[i * h1..(i + 1) * h1];
            let z = self.b2[i] + row.iter().zip(&a1).map(|(w, v)| w * v).sum::<f64>();
            a2[i] = if z > 0.0 { z } else { 0.0 };
        }
        let mut out = vec![0.0; self.output_dim];
        for i in 0..self.output_dim {
            let row = &self.w3[i * h2..(i + 1) * h2];
            out[i] = self.b3[i] + row.iter().zip(&a2).map(|(w, v)| w * v).sum::<f64>();
        }
        ForwardCache { x: x.to_vec(), a1, a2, out }
    }

    /// Index of the maximal Q value, lowest index on ties. `mask[i] =
    /// false` excludes an action by treating its value as -inf; returns
    /// `None` when everything is masked out.
    pub fn argmax_masked(values: &[f64], mask: impl Fn(usize) -> bool) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (i, &v) in values.iter().enumerate() {
            if !mask(i) {
                continue;
            }
            let better = match best {
                None => true,
                Some((bv, _)) => v > bv,
            };
            if better {
                best = Some((v, i));
            }
        }
        best.map(|(_, i)| i)
    }

    fn param_views(&self) -> [&[f64]; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    fn param_views_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.param_views().iter().map(|v| v.len()).sum()
    }

    /// Flat parameter access in (w1, b1, w2, b2, w3, b3) order; used by
    /// finite-difference checks.
    pub fn get_param(&self, mut idx: usize) -> f64 {
        for view in self.param_views() {
            if idx < view.len() {
                return view[idx];
            }
            idx -= view.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for view in self.param_views_mut() {
            if idx < view.len() {
                view[idx] = value;
                return;
            }
            idx -= view.len();
        }
        panic!("parameter index out of range");
    }

    fn apply_sgd(&mut self, grads: &Gradients, lr: f64) {
        let views = self.param_views_mut();
        for (view, g) in views.into_iter().zip(grads.views()) {
            for (w, dw) in view.iter_mut().zip(g) {
                *w -= lr * dw;
            }
        }
    }
}

struct ForwardCache {
    x: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    out: Vec<f64>,
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct Gradients {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: Vec<f64>,
}

impl Gradients {
    fn zeros_like(net: &QNetwork) -> Self {
        Gradients {
            w1: vec![0.0; net.w1.len()],
            b1: vec![0.0; net.b1.len()],
            w2: vec![0.0; net.w2.len()],
            b2: vec![0.0; net.b2.len()],
            w3: vec![0.0; net.w3.len()],
            b3: vec![0.0; net.b3.len()],
        }
    }

    fn views(&self) -> [&[f64]; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    pub fn get(&self, mut idx: usize) -> f64 {
        for view in self.views() {
            if idx < view.len() {
                return view[idx];
            }
            idx -= view.len();
        }
        panic!("gradient index out of range");
    }

    fn l2_norm(&self) -> f64 {
        self.views()
            .iter()
            .flat_map(|v| v.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, factor: f64) {
        for view in [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ] {
            for g in view.iter_mut() {
                *g *= factor;
            }
        }
    }
}

/// Accumulates the gradient of `upstream * out[action]` into `grads`.
fn backprop_into(net: &QNetwork, cache: &ForwardCache, action: usize, upstream: f64, grads: &mut Gradients) {
    let (h1, h2) = net.hidden_dims;
    // Output layer: only the taken action carries gradient.
    let mut da2 = vec![0.0; h2];
    for k in 0..h2 {
        grads.w3[action * h2 + k] += upstream * cache.a2[k];
        da2[k] = upstream * net.w3[action * h2 + k];
    }
    grads.b3[action] += upstream;
    // Second hidden layer.
    let mut da1 = vec![0.0; h1];
    for k in 0..h2 {
        if cache.a2[k] <= 0.0 {
            continue;
        }
        let dz = da2[k];
        for j in 0..h1 {
            grads.w2[k * h1 + j] += dz * cache.a1[j];
            da1[j] += dz * net.w2[k * h1 + j];
        }
        grads.b2[k] += dz;
    }
    // First hidden layer.
    for j in 0..h1 {
        if cache.a1[j] <= 0.0 {
            continue;
        }
        let dz = da1[j];
        for i in 0..net.input_dim {
            grads.w1[j * net.input_dim + i] += dz * cache.x[i];
        }
        grads.b1[j] += dz;
    }
}

/// Mean-squared-error loss of the network's predictions on the taken
/// actions against fixed targets, plus its analytic gradient. This is
/// the exact objective one TD step descends, so the finite-difference
/// check exercises the same code path as training.
pub fn batch_loss_and_gradients(
    net: &QNetwork,
    samples: &[(&[f64], usize, f64)],
) -> (f64, Gradients) {
    let n = samples.len() as f64;
    let mut grads = Gradients::zeros_like(net);
    let mut loss = 0.0;
    for (state, action, target) in samples {
        let cache = net.forward_cached(state);
        let diff = cache.out[*action] - target;
        loss += diff * diff;
        backprop_into(net, &cache, *action, 2.0 * diff / n, &mut grads);
    }
    (loss / n, grads)
}

/// One stored environment transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// One temporal-difference step: targets `r + gamma * max_a'
/// Q_target(s', a')` (just `r` on terminal transitions), MSE loss on the
/// taken actions, one clipped SGD step on the policy network. Returns
/// the pre-step loss.
pub fn td_train_step(
    policy: &mut QNetwork,
    target: &QNetwork,
    batch: &[&Transition],
    hyper: &DqnHyperparams,
) -> f64 {
    debug_assert!(!batch.is_empty());
    let targets: Vec<f64> = batch
        .iter()
        .map(|tr| {
            if tr.terminal {
                tr.reward
            } else {
                let q_next = target.forward_cached(&tr.next_state).out;
                let max = q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                tr.reward + hyper.gamma * max
            }
        })
        .collect();
    let samples: Vec<(&[f64], usize, f64)> = batch
        .iter()
        .zip(&targets)
        .map(|(tr, t)| (tr.state.as_slice(), tr.action, *t))
        .collect();
    let (loss, mut grads) = batch_loss_and_gradients(policy, &samples);
    if let Some(clip) = hyper.grad_clip_norm {
        let norm = grads.l2_norm();
        if norm > clip {
            grads.scale(clip / norm);
        }
    }
    policy.apply_sgd(&grads, hyper.learning_rate);
    loss
}

/// Copies policy parameters into the target network; afterwards both
/// networks agree on every input.
pub fn sync_target(policy: &QNetwork, target: &mut QNetwork) {
    target.clone_from(policy);
}

/// Fixed-capacity ring of transitions; evicts oldest-first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer { capacity, items: Vec::with_capacity(capacity), next: 0 }
    }

    pub fn push(&mut self, tr: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(tr);
        } else {
            self.items[self.next] = tr;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Uniform sample without replacement within the batch.
    pub fn sample(&self, rng: &mut ChaCha8Rng, batch: usize) -> Vec<&Transition> {
        debug_assert!(batch <= self.items.len());
        rand::seq::index::sample(rng, self.items.len(), batch)
            .iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    net: QNetwork,
}

/// Versioned JSON parameter dump.
pub fn checkpoint_to_json(net: &QNetwork) -> String {
    serde_json::to_string(&Checkpoint { version: CHECKPOINT_VERSION, net: net.clone() })
        .expect("checkpoint serializes")
}

pub fn checkpoint_from_json(json: &str) -> Result<QNetwork, RlError> {
    let cp: Checkpoint =
        serde_json::from_str(json).map_err(|_| RlError::CheckpointVersion(0))?;
    if cp.version != CHECKPOINT_VERSION {
        return Err(RlError::CheckpointVersion(cp.version));
    }
    Ok(cp.net)
}
