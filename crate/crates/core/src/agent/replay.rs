//! Experience replay: n-step transition assembly, a ring buffer, and an
//! optional proportional prioritisation backed by a sum tree.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Arc<[f64]>,
    pub action: usize,
    /// Discounted reward over the `steps` accumulated steps.
    pub reward: f64,
    pub successor: Arc<[f64]>,
    /// The successor is terminal: no bootstrap.
    pub done: bool,
    pub steps: usize,
}

/// `Σ_{j<window} γ^j r_j`, plus `γ^window · bootstrap` unless terminated.
pub fn n_step_return(rewards: &[f64], bootstrap: f64, gamma: f64, terminated: bool) -> f64 {
    let mut total = 0.0;
    let mut discount = 1.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    if terminated {
        total
    } else {
        total + discount * bootstrap
    }
}

/// Turns a stream of one-step experience into n-step transitions.
#[derive(Debug, Clone)]
pub struct NStepBuilder {
    n: usize,
    gamma: f64,
    window: VecDeque<(Arc<[f64]>, usize, f64)>,
}

impl NStepBuilder {
    pub fn new(n: usize, gamma: f64) -> Self {
        Self { n, gamma, window: VecDeque::with_capacity(n) }
    }

    fn emit(&self, successor: &Arc<[f64]>, done: bool) -> Transition {
        let (obs, action, _) = &self.window[0];
        let rewards: Vec<f64> = self.window.iter().map(|t| t.2).collect();
        Transition {
            observation: Arc::clone(obs),
            action: *action,
            reward: n_step_return(&rewards, 0.0, self.gamma, true),
            successor: Arc::clone(successor),
            done,
            steps: rewards.len(),
        }
    }

    /// Records `(observation, action, reward, successor)`. Returns the
    /// transitions that became complete.
    pub fn push(&mut self, observation: Arc<[f64]>, action: usize, reward: f64, successor: &Arc<[f64]>, terminal: bool) -> Vec<Transition> {
        self.window.push_back((observation, action, reward));
        let mut out = Vec::new();
        if terminal {
            out.extend(self.flush(successor, true));
        } else if self.window.len() == self.n {
            out.push(self.emit(successor, false));
            self.window.pop_front();
        }
        out
    }

    /// Emits the partial windows left at the end of an episode.
    pub fn flush(&mut self, successor: &Arc<[f64]>, terminal: bool) -> Vec<Transition> {
        let mut out = Vec::with_capacity(self.window.len());
        while !self.window.is_empty() {
            out.push(self.emit(successor, terminal));
            self.window.pop_front();
        }
        out
    }
}

/// Binary tree whose internal nodes hold the sum of their children.
#[derive(Debug, Clone)]
pub struct SumTree {
    capacity: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.next_power_of_two();
        Self { capacity, nodes: vec![0.0; 2 * capacity] }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, index: usize) -> f64 {
        self.nodes[self.capacity + index]
    }

    pub fn set(&mut self, index: usize, value: f64) {
        let mut i = self.capacity + index;
        self.nodes[i] = value;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Leaf whose cumulative range contains `mass` (0 ≤ mass < total).
    pub fn find(&self, mut mass: f64) -> usize {
        let mut i = 1;
        while i < self.capacity {
            let left = self.nodes[2 * i];
            if mass < left || self.nodes[2 * i + 1] == 0.0 {
                i *= 2;
            } else {
                mass -= left;
                i = 2 * i + 1;
            }
        }
        i - self.capacity
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub indices: Vec<usize>,
    /// Importance weights, normalised so the largest is 1. All ones when
    /// sampling uniformly.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    priorities: Option<SumTree>,
    max_priority: f64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, prioritized: bool) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            priorities: prioritized.then(|| SumTree::new(capacity)),
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.items[index]
    }

    pub fn push(&mut self, t: Transition) {
        let slot = self.next;
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[slot] = t;
        }
        if let Some(tree) = &mut self.priorities {
            tree.set(slot, self.max_priority);
        }
        self.next = (slot + 1) % self.capacity;
    }

    /// Draws `batch` indices with replacement.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Sample {
        match &self.priorities {
            None => Sample { indices: (0..batch).map(|_| rng.gen_range(0..self.items.len())).collect(), weights: vec![1.0; batch] },
            Some(tree) => {
                let total = tree.total();
                let indices: Vec<usize> = (0..batch).map(|_| tree.find(rng.gen::<f64>() * total).min(self.items.len() - 1)).collect();
                // Inverse square-root of the sampling probability.
                let raw: Vec<f64> = indices.iter().map(|&i| (total / tree.get(i)).sqrt()).collect();
                let max = raw.iter().copied().fold(0.0, f64::max);
                Sample { indices, weights: raw.iter().map(|w| w / max).collect() }
            }
        }
    }

    /// Sets priorities from TD errors; a no-op for uniform replay.
    pub fn update_priorities(&mut self, indices: &[usize], td: &[f64]) {
        if let Some(tree) = &mut self.priorities {
            for (&i, e) in indices.iter().zip(td) {
                let p = (e.abs() + 1e-6).sqrt();
                self.max_priority = self.max_priority.max(p);
                tree.set(i, p);
            }
        }
    }
}
