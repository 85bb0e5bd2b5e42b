use rand::Rng;

use crate::sim::Action;

/// One semi-Markov step between consecutive decision points.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub phase: usize,
    pub action: Action,
    /// Σ_{i<steps} γ^i r_i over the seconds until the next decision.
    pub reward: f64,
    pub steps: u32,
    pub next_state: Vec<f64>,
    pub next_phase: usize,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    items: Vec<Transition>,
    capacity: usize,
    inserted: u64,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayMemory {
            items: Vec::with_capacity(capacity.min(4096)),
            capacity,
            inserted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: Transition) {
        let slot = (self.inserted % self.capacity as u64) as usize;
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[slot] = t;
        }
        self.inserted += 1;
    }

    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.items.get(slot)
    }

    /// `n` slots drawn uniformly with replacement; empty if the memory is.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn clear(&mut self) {
        self.items.clear();
        self.inserted = 0;
    }
}
