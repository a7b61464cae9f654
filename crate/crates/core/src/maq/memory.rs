use std::collections::VecDeque;

use rand::Rng;

/// One agent move: state, action, reward, next state.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub agent: usize,
    pub state: Vec<f32>,
    pub action: usize,
    pub reward: f32,
    pub next_state: Vec<f32>,
    /// Drops the bootstrap term of the update target.
    pub terminal: bool,
}

/// Bounded first-in first-out transition store.
#[derive(Clone, Debug)]
pub struct ReplayMemory {
    capacity: usize,
    items: VecDeque<Transition>,
    pushed: u64,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: VecDeque::with_capacity(capacity.min(1 << 16)), pushed: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total number of pushes since creation.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    /// Appends a transition, evicting the oldest one when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.pushed += 1;
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// `n` uniform draws with replacement.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, n: usize, rng: &mut R) -> Vec<&'a Transition> {
        (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }
}
