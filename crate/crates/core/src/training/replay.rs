use rand::seq::index::sample;
use rand::Rng;

use crate::valuenet::NetworkInput;

/// Fixed-capacity FIFO of `(input, target)` pairs.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<(NetworkInput, f64)>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            entries: Vec::new(),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends, overwriting the oldest entry once full.
    pub fn push(&mut self, pair: (NetworkInput, f64)) {
        if self.entries.len() < self.capacity {
            self.entries.push(pair);
        } else {
            self.entries[self.next] = pair;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn extend(&mut self, pairs: impl IntoIterator<Item = (NetworkInput, f64)>) {
        for p in pairs {
            self.push(p);
        }
    }

    pub fn entries(&self) -> &[(NetworkInput, f64)] {
        &self.entries
    }

    /// Up to `batch` distinct entries chosen uniformly.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Vec<(NetworkInput, f64)> {
        let n = batch.min(self.entries.len());
        sample(rng, self.entries.len(), n)
            .into_iter()
            .map(|i| self.entries[i].clone())
            .collect()
    }
}
