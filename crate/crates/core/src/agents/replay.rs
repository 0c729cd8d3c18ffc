use super::Transition;
use crate::error::{Error, Result};
use crate::numkit::SeededRng;

/// Fixed-capacity FIFO store of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            cursor: 0,
            pushed: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.pushed += 1;
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

    /// Transitions ever inserted, including evicted ones.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Uniform indices, with replacement. Any nonempty buffer can serve any
    /// batch size; an empty one is not ready.
    pub fn sample_indices(&self, batch_size: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::NotReady {
                have: 0,
                need: batch_size.max(1),
            });
        }
        Ok((0..batch_size).map(|_| rng.index(self.items.len())).collect())
    }

    /// Uniform sample with replacement; copies of the stored transitions.
    pub fn sample(&self, batch_size: usize, rng: &mut SeededRng) -> Result<Vec<Transition>> {
        Ok(self
            .sample_indices(batch_size, rng)?
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect())
    }
}

/// Samples `batch_size` transitions uniformly with replacement.
pub fn replay_sample(buffer: &ReplayBuffer, batch_size: usize, rng: &mut SeededRng) -> Result<Vec<Transition>> {
    buffer.sample(batch_size, rng)
}
