use std::collections::VecDeque;

use rand::Rng;

/// One environment step; actions are stored in squashed `[−1, 1]` units.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// FIFO replay memory with uniform sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
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

    /// Evicts the oldest transition once full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    /// `n` draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(r: f64) -> Transition {
        Transition {
            state: vec![r],
            action: vec![0.0],
            reward: r,
            next_state: vec![r],
            done: false,
        }
    }

    #[test]
    fn oldest_transitions_are_evicted_first() {
        let (cap, extra) = (50, 7);
        let mut b = ReplayBuffer::new(cap);
        for k in 0..cap + extra {
            b.push(tr(k as f64));
        }
        assert_eq!(b.len(), cap);
        let rewards: Vec<f64> = b.iter().map(|t| t.reward).collect();
        for k in 0..extra {
            assert!(!rewards.contains(&(k as f64)));
        }
        assert_eq!(rewards[0], extra as f64);
        assert_eq!(*rewards.last().unwrap(), (cap + extra - 1) as f64);
    }
}
