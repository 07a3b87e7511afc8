//! Deterministic event queue: events pop in order of time, then actor id,
//! then kind, so equal-time events never depend on insertion order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event<K> {
    pub time: f64,
    pub actor: u32,
    pub kind: K,
}

impl<K: Ord> Eq for Event<K> {}

impl<K: Ord> Ord for Event<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.actor.cmp(&other.actor))
            .then(self.kind.cmp(&other.kind))
    }
}

impl<K: Ord> PartialOrd for Event<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct EventQueue<K> {
    heap: BinaryHeap<std::cmp::Reverse<Event<K>>>,
}

impl<K: Ord> Default for EventQueue<K> {
    fn default() -> Self {
        EventQueue { heap: BinaryHeap::new() }
    }
}

impl<K: Ord> EventQueue<K> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, actor: u32, kind: K) {
        self.heap.push(std::cmp::Reverse(Event { time, actor, kind }));
    }

    pub fn pop(&mut self) -> Option<Event<K>> {
        self.heap.pop().map(|r| r.0)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ties_break_on_actor_then_kind() {
        let mut q = EventQueue::new();
        q.push(1.0, 2, 0u8);
        q.push(1.0, 1, 1u8);
        q.push(1.0, 1, 0u8);
        q.push(0.5, 9, 0u8);
        let order: Vec<(u32, u8)> = std::iter::from_fn(|| q.pop()).map(|e| (e.actor, e.kind)).collect();
        assert_eq!(order, vec![(9, 0), (1, 0), (1, 1), (2, 0)]);
    }

    proptest! {
        #[test]
        fn pop_order_ignores_insertion_order(mut evs in prop::collection::vec((0u8..5, 0u32..4, 0u8..3), 1..40), seed in any::<u64>()) {
            let mut q1 = EventQueue::new();
            for &(t, a, k) in &evs {
                q1.push(t as f64, a, k);
            }
            use rand::{seq::SliceRandom, SeedableRng};
            evs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let mut q2 = EventQueue::new();
            for &(t, a, k) in &evs {
                q2.push(t as f64, a, k);
            }
            let a: Vec<_> = std::iter::from_fn(|| q1.pop()).collect();
            let b: Vec<_> = std::iter::from_fn(|| q2.pop()).collect();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
