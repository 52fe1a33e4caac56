//! Budgeted eviction order over stored buffers.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Evict the lowest-valued buffer first; older loses ties.
    #[default]
    Prioritized,
    /// Evict the oldest buffer first.
    Fifo,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Prioritized => "prioritized",
            Policy::Fifo => "fifo",
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Policy {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prioritized" | "sbb" => Ok(Policy::Prioritized),
            "fifo" => Ok(Policy::Fifo),
            _ => Err(crate::error::Error::Input(format!("unknown policy `{s}`"))),
        }
    }
}

/// Heap key: value first, then id so that older buffers lose ties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorityKey {
    pub vstar: f64,
    pub id: u64,
}

impl Eq for PriorityKey {}

impl PartialOrd for PriorityKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PriorityKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.vstar.total_cmp(&other.vstar).then(self.id.cmp(&other.id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Admission {
    pub evicted: Vec<u64>,
    /// The pushed buffer was kept although it exceeds the budget on its own.
    pub oversize: bool,
}

/// Members and their sizes, ordered for eviction under one policy.
#[derive(Debug, Clone)]
pub struct EvictionQueue {
    policy: Policy,
    budget: Option<u64>,
    heap: BinaryHeap<Reverse<PriorityKey>>,
    fifo: VecDeque<u64>,
    sizes: HashMap<u64, u64>,
    total: u64,
}

impl EvictionQueue {
    /// `budget = None` never evicts.
    pub fn new(policy: Policy, budget: Option<u64>) -> Self {
        Self {
            policy,
            budget,
            heap: BinaryHeap::new(),
            fifo: VecDeque::new(),
            sizes: HashMap::new(),
            total: 0,
        }
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.sizes.contains_key(&id)
    }

    fn over_budget(&self) -> bool {
        self.budget.is_some_and(|m| self.total > m)
    }

    /// Insert without evicting.
    pub fn insert(&mut self, id: u64, vstar: f64, size: u64) {
        match self.policy {
            Policy::Prioritized => self.heap.push(Reverse(PriorityKey { vstar, id })),
            Policy::Fifo => self.fifo.push_back(id),
        }
        self.sizes.insert(id, size);
        self.total += size;
    }

    /// Insert, then evict until the budget holds or one member remains.
    pub fn push(&mut self, id: u64, vstar: f64, size: u64) -> Admission {
        self.insert(id, vstar, size);
        let mut evicted = Vec::new();
        while self.over_budget() && self.len() > 1 {
            let victim = match self.policy {
                Policy::Prioritized => self.heap.pop().map(|Reverse(k)| k.id),
                Policy::Fifo => self.fifo.pop_front(),
            }
            .expect("nonempty queue");
            self.total -= self.sizes.remove(&victim).expect("member size");
            evicted.push(victim);
        }
        let oversize = self.sizes.contains_key(&id) && self.budget.is_some_and(|m| size > m);
        Admission { evicted, oversize }
    }

    /// Change a member's accounted size (e.g. after deduplication).
    pub fn set_size(&mut self, id: u64, size: u64) {
        if let Some(s) = self.sizes.get_mut(&id) {
            self.total = self.total - *s + size;
            *s = size;
        }
    }

    /// Members in the order they would be evicted.
    pub fn eviction_order(&self) -> Vec<u64> {
        match self.policy {
            Policy::Prioritized => {
                let mut keys: Vec<PriorityKey> = self.heap.iter().map(|Reverse(k)| *k).collect();
                keys.sort();
                keys.into_iter().map(|k| k.id).collect()
            }
            Policy::Fifo => self.fifo.iter().copied().collect(),
        }
    }

    /// Pop the next victim regardless of budget.
    pub fn pop(&mut self) -> Option<u64> {
        let id = match self.policy {
            Policy::Prioritized => self.heap.pop().map(|Reverse(k)| k.id),
            Policy::Fifo => self.fifo.pop_front(),
        }?;
        self.total -= self.sizes.remove(&id).unwrap_or(0);
        Some(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let mut q = EvictionQueue::new(Policy::Prioritized, Some(10));
        assert!(q.push(0, 0.9, 6).evicted.is_empty());
        assert_eq!(q.push(1, 0.2, 6).evicted, vec![1]);
        let mut q = EvictionQueue::new(Policy::Prioritized, Some(12));
        q.insert(0, 0.9, 6);
        q.insert(1, 0.2, 6);
        assert_eq!(q.push(2, 0.5, 6).evicted, vec![1]);
        assert_eq!(q.eviction_order(), vec![2, 0]);
    }

    #[test]
    fn fifo_worked_example() {
        let mut q = EvictionQueue::new(Policy::Fifo, Some(10));
        q.insert(0, 0.9, 6);
        q.insert(1, 0.2, 6);
        assert_eq!(q.push(2, 0.5, 6).evicted, vec![0, 1]);
        assert_eq!(q.eviction_order(), vec![2]);
    }

    #[test]
    fn newest_can_lose() {
        let mut q = EvictionQueue::new(Policy::Prioritized, Some(10));
        q.push(0, 0.9, 5);
        q.push(1, 0.8, 5);
        let a = q.push(2, 0.1, 3);
        assert_eq!(a.evicted, vec![2]);
        assert_eq!(q.total(), 10);
    }

    #[test]
    fn oversize_stays_alone() {
        let mut q = EvictionQueue::new(Policy::Prioritized, Some(10));
        q.push(0, 0.1, 4);
        q.push(1, 0.2, 4);
        let a = q.push(2, 0.9, 25);
        assert_eq!(a.evicted, vec![0, 1]);
        assert!(a.oversize);
        assert_eq!(q.eviction_order(), vec![2]);
        let b = q.push(3, 0.5, 2);
        assert_eq!(b.evicted, vec![3]);
        assert!(!b.oversize);
    }

    #[test]
    fn ties_evict_older() {
        let mut q = EvictionQueue::new(Policy::Prioritized, Some(10));
        q.push(0, 0.5, 6);
        assert_eq!(q.push(1, 0.5, 6).evicted, vec![0]);
    }

    #[test]
    fn unlimited_never_evicts() {
        let mut q = EvictionQueue::new(Policy::Fifo, None);
        for i in 0..100 {
            assert!(q.push(i, 0.0, u64::MAX / 200).evicted.is_empty());
        }
        assert_eq!(q.len(), 100);
    }
}
