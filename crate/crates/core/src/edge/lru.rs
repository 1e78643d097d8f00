use std::collections::HashMap;
use std::hash::Hash;

const NIL: usize = usize::MAX;

#[derive(Debug, Clone)]
struct Node<K> {
    key: K,
    prev: usize,
    next: usize,
}

/// Bounded set with least-recently-used eviction: a hash map from key to
/// slot plus a doubly linked recency list threaded through a slab.
#[derive(Debug, Clone)]
pub struct LruSet<K> {
    map: HashMap<K, usize>,
    nodes: Vec<Node<K>>,
    free: Vec<usize>,
    /// Most recently used.
    head: usize,
    /// Least recently used.
    tail: usize,
    capacity: usize,
}

impl<K: Hash + Eq + Clone> LruSet<K> {
    pub fn new(capacity: usize) -> Self {
        Self {
            map: HashMap::new(),
            nodes: Vec::new(),
            free: Vec::new(),
            head: NIL,
            tail: NIL,
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Membership test that leaves recency untouched.
    pub fn contains(&self, key: &K) -> bool {
        self.map.contains_key(key)
    }

    fn unlink(&mut self, i: usize) {
        let (prev, next) = (self.nodes[i].prev, self.nodes[i].next);
        if prev == NIL {
            self.head = next;
        } else {
            self.nodes[prev].next = next;
        }
        if next == NIL {
            self.tail = prev;
        } else {
            self.nodes[next].prev = prev;
        }
    }

    fn push_front(&mut self, i: usize) {
        self.nodes[i].prev = NIL;
        self.nodes[i].next = self.head;
        if self.head != NIL {
            self.nodes[self.head].prev = i;
        }
        self.head = i;
        if self.tail == NIL {
            self.tail = i;
        }
    }

    /// Moves `key` to the front. Returns false if absent.
    pub fn touch(&mut self, key: &K) -> bool {
        match self.map.get(key) {
            Some(&i) => {
                if self.head != i {
                    self.unlink(i);
                    self.push_front(i);
                }
                true
            }
            None => false,
        }
    }

    fn pop_back(&mut self) -> Option<K> {
        if self.tail == NIL {
            return None;
        }
        let i = self.tail;
        self.unlink(i);
        self.free.push(i);
        let key = self.nodes[i].key.clone();
        self.map.remove(&key);
        Some(key)
    }

    /// Inserts or refreshes `key`; returns the entry evicted to make room.
    pub fn insert(&mut self, key: K) -> Option<K> {
        if self.touch(&key) {
            return None;
        }
        if self.capacity == 0 {
            return Some(key);
        }
        let evicted = if self.map.len() >= self.capacity {
            self.pop_back()
        } else {
            None
        };
        let node = Node {
            key: key.clone(),
            prev: NIL,
            next: NIL,
        };
        let i = match self.free.pop() {
            Some(i) => {
                self.nodes[i] = node;
                i
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        };
        self.map.insert(key, i);
        self.push_front(i);
        evicted
    }

    pub fn remove(&mut self, key: &K) -> bool {
        match self.map.remove(key) {
            Some(i) => {
                self.unlink(i);
                self.free.push(i);
                true
            }
            None => false,
        }
    }

    /// Shrinking evicts from the least-recently-used end.
    pub fn set_capacity(&mut self, capacity: usize) -> Vec<K> {
        self.capacity = capacity;
        let mut out = Vec::new();
        while self.map.len() > capacity {
            out.extend(self.pop_back());
        }
        out
    }

    /// Keys from most to least recently used.
    pub fn iter(&self) -> LruIter<'_, K> {
        LruIter {
            set: self,
            at: self.head,
        }
    }
}

pub struct LruIter<'a, K> {
    set: &'a LruSet<K>,
    at: usize,
}

impl<'a, K> Iterator for LruIter<'a, K> {
    type Item = &'a K;

    fn next(&mut self) -> Option<&'a K> {
        if self.at == NIL {
            return None;
        }
        let node = &self.set.nodes[self.at];
        self.at = node.next;
        Some(&node.key)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn touch_protects_from_eviction() {
        let mut l = LruSet::new(2);
        assert_eq!(l.insert('A'), None);
        assert_eq!(l.insert('B'), None);
        assert!(l.touch(&'A'));
        assert_eq!(l.insert('C'), Some('B'));
        assert_eq!(l.iter().copied().collect::<Vec<_>>(), vec!['C', 'A']);
    }

    #[test]
    fn touch_of_absent_key_is_a_miss() {
        let mut l: LruSet<u32> = LruSet::new(3);
        assert!(!l.touch(&1));
        assert!(l.is_empty());
    }

    #[test]
    fn zero_capacity_holds_nothing() {
        let mut l = LruSet::new(0);
        assert_eq!(l.insert(1), Some(1));
        assert!(l.is_empty());
    }

    #[test]
    fn shrink_evicts_oldest() {
        let mut l = LruSet::new(4);
        for k in 0..4 {
            l.insert(k);
        }
        assert_eq!(l.set_capacity(2), vec![0, 1]);
        assert_eq!(l.iter().copied().collect::<Vec<_>>(), vec![3, 2]);
    }

    #[test]
    fn matches_queue_model() {
        // Reference: a deque ordered MRU first, scanned linearly.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cap = 16;
        let mut lru = LruSet::new(cap);
        let mut model: VecDeque<u32> = VecDeque::new();
        for _ in 0..10_000 {
            let k = rng.gen_range(0..40u32);
            match rng.gen_range(0..3) {
                0 => {
                    let hit = model.iter().position(|&x| x == k).map(|p| {
                        model.remove(p);
                        model.push_front(k);
                    });
                    assert_eq!(lru.touch(&k), hit.is_some());
                }
                1 => {
                    let want = if let Some(p) = model.iter().position(|&x| x == k) {
                        model.remove(p);
                        model.push_front(k);
                        None
                    } else {
                        model.push_front(k);
                        if model.len() > cap {
                            model.pop_back()
                        } else {
                            None
                        }
                    };
                    assert_eq!(lru.insert(k), want);
                }
                _ => {
                    let want = model.iter().position(|&x| x == k).map(|p| model.remove(p));
                    assert_eq!(lru.remove(&k), want.is_some());
                }
            }
            assert!(lru.iter().copied().eq(model.iter().copied()));
        }
    }
}
