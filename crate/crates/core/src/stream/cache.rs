//! Bounded LRU of entity states. An entry with a pending write-behind is
//! pinned and cannot be evicted.

use std::collections::{BTreeMap, HashMap};

use crate::model::EntityState;

#[derive(Debug)]
struct Entry<F> {
    state: EntityState<F>,
    pins: u32,
    tick: u64,
}

#[derive(Debug)]
pub struct LruCache<F> {
    capacity: usize,
    entries: HashMap<Vec<u8>, Entry<F>>,
    /// Recency order: tick -> key. Smallest tick is least recent.
    order: BTreeMap<u64, Vec<u8>>,
    tick: u64,
    evictions: u64,
}

/// Every entry is pinned; the caller must wait for a write-behind to finish.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllPinned;

impl<F: Clone> LruCache<F> {
    pub fn new(capacity: usize) -> Self {
        LruCache { capacity: capacity.max(1), entries: HashMap::new(), order: BTreeMap::new(), tick: 0, evictions: 0 }
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

    pub fn evictions(&self) -> u64 {
        self.evictions
    }

    pub fn pinned(&self) -> usize {
        self.entries.values().filter(|e| e.pins > 0).count()
    }

    pub fn pins(&self, key: &[u8]) -> u32 {
        self.entries.get(key).map_or(0, |e| e.pins)
    }

    fn touch(&mut self, key: &[u8]) {
        self.tick += 1;
        let e = self.entries.get_mut(key).expect("touched key is cached");
        self.order.remove(&e.tick);
        e.tick = self.tick;
        self.order.insert(self.tick, key.to_vec());
    }

    /// Cached state, marking it most recently used.
    pub fn get(&mut self, key: &[u8]) -> Option<&EntityState<F>> {
        if !self.entries.contains_key(key) {
            return None;
        }
        self.touch(key);
        self.entries.get(key).map(|e| &e.state)
    }

    pub fn peek(&self, key: &[u8]) -> Option<&EntityState<F>> {
        self.entries.get(key).map(|e| &e.state)
    }

    /// Stores `state` and adds one pin. A new key may evict the least
    /// recently used unpinned entry.
    pub fn put_pinned(&mut self, key: &[u8], state: EntityState<F>) -> Result<(), AllPinned> {
        if let Some(e) = self.entries.get_mut(key) {
            e.state = state;
            e.pins += 1;
            self.touch(key);
            return Ok(());
        }
        if self.entries.len() >= self.capacity {
            let victim = self.order.iter().find(|(_, k)| self.entries[*k].pins == 0).map(|(t, k)| (*t, k.clone()));
            let (t, k) = victim.ok_or(AllPinned)?;
            self.order.remove(&t);
            self.entries.remove(&k);
            self.evictions += 1;
        }
        self.tick += 1;
        self.entries.insert(key.to_vec(), Entry { state, pins: 1, tick: self.tick });
        self.order.insert(self.tick, key.to_vec());
        Ok(())
    }

    /// Releases one pin, taken when the matching write-behind completes.
    pub fn unpin(&mut self, key: &[u8]) {
        if let Some(e) = self.entries.get_mut(key) {
            e.pins = e.pins.saturating_sub(1);
        }
    }

    /// Drops an unpinned entry; returns whether it was removed.
    pub fn remove_unpinned(&mut self, key: &[u8]) -> bool {
        match self.entries.get(key) {
            Some(e) if e.pins == 0 => {
                let t = e.tick;
                self.order.remove(&t);
                self.entries.remove(key);
                true
            }
            _ => false,
        }
    }

    /// Keys of unpinned entries matching `pred`.
    pub fn unpinned_where(&self, mut pred: impl FnMut(&EntityState<F>) -> bool) -> Vec<Vec<u8>> {
        self.entries.iter().filter(|(_, e)| e.pins == 0 && pred(&e.state)).map(|(k, _)| k.clone()).collect()
    }
}
