use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use lru::LruCache;

use super::Neighbor;
use crate::error::{Error, Result};
use crate::types::PinId;

struct Inner {
    entries: LruCache<(PinId, usize), Vec<Neighbor>>,
    /// Index version the entries were computed against.
    version: Option<u64>,
}

/// LRU map from `(medoid, k)` to that medoid's neighbor list.
///
/// Lookups hold the lock across the computation, so each key is computed at
/// most once per index version even under concurrent callers.
pub struct MedoidCache {
    inner: Mutex<Inner>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl MedoidCache {
    pub fn new(capacity: usize) -> Result<Self> {
        let cap = NonZeroUsize::new(capacity).ok_or_else(|| Error::invalid("cache_capacity", "must be positive"))?;
        Ok(Self {
            inner: Mutex::new(Inner {
                entries: LruCache::new(cap),
                version: None,
            }),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn get_or_compute<F>(&self, version: u64, medoid: PinId, k: usize, compute: F) -> Result<Vec<Neighbor>>
    where
        F: FnOnce() -> Result<Vec<Neighbor>>,
    {
        let mut inner = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        if inner.version != Some(version) {
            inner.entries.clear();
            inner.version = Some(version);
        }
        if let Some(hit) = inner.entries.get(&(medoid, k)) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let list = compute()?;
        inner.entries.put((medoid, k), list.clone());
        Ok(list)
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn hit_rate(&self) -> f64 {
        let total = self.hits() + self.misses();
        if total == 0 {
            0.0
        } else {
            self.hits() as f64 / total as f64
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|p| p.into_inner()).entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        let mut inner = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        inner.entries.clear();
        inner.version = None;
    }
}

impl std::fmt::Debug for MedoidCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MedoidCache")
            .field("len", &self.len())
            .field("hits", &self.hits())
            .field("misses", &self.misses())
            .finish()
    }
}
