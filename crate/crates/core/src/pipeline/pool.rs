use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::numerics::BufferSource;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PoolError {
    #[error("released buffer was not acquired from this pool")]
    ForeignBuffer,
}

/// Counter snapshot.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PoolStats {
    pub allocations: u64,
    pub reuses: u64,
    pub releases: u64,
    /// Buffers handed to `give` that this pool never issued; they are dropped.
    pub foreign_drops: u64,
    pub outstanding: usize,
    pub free_buffers: usize,
    /// Largest number of simultaneously outstanding buffers, per size class in bytes.
    pub high_water: Vec<(usize, usize)>,
}

#[derive(Default)]
struct Inner {
    free: HashMap<usize, Vec<Vec<f32>>>,
    outstanding: HashSet<usize>,
    live: HashMap<usize, usize>,
    high_water: HashMap<usize, usize>,
}

/// Exact-size free lists of `f32` buffers keyed by byte length.
///
/// `acquire` never blocks beyond the internal lock. A disabled pool keeps the
/// same bookkeeping but allocates on every acquire and frees on release.
pub struct BufferPool {
    enabled: bool,
    inner: Mutex<Inner>,
    allocations: AtomicU64,
    reuses: AtomicU64,
    releases: AtomicU64,
    foreign: AtomicU64,
}

impl Default for BufferPool {
    fn default() -> Self {
        Self::new()
    }
}

impl BufferPool {
    pub fn new() -> Self {
        Self::with_enabled(true)
    }

    pub fn disabled() -> Self {
        Self::with_enabled(false)
    }

    pub fn with_enabled(enabled: bool) -> Self {
        BufferPool {
            enabled,
            inner: Mutex::new(Inner::default()),
            allocations: AtomicU64::new(0),
            reuses: AtomicU64::new(0),
            releases: AtomicU64::new(0),
            foreign: AtomicU64::new(0),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    /// A buffer of exactly `len` elements with unspecified contents.
    pub fn acquire(&self, len: usize) -> Vec<f32> {
        if len == 0 {
            return Vec::new();
        }
        let class = len * std::mem::size_of::<f32>();
        let mut inner = self.inner.lock().unwrap();
        let buf = match inner.free.get_mut(&class).and_then(Vec::pop) {
            Some(b) => {
                self.reuses.fetch_add(1, Ordering::Relaxed);
                b
            }
            None => {
                let n = self.allocations.fetch_add(1, Ordering::Relaxed) + 1;
                log::debug!(
                    "allocation {n}: {class} bytes, {} outstanding",
                    inner.outstanding.len()
                );
                vec![0.0; len]
            }
        };
        inner.outstanding.insert(buf.as_ptr() as usize);
        let live = inner.live.entry(class).or_insert(0);
        *live += 1;
        let live = *live;
        let hw = inner.high_water.entry(class).or_insert(0);
        *hw = (*hw).max(live);
        buf
    }

    pub fn release(&self, buf: Vec<f32>) -> Result<(), PoolError> {
        if buf.is_empty() {
            return Ok(());
        }
        let class = buf.len() * std::mem::size_of::<f32>();
        let mut inner = self.inner.lock().unwrap();
        if !inner.outstanding.remove(&(buf.as_ptr() as usize)) {
            return Err(PoolError::ForeignBuffer);
        }
        if let Some(live) = inner.live.get_mut(&class) {
            *live -= 1;
        }
        self.releases.fetch_add(1, Ordering::Relaxed);
        if self.enabled {
            inner.free.entry(class).or_default().push(buf);
        }
        Ok(())
    }

    /// Tops up every size class seen so far to twice its high-water mark,
    /// adding at most `max_extra` buffers per class. Returns the number of
    /// buffers allocated. Does nothing on a disabled pool.
    pub fn prime(&self, max_extra: usize) -> usize {
        if !self.enabled {
            return 0;
        }
        let mut inner = self.inner.lock().unwrap();
        let mut added = 0;
        let classes: Vec<(usize, usize)> = inner.high_water.iter().map(|(k, v)| (*k, *v)).collect();
        for (class, hw) in classes {
            let held = inner.live.get(&class).copied().unwrap_or(0)
                + inner.free.get(&class).map_or(0, Vec::len);
            let target = hw + hw.min(max_extra);
            let free = inner.free.entry(class).or_default();
            for _ in held..target {
                free.push(vec![0.0; class / std::mem::size_of::<f32>()]);
                added += 1;
            }
        }
        self.allocations.fetch_add(added as u64, Ordering::Relaxed);
        added
    }

    pub fn stats(&self) -> PoolStats {
        let inner = self.inner.lock().unwrap();
        let mut high_water: Vec<_> = inner.high_water.iter().map(|(k, v)| (*k, *v)).collect();
        high_water.sort_unstable();
        PoolStats {
            allocations: self.allocations.load(Ordering::Relaxed),
            reuses: self.reuses.load(Ordering::Relaxed),
            releases: self.releases.load(Ordering::Relaxed),
            foreign_drops: self.foreign.load(Ordering::Relaxed),
            outstanding: inner.outstanding.len(),
            free_buffers: inner.free.values().map(Vec::len).sum(),
            high_water,
        }
    }

    pub fn allocations(&self) -> u64 {
        self.allocations.load(Ordering::Relaxed)
    }

    pub fn reuses(&self) -> u64 {
        self.reuses.load(Ordering::Relaxed)
    }
}

impl BufferSource for BufferPool {
    fn take(&self, len: usize) -> Vec<f32> {
        self.acquire(len)
    }

    fn give(&self, buf: Vec<f32>) {
        if self.release(buf).is_err() {
            self.foreign.fetch_add(1, Ordering::Relaxed);
        }
    }
}
