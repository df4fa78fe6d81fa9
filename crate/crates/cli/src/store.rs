//! Capacity-bounded session map with LRU eviction and per-session edit locks.

use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use lru::LruCache;

use seedsplat::edit::EditSession;

pub const DEFAULT_CAPACITY: usize = 16;

pub struct SessionState {
    pub session: EditSession,
    pub views: usize,
    pub edits: usize,
    /// Counter for naming written files.
    pub files: usize,
}

pub struct SessionSlot {
    busy: AtomicBool,
    state: Mutex<SessionState>,
}

impl SessionSlot {
    pub fn state(&self) -> MutexGuard<'_, SessionState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Claims the session for one edit; `None` while another edit runs.
    pub fn try_acquire(self: &Arc<Self>) -> Option<EditGuard> {
        self.busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .ok()
            .map(|_| EditGuard(self.clone()))
    }

    pub fn is_busy(&self) -> bool {
        self.busy.load(Ordering::Acquire)
    }
}

/// Releases the edit claim on drop.
pub struct EditGuard(Arc<SessionSlot>);

impl EditGuard {
    pub fn slot(&self) -> &Arc<SessionSlot> {
        &self.0
    }
}

impl Drop for EditGuard {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

pub struct SessionStore {
    map: Mutex<LruCache<String, Arc<SessionSlot>>>,
    capacity: usize,
}

impl SessionStore {
    pub fn new(capacity: usize) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).unwrap();
        Self {
            map: Mutex::new(LruCache::new(cap)),
            capacity: cap.get(),
        }
    }

    fn map(&self) -> MutexGuard<'_, LruCache<String, Arc<SessionSlot>>> {
        self.map.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.map().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores a new session under a fresh id, evicting the least recently used
    /// one when full.
    pub fn insert(&self, session: EditSession, views: usize) -> (String, Arc<SessionSlot>) {
        let slot = Arc::new(SessionSlot {
            busy: AtomicBool::new(false),
            state: Mutex::new(SessionState {
                session,
                views,
                edits: 0,
                files: 0,
            }),
        });
        let mut map = self.map();
        let mut id = uuid::Uuid::new_v4().simple().to_string();
        while map.contains(&id) {
            id = uuid::Uuid::new_v4().simple().to_string();
        }
        map.push(id.clone(), slot.clone());
        (id, slot)
    }

    /// Looks a session up and marks it most recently used.
    pub fn get(&self, id: &str) -> Option<Arc<SessionSlot>> {
        self.map().get(id).cloned()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.map().contains(id)
    }
}
