//! Versioned object store with optimistic concurrency and per-kind watches.
//!
//! Every mutation and its fan-out happen under one lock, so each watcher sees
//! the events of an object in resource-version order.

use std::collections::BTreeMap;
use std::sync::Arc;

use crossbeam_channel::{unbounded, Receiver, Sender};
use parking_lot::Mutex;
use thiserror::Error;

use crate::object::{Kind, SimObject};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("{kind}/{name}: expected resource version {expected}, found {actual}")]
    Conflict {
        kind: Kind,
        name: String,
        expected: u64,
        actual: u64,
    },
    #[error("{kind}/{name} not found")]
    NotFound { kind: Kind, name: String },
    #[error("{kind}/{name} already exists")]
    AlreadyExists { kind: Kind, name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventType {
    Added,
    Modified,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WatchEvent {
    pub event_type: EventType,
    pub object: SimObject,
}

pub type WriteHook = Arc<dyn Fn(&SimObject) + Send + Sync>;

struct Watcher {
    kinds: Vec<Kind>,
    tx: Sender<WatchEvent>,
}

#[derive(Default)]
struct Inner {
    objects: BTreeMap<(Kind, String), SimObject>,
    watchers: Vec<Watcher>,
    hooks: Vec<WriteHook>,
}

#[derive(Default)]
pub struct ObjectStore {
    inner: Mutex<Inner>,
}

impl ObjectStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Called with every object the store accepts, before watchers see it.
    pub fn add_write_hook(&self, hook: WriteHook) {
        self.inner.lock().hooks.push(hook);
    }

    pub fn watch(&self, kinds: &[Kind]) -> Receiver<WatchEvent> {
        let (tx, rx) = unbounded();
        self.inner.lock().watchers.push(Watcher {
            kinds: kinds.to_vec(),
            tx,
        });
        rx
    }

    pub fn get(&self, kind: Kind, name: &str) -> Option<SimObject> {
        self.inner
            .lock()
            .objects
            .get(&(kind, name.to_string()))
            .cloned()
    }

    /// All objects of `kind`, ordered by name.
    pub fn list(&self, kind: Kind) -> Vec<SimObject> {
        self.inner
            .lock()
            .objects
            .range((kind, String::new())..)
            .take_while(|((k, _), _)| *k == kind)
            .map(|(_, o)| o.clone())
            .collect()
    }

    pub fn create(&self, mut obj: SimObject) -> Result<SimObject, StoreError> {
        let mut inner = self.inner.lock();
        let key = (obj.kind(), obj.name.clone());
        if inner.objects.contains_key(&key) {
            return Err(StoreError::AlreadyExists {
                kind: key.0,
                name: key.1,
            });
        }
        obj.resource_version = 1;
        inner.objects.insert(key, obj.clone());
        inner.publish(EventType::Added, &obj);
        Ok(obj)
    }

    /// Replaces the stored object if `obj.resource_version` is current.
    pub fn update(&self, mut obj: SimObject) -> Result<SimObject, StoreError> {
        let mut inner = self.inner.lock();
        let key = (obj.kind(), obj.name.clone());
        let current = match inner.objects.get(&key) {
            Some(o) => o.resource_version,
            None => {
                return Err(StoreError::NotFound {
                    kind: key.0,
                    name: key.1,
                })
            }
        };
        if current != obj.resource_version {
            return Err(StoreError::Conflict {
                kind: key.0,
                name: key.1,
                expected: obj.resource_version,
                actual: current,
            });
        }
        obj.resource_version = current + 1;
        inner.objects.insert(key, obj.clone());
        inner.publish(EventType::Modified, &obj);
        Ok(obj)
    }

    pub fn delete(&self, kind: Kind, name: &str) -> Result<SimObject, StoreError> {
        let mut inner = self.inner.lock();
        let obj = inner
            .objects
            .remove(&(kind, name.to_string()))
            .ok_or_else(|| StoreError::NotFound {
                kind,
                name: name.to_string(),
            })?;
        inner.publish(EventType::Deleted, &obj);
        Ok(obj)
    }
}

impl Inner {
    fn publish(&mut self, event_type: EventType, obj: &SimObject) {
        if event_type != EventType::Deleted {
            for hook in &self.hooks {
                hook(obj);
            }
        }
        let kind = obj.kind();
        // A watcher whose receiver is gone is dropped.
        self.watchers.retain(|w| {
            !w.kinds.contains(&kind)
                || w.tx
                    .send(WatchEvent {
                        event_type,
                        object: obj.clone(),
                    })
                    .is_ok()
        });
    }
}
