//! Objects held by the simulated API server.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kind {
    Deployment,
    ReplicaSet,
    Pod,
    Service,
    Endpoints,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Pending,
    Scheduled,
    Ready,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Spec {
    Deployment {
        replicas: u32,
        label: String,
    },
    ReplicaSet {
        replicas: u32,
        owner: String,
        label: String,
    },
    Pod {
        owner: String,
        label: String,
        node_name: Option<String>,
        phase: Phase,
    },
    Service {
        selector: String,
    },
    Endpoints {
        ready: Vec<String>,
    },
}

impl Spec {
    pub fn kind(&self) -> Kind {
        match self {
            Spec::Deployment { .. } => Kind::Deployment,
            Spec::ReplicaSet { .. } => Kind::ReplicaSet,
            Spec::Pod { .. } => Kind::Pod,
            Spec::Service { .. } => Kind::Service,
            Spec::Endpoints { .. } => Kind::Endpoints,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimObject {
    pub name: String,
    pub spec: Spec,
    pub annotations: BTreeMap<String, String>,
    /// Zero until the store accepts the object.
    pub resource_version: u64,
}

impl SimObject {
    pub fn new(name: impl Into<String>, spec: Spec) -> Self {
        SimObject {
            name: name.into(),
            spec,
            annotations: BTreeMap::new(),
            resource_version: 0,
        }
    }

    pub fn kind(&self) -> Kind {
        self.spec.kind()
    }

    /// Replica count of a Deployment or ReplicaSet.
    pub fn replicas(&self) -> Option<u32> {
        match &self.spec {
            Spec::Deployment { replicas, .. } | Spec::ReplicaSet { replicas, .. } => {
                Some(*replicas)
            }
            _ => None,
        }
    }

    pub fn pod_owner(&self) -> Option<&str> {
        match &self.spec {
            Spec::Pod { owner, .. } => Some(owner),
            _ => None,
        }
    }

    pub fn pod_phase(&self) -> Option<Phase> {
        match &self.spec {
            Spec::Pod { phase, .. } => Some(*phase),
            _ => None,
        }
    }
}

/// Name of the ReplicaSet a Deployment owns.
pub fn replicaset_name(deployment: &str) -> String {
    format!("{deployment}-rs")
}

/// Name of the `index`-th Pod a ReplicaSet creates.
pub fn pod_name(replicaset: &str, index: u64) -> String {
    format!("{replicaset}-{index:05}")
}
