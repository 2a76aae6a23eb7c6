//! Controllers of the simulated control plane.
//!
//! Every controller is a sequential loop over its watch stream. The runner
//! hands it one [`Wake`] at a time together with a [`Ctx`].
//!
//! Observed contexts are merged oldest first: the current state of the
//! object about to be written, then the objects that drove the change. The
//! graph builder appends older ancestors behind newer ones in that order, so
//! truncation drops the oldest.

mod deployment;
mod endpoints;
mod kubectl;
mod kubelet;
mod replicaset;
mod scheduler;

use std::time::Duration;

pub use deployment::DeploymentController;
pub use endpoints::EndpointsController;
pub use kubectl::Kubectl;
pub use kubelet::Kubelet;
pub use replicaset::ReplicaSetController;
pub use scheduler::Scheduler;

use crate::object::Kind;
use crate::store::{ObjectStore, StoreError, WatchEvent};
use crate::trace::Tracer;

pub const KUBECTL: &str = "kubectl";
pub const DEPLOYMENT_CONTROLLER: &str = "deployment-controller";
pub const REPLICASET_CONTROLLER: &str = "replicaset-controller";
pub const SCHEDULER: &str = "scheduler";
pub const ENDPOINTS_CONTROLLER: &str = "endpoints-controller";
pub const KUBELET: &str = "kubelet";

#[derive(Debug, Clone)]
pub enum Wake {
    Event(WatchEvent),
    /// A timer the controller asked for earlier.
    Timer(String),
}

pub struct Ctx<'a> {
    pub store: &'a ObjectStore,
    pub tracer: &'a Tracer,
    pub retry_budget: usize,
    timers: Vec<(Duration, String)>,
    errors: Vec<String>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ObjectStore, tracer: &'a Tracer, retry_budget: usize) -> Self {
        Ctx {
            store,
            tracer,
            retry_budget,
            timers: Vec::new(),
            errors: Vec::new(),
        }
    }

    /// Asks to be woken with `Wake::Timer(key)` after `delay`.
    pub fn after(&mut self, delay: Duration, key: String) {
        self.timers.push((delay, key));
    }

    pub fn take_timers(&mut self) -> Vec<(Duration, String)> {
        std::mem::take(&mut self.timers)
    }

    pub fn take_errors(&mut self) -> Vec<String> {
        std::mem::take(&mut self.errors)
    }

    /// Runs a reconcile pass, re-running it from scratch on write conflicts.
    /// Gives up after the retry budget and records an error.
    pub fn with_retries(
        &mut self,
        who: &str,
        mut pass: impl FnMut(&Self) -> Result<(), StoreError>,
    ) {
        let mut last = None;
        for _ in 0..self.retry_budget.max(1) {
            match pass(self) {
                Ok(()) => return,
                Err(e @ (StoreError::Conflict { .. } | StoreError::AlreadyExists { .. })) => {
                    last = Some(e)
                }
                Err(e) => {
                    last = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = last {
            self.errors.push(format!("{who}: giving up: {e}"));
        }
    }
}

pub trait Controller: Send {
    fn name(&self) -> &'static str;
    fn kinds(&self) -> &'static [Kind];
    fn handle(&mut self, wake: Wake, cx: &mut Ctx<'_>);
}
