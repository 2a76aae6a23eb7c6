use cascade_trace::{inject, Cpid};

use super::KUBECTL;
use crate::object::{Kind, SimObject, Spec};
use crate::store::{ObjectStore, StoreError};
use crate::trace::Tracer;

/// The operator's client. With tracing on, every apply mints a root CPID.
pub struct Kubectl<'a> {
    store: &'a ObjectStore,
    tracer: &'a Tracer,
    retry_budget: usize,
}

impl<'a> Kubectl<'a> {
    pub fn new(store: &'a ObjectStore, tracer: &'a Tracer, retry_budget: usize) -> Self {
        Kubectl {
            store,
            tracer,
            retry_budget: retry_budget.max(1),
        }
    }

    /// Creates `obj`, or replaces the spec of the existing object with the
    /// same kind and name. Returns the stored object and the root CPID.
    pub fn apply(
        &self,
        obj: SimObject,
        traced: bool,
    ) -> Result<(SimObject, Option<Cpid>), StoreError> {
        let root = traced.then(|| self.tracer.new_root());
        let root_cpid = root.as_ref().map(|r| r.cpid());
        let pass = self.tracer.pass(KUBECTL, "apply", root_cpid);
        let mut last = None;
        for _ in 0..self.retry_budget {
            let attempt = match self.store.get(obj.kind(), &obj.name) {
                None => {
                    let mut new = obj.clone();
                    new.resource_version = 0;
                    if let Some(r) = &root {
                        inject(&mut new.annotations, r);
                    }
                    pass.log(root_cpid, "create", [("object", describe(&new))]);
                    pass.step(root_cpid, "create", || self.store.create(new))
                }
                Some(current) => {
                    let mut new = current.clone();
                    new.spec = obj.spec.clone();
                    let merged = root.as_ref().and_then(|r| {
                        let mut ctxs: Vec<_> =
                            self.tracer.context_of(&current).into_iter().collect();
                        ctxs.push(r.clone());
                        self.tracer.merge(KUBECTL, &ctxs)
                    });
                    if let Some(m) = &merged {
                        inject(&mut new.annotations, m);
                    }
                    let cpid = merged.map(|m| m.cpid());
                    pass.log(cpid, "update", [("object", describe(&new))]);
                    pass.step(cpid, "update", || self.store.update(new))
                }
            };
            match attempt {
                Ok(stored) => return Ok((stored, root_cpid)),
                Err(e @ StoreError::Conflict { .. })
                | Err(e @ StoreError::AlreadyExists { .. }) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    /// Sets the replica count of an existing Deployment.
    pub fn scale(
        &self,
        deployment: &str,
        replicas: u32,
        traced: bool,
    ) -> Result<(SimObject, Option<Cpid>), StoreError> {
        let current = self
            .store
            .get(Kind::Deployment, deployment)
            .ok_or_else(|| StoreError::NotFound {
                kind: Kind::Deployment,
                name: deployment.to_string(),
            })?;
        let mut obj = current;
        if let Spec::Deployment { replicas: r, .. } = &mut obj.spec {
            *r = replicas;
        }
        self.apply(obj, traced)
    }
}

fn describe(obj: &SimObject) -> String {
    match obj.replicas() {
        Some(r) => format!("{}/{} replicas={r}", obj.kind(), obj.name),
        None => format!("{}/{}", obj.kind(), obj.name),
    }
}
