use cascade_trace::inject;

use super::{Controller, Ctx, Wake, DEPLOYMENT_CONTROLLER};
use crate::object::{replicaset_name, Kind, SimObject, Spec};
use crate::store::EventType;

/// Keeps one ReplicaSet per Deployment with the Deployment's replica count.
///
/// Reconciles against the Deployment as delivered in the event, so each
/// Deployment revision is applied to the ReplicaSet in order.
#[derive(Debug, Default)]
pub struct DeploymentController;

impl DeploymentController {
    pub fn new() -> Self {
        DeploymentController
    }
}

impl Controller for DeploymentController {
    fn name(&self) -> &'static str {
        DEPLOYMENT_CONTROLLER
    }

    fn kinds(&self) -> &'static [Kind] {
        &[Kind::Deployment]
    }

    fn handle(&mut self, wake: Wake, cx: &mut Ctx<'_>) {
        let Wake::Event(ev) = wake else { return };
        if ev.event_type == EventType::Deleted {
            return;
        }
        let deployment = ev.object;
        let Spec::Deployment { replicas, label } = &deployment.spec else {
            return;
        };
        let rs_name = replicaset_name(&deployment.name);
        cx.with_retries(DEPLOYMENT_CONTROLLER, |cx| {
            let existing = cx.store.get(Kind::ReplicaSet, &rs_name);
            if existing.as_ref().and_then(SimObject::replicas) == Some(*replicas) {
                return Ok(());
            }
            let trigger = cx.tracer.context_of(&deployment).map(|t| t.cpid());
            let pass = cx
                .tracer
                .pass(DEPLOYMENT_CONTROLLER, "reconcile-deployment", trigger);
            let observed: Vec<&SimObject> = existing
                .iter()
                .chain(std::iter::once(&deployment))
                .collect();
            let ctx = cx.tracer.merge_objects(DEPLOYMENT_CONTROLLER, &observed);
            let cpid = ctx.as_ref().map(|t| t.cpid());
            let spec = Spec::ReplicaSet {
                replicas: *replicas,
                owner: deployment.name.clone(),
                label: label.clone(),
            };
            match existing {
                None => {
                    let mut rs = SimObject::new(rs_name.clone(), spec);
                    if let Some(t) = &ctx {
                        inject(&mut rs.annotations, t);
                    }
                    pass.log(
                        cpid,
                        "creating replicaset",
                        [
                            ("replicaset", rs_name.clone()),
                            ("replicas", replicas.to_string()),
                        ],
                    );
                    pass.step(cpid, "create-replicaset", || cx.store.create(rs))?;
                }
                Some(mut rs) => {
                    rs.spec = spec;
                    if let Some(t) = &ctx {
                        inject(&mut rs.annotations, t);
                    }
                    pass.log(
                        cpid,
                        "scaling replicaset",
                        [
                            ("replicaset", rs_name.clone()),
                            ("replicas", replicas.to_string()),
                        ],
                    );
                    pass.step(cpid, "update-replicaset", || cx.store.update(rs))?;
                }
            }
            Ok(())
        });
    }
}
