use std::collections::HashMap;

use cascade_trace::inject;

use super::{Controller, Ctx, Wake, REPLICASET_CONTROLLER};
use crate::object::{pod_name, Kind, Phase, SimObject, Spec};
use crate::store::EventType;

/// Creates and deletes Pods so each ReplicaSet owns `replicas` of them.
///
/// Scale-up merges the ReplicaSet's context with those of the Pods it owns
/// and stamps the result on the new Pods. Scale-down deletes the newest Pods
/// and writes no context.
#[derive(Debug, Default)]
pub struct ReplicaSetController {
    next_index: HashMap<String, u64>,
}

impl ReplicaSetController {
    pub fn new() -> Self {
        Self::default()
    }

    fn reconcile(&mut self, rs: &SimObject, cx: &mut Ctx<'_>) {
        let Spec::ReplicaSet {
            replicas, label, ..
        } = &rs.spec
        else {
            return;
        };
        let want = *replicas as usize;
        let next_index = &mut self.next_index;
        cx.with_retries(REPLICASET_CONTROLLER, |cx| {
            // Pod names sort in creation order.
            let owned: Vec<SimObject> = cx
                .store
                .list(Kind::Pod)
                .into_iter()
                .filter(|p| p.pod_owner() == Some(rs.name.as_str()))
                .collect();
            if owned.len() == want {
                return Ok(());
            }
            let trigger = cx.tracer.context_of(rs).map(|t| t.cpid());
            let pass = cx
                .tracer
                .pass(REPLICASET_CONTROLLER, "reconcile-replicaset", trigger);
            if owned.len() < want {
                let observed: Vec<&SimObject> = owned.iter().chain(std::iter::once(rs)).collect();
                let ctx = cx.tracer.merge_objects(REPLICASET_CONTROLLER, &observed);
                let cpid = ctx.as_ref().map(|t| t.cpid());
                for _ in owned.len()..want {
                    let index = next_index.entry(rs.name.clone()).or_insert(0);
                    *index += 1;
                    let mut pod = SimObject::new(
                        pod_name(&rs.name, *index),
                        Spec::Pod {
                            owner: rs.name.clone(),
                            label: label.clone(),
                            node_name: None,
                            phase: Phase::Pending,
                        },
                    );
                    if let Some(t) = &ctx {
                        inject(&mut pod.annotations, t);
                    }
                    pass.log(cpid, "creating pod", [("pod", pod.name.clone())]);
                    pass.step(cpid, "create-pod", || cx.store.create(pod))?;
                }
            } else {
                for pod in owned.iter().rev().take(owned.len() - want) {
                    pass.log(trigger, "deleting pod", [("pod", pod.name.clone())]);
                    pass.step(trigger, "delete-pod", || {
                        cx.store.delete(Kind::Pod, &pod.name)
                    })?;
                }
            }
            Ok(())
        });
    }
}

impl Controller for ReplicaSetController {
    fn name(&self) -> &'static str {
        REPLICASET_CONTROLLER
    }

    fn kinds(&self) -> &'static [Kind] {
        &[Kind::ReplicaSet, Kind::Pod]
    }

    fn handle(&mut self, wake: Wake, cx: &mut Ctx<'_>) {
        let Wake::Event(ev) = wake else { return };
        match ev.object.kind() {
            Kind::ReplicaSet if ev.event_type != EventType::Deleted => {
                self.reconcile(&ev.object, cx)
            }
            Kind::Pod => {
                let owner = ev.object.pod_owner().unwrap_or_default();
                if let Some(rs) = cx.store.get(Kind::ReplicaSet, owner) {
                    self.reconcile(&rs, cx);
                }
            }
            _ => {}
        }
    }
}
