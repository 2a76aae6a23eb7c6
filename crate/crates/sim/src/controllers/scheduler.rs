use cascade_trace::inject;

use super::{Controller, Ctx, Wake, SCHEDULER};
use crate::object::{Kind, Phase, Spec};
use crate::store::{EventType, StoreError};

/// Binds pending Pods to nodes round-robin.
#[derive(Debug)]
pub struct Scheduler {
    nodes: Vec<String>,
    next: usize,
}

impl Scheduler {
    pub fn new(nodes: Vec<String>) -> Self {
        assert!(!nodes.is_empty(), "scheduler needs at least one node");
        Scheduler { nodes, next: 0 }
    }
}

impl Controller for Scheduler {
    fn name(&self) -> &'static str {
        SCHEDULER
    }

    fn kinds(&self) -> &'static [Kind] {
        &[Kind::Pod]
    }

    fn handle(&mut self, wake: Wake, cx: &mut Ctx<'_>) {
        let Wake::Event(ev) = wake else { return };
        if ev.event_type == EventType::Deleted
            || !matches!(
                ev.object.spec,
                Spec::Pod {
                    node_name: None,
                    ..
                }
            )
        {
            return;
        }
        let name = ev.object.name;
        let nodes = &self.nodes;
        let next = &mut self.next;
        cx.with_retries(SCHEDULER, |cx| {
            let Some(mut pod) = cx.store.get(Kind::Pod, &name) else {
                return Ok(());
            };
            let Spec::Pod {
                node_name, phase, ..
            } = &mut pod.spec
            else {
                return Ok(());
            };
            if node_name.is_some() {
                return Ok(());
            }
            let node = nodes[*next % nodes.len()].clone();
            *node_name = Some(node.clone());
            *phase = Phase::Scheduled;

            let trigger = cx.tracer.context_of(&pod).map(|t| t.cpid());
            let pass = cx.tracer.pass(SCHEDULER, "schedule-pod", trigger);
            // A single observed object: the merge is the identity.
            let ctx = cx.tracer.merge_objects(SCHEDULER, &[&pod]);
            if let Some(t) = &ctx {
                inject(&mut pod.annotations, t);
            }
            let cpid = ctx.map(|t| t.cpid());
            pass.log(cpid, "binding pod", [("pod", name.clone()), ("node", node)]);
            match pass.step(cpid, "bind-pod", || cx.store.update(pod)) {
                Ok(_) => {
                    *next += 1;
                    Ok(())
                }
                Err(StoreError::NotFound { .. }) => Ok(()),
                Err(e) => Err(e),
            }
        });
    }
}
