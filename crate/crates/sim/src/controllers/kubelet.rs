use std::time::Duration;

use super::{Controller, Ctx, Wake, KUBELET};
use crate::object::{Kind, Phase, Spec};
use crate::store::{EventType, StoreError};

/// Marks scheduled Pods ready after a fixed delay.
///
/// Not instrumented: it never reads or writes trace annotations, and copies
/// them through untouched on update.
#[derive(Debug)]
pub struct Kubelet {
    delay: Duration,
}

impl Kubelet {
    pub fn new(delay: Duration) -> Self {
        Kubelet { delay }
    }
}

impl Controller for Kubelet {
    fn name(&self) -> &'static str {
        KUBELET
    }

    fn kinds(&self) -> &'static [Kind] {
        &[Kind::Pod]
    }

    fn handle(&mut self, wake: Wake, cx: &mut Ctx<'_>) {
        match wake {
            Wake::Event(ev) => {
                if ev.event_type != EventType::Deleted
                    && ev.object.pod_phase() == Some(Phase::Scheduled)
                {
                    cx.after(self.delay, ev.object.name);
                }
            }
            Wake::Timer(name) => cx.with_retries(KUBELET, |cx| {
                let Some(mut pod) = cx.store.get(Kind::Pod, &name) else {
                    return Ok(());
                };
                let Spec::Pod { phase, .. } = &mut pod.spec else {
                    return Ok(());
                };
                if *phase != Phase::Scheduled {
                    return Ok(());
                }
                *phase = Phase::Ready;
                match cx.store.update(pod) {
                    Ok(_) | Err(StoreError::NotFound { .. }) => Ok(()),
                    Err(e) => Err(e),
                }
            }),
        }
    }
}
