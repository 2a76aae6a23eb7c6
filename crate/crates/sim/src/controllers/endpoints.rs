use cascade_trace::{inject, Cpid};

use super::{Controller, Ctx, Wake, ENDPOINTS_CONTROLLER};
use crate::object::{Kind, Phase, SimObject, Spec};
use crate::store::EventType;

/// Keeps an Endpoints object per Service listing the Ready Pods it selects.
#[derive(Debug, Default)]
pub struct EndpointsController;

impl EndpointsController {
    pub fn new() -> Self {
        EndpointsController
    }

    fn reconcile(&self, service: &str, trigger: Option<Cpid>, cx: &mut Ctx<'_>) {
        cx.with_retries(ENDPOINTS_CONTROLLER, |cx| {
            let Some(svc) = cx.store.get(Kind::Service, service) else {
                return Ok(());
            };
            let Spec::Service { selector } = &svc.spec else {
                return Ok(());
            };
            let ready: Vec<SimObject> = cx
                .store
                .list(Kind::Pod)
                .into_iter()
                .filter(|p| {
                    matches!(&p.spec, Spec::Pod { label, phase: Phase::Ready, .. } if label == selector)
                })
                .collect();
            let names: Vec<String> = ready.iter().map(|p| p.name.clone()).collect();
            let existing = cx.store.get(Kind::Endpoints, service);
            if let Some(Spec::Endpoints { ready }) = existing.as_ref().map(|e| &e.spec) {
                if *ready == names {
                    return Ok(());
                }
            }

            let pass = cx
                .tracer
                .pass(ENDPOINTS_CONTROLLER, "reconcile-endpoints", trigger);
            let observed: Vec<&SimObject> = existing
                .iter()
                .chain(&ready)
                .chain(std::iter::once(&svc))
                .collect();
            let ctx = cx.tracer.merge_objects(ENDPOINTS_CONTROLLER, &observed);
            let cpid = ctx.as_ref().map(|t| t.cpid());
            let spec = Spec::Endpoints {
                ready: names.clone(),
            };
            pass.log(cpid, "updating endpoints", [
                ("service", service.to_string()),
                ("ready", names.join(",")),
            ]);
            match existing {
                None => {
                    let mut ep = SimObject::new(service, spec);
                    if let Some(t) = &ctx {
                        inject(&mut ep.annotations, t);
                    }
                    pass.step(cpid, "create-endpoints", || cx.store.create(ep))?;
                }
                Some(mut ep) => {
                    ep.spec = spec;
                    if let Some(t) = &ctx {
                        inject(&mut ep.annotations, t);
                    }
                    pass.step(cpid, "update-endpoints", || cx.store.update(ep))?;
                }
            }
            Ok(())
        });
    }
}

impl Controller for EndpointsController {
    fn name(&self) -> &'static str {
        ENDPOINTS_CONTROLLER
    }

    fn kinds(&self) -> &'static [Kind] {
        &[Kind::Service, Kind::Pod]
    }

    fn handle(&mut self, wake: Wake, cx: &mut Ctx<'_>) {
        let Wake::Event(ev) = wake else { return };
        let trigger = cx.tracer.context_of(&ev.object).map(|t| t.cpid());
        match &ev.object.spec {
            Spec::Service { .. } if ev.event_type != EventType::Deleted => {
                self.reconcile(&ev.object.name, trigger, cx)
            }
            Spec::Pod { label, .. } => {
                let services: Vec<String> = cx
                    .store
                    .list(Kind::Service)
                    .into_iter()
                    .filter(|s| matches!(&s.spec, Spec::Service { selector } if selector == label))
                    .map(|s| s.name)
                    .collect();
                for s in services {
                    self.reconcile(&s, trigger, cx);
                }
            }
            _ => {}
        }
    }
}
