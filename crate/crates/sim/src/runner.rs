//! Drives a scenario through the object store and the controllers.
//!
//! Deterministic mode interleaves all controllers on the calling thread,
//! picking the next one to run with a seeded RNG and reading time from a
//! logical clock. Realistic mode gives each controller its own thread and
//! uses the wall clock.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::path::PathBuf;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use cascade_trace::{
    Clock, Cpid, IdGenerator, Instrumentation, QueryError, SystemClock, Timestamp, TraceQuery,
    TraceSink, DEFAULT_MAX_ANCESTORS,
};
use chrono::TimeDelta;
use crossbeam_channel::{select, Receiver};
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use crate::controllers::{
    Controller, Ctx, DeploymentController, EndpointsController, Kubectl, Kubelet,
    ReplicaSetController, Scheduler, Wake,
};
use crate::object::{replicaset_name, Kind, Phase, SimObject, Spec};
use crate::scenario::{Scenario, Step};
use crate::store::{ObjectStore, StoreError, WatchEvent};
use crate::trace::{Audit, LogWriter, LogicalClock, Tracer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Deterministic,
    Realistic,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub mode: Mode,
    pub n_ancestors: usize,
    /// Required in deterministic mode. Seeds CPIDs, span IDs and the
    /// controller interleaving.
    pub seed: Option<u64>,
    /// Whether operator actions attach root CPIDs.
    pub traced: bool,
    /// Run the non-instrumented kubelet. Without it Pods stop at Scheduled.
    pub kubelet: bool,
    pub kubelet_delay: Duration,
    pub nodes: Vec<String>,
    pub retry_budget: usize,
    pub barrier_poll: Duration,
    pub barrier_timeout: Duration,
    /// Bound on controller activations per barrier in deterministic mode.
    pub max_steps: u64,
    pub log_path: Option<PathBuf>,
}

impl SimConfig {
    pub fn deterministic(n_ancestors: usize, seed: u64) -> Self {
        SimConfig {
            mode: Mode::Deterministic,
            seed: Some(seed),
            ..Self::realistic(n_ancestors)
        }
    }

    pub fn realistic(n_ancestors: usize) -> Self {
        SimConfig {
            mode: Mode::Realistic,
            n_ancestors,
            seed: None,
            traced: true,
            kubelet: true,
            kubelet_delay: Duration::from_millis(50),
            nodes: (0..3).map(|i| format!("node-{i}")).collect(),
            retry_budget: 5,
            barrier_poll: Duration::from_millis(100),
            barrier_timeout: Duration::from_secs(30),
            max_steps: 1_000_000,
            log_path: None,
        }
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::realistic(DEFAULT_MAX_ANCESTORS)
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("deterministic mode needs a seed")]
    MissingSeed,
    #[error("barrier after step {step} not reached within {waited:?}")]
    Timeout { step: usize, waited: Duration },
    #[error("controllers still busy after {0} activations")]
    StepLimit(u64),
    #[error("step {step}: {source}")]
    Store { step: usize, source: StoreError },
    #[error("cannot open log file: {0}")]
    Log(#[from] std::io::Error),
    #[error(transparent)]
    Query(#[from] QueryError),
}

/// What a run did, as seen from inside the simulator.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scenario: String,
    pub root_cpids: Vec<Cpid>,
    pub wall_time: Duration,
    pub merges_by_controller: BTreeMap<String, usize>,
    pub audited_writes: u64,
    pub audit_violations: Vec<String>,
    pub controller_errors: Vec<String>,
    pub log_records: u64,
}

/// A run's footprint on the trace server.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub mode: Mode,
    pub n_ancestors: usize,
    pub seed: Option<u64>,
    pub traced: bool,
    /// Merge mergelogs (two or more sources) attributable to the run.
    pub mergelog_count: usize,
    /// Root registrations attributable to the run.
    pub registration_count: usize,
    pub span_count: usize,
    pub mergelogs_by_controller: BTreeMap<String, usize>,
    pub wall_time_ms: f64,
    pub root_cpids: Vec<Cpid>,
    pub audited_writes: u64,
    pub audit_violations: Vec<String>,
    pub controller_errors: Vec<String>,
}

impl ScenarioReport {
    /// Counts what the server holds for the run's roots.
    pub fn collect(
        config: &SimConfig,
        outcome: &RunOutcome,
        query: &dyn TraceQuery,
    ) -> Result<Self, QueryError> {
        let mut related = BTreeSet::new();
        for root in &outcome.root_cpids {
            related.extend(query.related(root)?);
        }
        let (mut merges, mut registrations) = (0, 0);
        for log in query.mergelogs(None)? {
            if related.contains(&log.new_cpid) {
                if log.is_registration() {
                    registrations += 1;
                } else {
                    merges += 1;
                }
            }
        }
        let span_count = query
            .spans(None)?
            .iter()
            .filter(|s| related.contains(&s.cpid))
            .count();
        Ok(ScenarioReport {
            scenario: outcome.scenario.clone(),
            mode: config.mode,
            n_ancestors: config.n_ancestors,
            seed: config.seed,
            traced: config.traced,
            mergelog_count: merges,
            registration_count: registrations,
            span_count,
            mergelogs_by_controller: outcome.merges_by_controller.clone(),
            wall_time_ms: outcome.wall_time.as_secs_f64() * 1e3,
            root_cpids: outcome.root_cpids.clone(),
            audited_writes: outcome.audited_writes,
            audit_violations: outcome.audit_violations.clone(),
            controller_errors: outcome.controller_errors.clone(),
        })
    }
}

/// Runs `scenario` and reads the report back from `query`.
pub fn run_scenario(
    config: &SimConfig,
    scenario: &Scenario,
    sink: Arc<dyn TraceSink>,
    query: &dyn TraceQuery,
) -> Result<ScenarioReport, SimError> {
    let outcome = Simulation::new(config.clone(), sink)?.run(scenario)?;
    Ok(ScenarioReport::collect(config, &outcome, query)?)
}

/// One simulated cluster, good for one scenario run.
pub struct Simulation {
    config: SimConfig,
    store: Arc<ObjectStore>,
    tracer: Arc<Tracer>,
    audit: Arc<Audit>,
    clock: Option<Arc<LogicalClock>>,
}

impl Simulation {
    pub fn new(config: SimConfig, sink: Arc<dyn TraceSink>) -> Result<Self, SimError> {
        if config.mode == Mode::Deterministic && config.seed.is_none() {
            return Err(SimError::MissingSeed);
        }
        let ids = Arc::new(match config.seed {
            Some(s) => IdGenerator::seeded(s),
            None => IdGenerator::from_entropy(),
        });
        let logical = (config.mode == Mode::Deterministic).then(|| Arc::new(LogicalClock::new()));
        let clock: Arc<dyn Clock> = match &logical {
            Some(c) => c.clone(),
            None => Arc::new(SystemClock),
        };
        let log = Arc::new(match &config.log_path {
            Some(p) => LogWriter::create(p)?,
            None => LogWriter::discard(),
        });
        let tracer = Arc::new(Tracer::new(
            Instrumentation::new(config.n_ancestors, ids, clock),
            sink,
            log,
        ));
        let store = Arc::new(ObjectStore::new());
        let audit = Audit::new(config.n_ancestors);
        store.add_write_hook(audit.hook());
        Ok(Simulation {
            config,
            store,
            tracer,
            audit,
            clock: logical,
        })
    }

    pub fn store(&self) -> &Arc<ObjectStore> {
        &self.store
    }

    fn controllers(&self) -> Vec<Box<dyn Controller>> {
        let mut out: Vec<Box<dyn Controller>> = vec![
            Box::new(DeploymentController::new()),
            Box::new(ReplicaSetController::new()),
            Box::new(Scheduler::new(self.config.nodes.clone())),
            Box::new(EndpointsController::new()),
        ];
        if self.config.kubelet {
            out.push(Box::new(Kubelet::new(self.config.kubelet_delay)));
        }
        out
    }

    pub fn run(self, scenario: &Scenario) -> Result<RunOutcome, SimError> {
        let started = Instant::now();
        let controllers: Vec<(Box<dyn Controller>, Receiver<WatchEvent>)> = self
            .controllers()
            .into_iter()
            .map(|c| {
                let rx = self.store.watch(c.kinds());
                (c, rx)
            })
            .collect();
        let errors = Arc::new(Mutex::new(Vec::new()));
        let mut engine: Box<dyn Engine> = match self.config.mode {
            Mode::Deterministic => Box::new(LockstepEngine {
                controllers,
                timers: BinaryHeap::new(),
                seq: 0,
                rng: ChaCha20Rng::seed_from_u64(self.config.seed.unwrap_or_default() ^ 0x5c4e_d011),
                clock: self
                    .clock
                    .clone()
                    .expect("logical clock in deterministic mode"),
                max_steps: self.config.max_steps,
            }),
            Mode::Realistic => Box::new(ThreadedEngine::start(
                controllers,
                self.store.clone(),
                self.tracer.clone(),
                self.config.retry_budget,
                errors.clone(),
            )),
        };

        let result = self.drive(scenario, engine.as_mut(), &errors);
        engine.stop(&self.store, &self.tracer, self.config.retry_budget, &errors);
        self.tracer.sink().flush();
        self.tracer.log_writer().flush()?;
        result?;

        let errors = errors.lock().clone();
        Ok(RunOutcome {
            scenario: scenario.name.clone(),
            root_cpids: self.tracer.roots(),
            wall_time: started.elapsed(),
            merges_by_controller: self.tracer.merges_by_controller(),
            audited_writes: self.audit.checked(),
            audit_violations: self.audit.violations(),
            controller_errors: errors,
            log_records: self.tracer.log_writer().written(),
        })
    }

    fn drive(
        &self,
        scenario: &Scenario,
        engine: &mut dyn Engine,
        errors: &Mutex<Vec<String>>,
    ) -> Result<(), SimError> {
        let kubectl = Kubectl::new(&self.store, &self.tracer, self.config.retry_budget);
        for (i, step) in scenario.steps.iter().enumerate() {
            let store_err = |source| SimError::Store { step: i, source };
            match step {
                Step::Create { traced, .. } => {
                    let obj = step.object().expect("create step builds an object");
                    kubectl
                        .apply(obj, *traced && self.config.traced)
                        .map_err(store_err)?;
                }
                Step::Scale {
                    name,
                    replicas,
                    traced,
                } => {
                    kubectl
                        .scale(name, *replicas, *traced && self.config.traced)
                        .map_err(store_err)?;
                }
                Step::WaitReady => {
                    let accept_scheduled = !self.config.kubelet;
                    engine
                        .wait_until(
                            &|s: &ObjectStore| converged(s, accept_scheduled),
                            &self.store,
                            &self.tracer,
                            &self.config,
                            errors,
                        )
                        .map_err(|e| match e {
                            SimError::Timeout { waited, .. } => {
                                SimError::Timeout { step: i, waited }
                            }
                            other => other,
                        })?;
                }
            }
        }
        Ok(())
    }
}

/// Every Deployment has its ReplicaSet and the right number of ready Pods,
/// and every Service's Endpoints lists exactly its ready Pods.
pub fn converged(store: &ObjectStore, accept_scheduled: bool) -> bool {
    let pods = store.list(Kind::Pod);
    let is_ready = |p: &SimObject| match p.pod_phase() {
        Some(Phase::Ready) => true,
        Some(Phase::Scheduled) => accept_scheduled,
        _ => false,
    };
    for d in store.list(Kind::Deployment) {
        let rs_name = replicaset_name(&d.name);
        let Some(rs) = store.get(Kind::ReplicaSet, &rs_name) else {
            return false;
        };
        if rs.replicas() != d.replicas() {
            return false;
        }
        let owned: Vec<&SimObject> = pods
            .iter()
            .filter(|p| p.pod_owner() == Some(rs_name.as_str()))
            .collect();
        if owned.len() as u32 != d.replicas().unwrap_or(0) || !owned.iter().all(|p| is_ready(p)) {
            return false;
        }
    }
    for svc in store.list(Kind::Service) {
        let Spec::Service { selector } = &svc.spec else {
            continue;
        };
        let want: Vec<String> = pods
            .iter()
            .filter(|p| {
                matches!(&p.spec, Spec::Pod { label, phase: Phase::Ready, .. } if label == selector)
            })
            .map(|p| p.name.clone())
            .collect();
        match store.get(Kind::Endpoints, &svc.name).map(|e| e.spec) {
            Some(Spec::Endpoints { ready }) if ready == want => {}
            _ => return false,
        }
    }
    true
}

type Condition<'a> = &'a dyn Fn(&ObjectStore) -> bool;

trait Engine {
    fn wait_until(
        &mut self,
        cond: Condition<'_>,
        store: &ObjectStore,
        tracer: &Tracer,
        config: &SimConfig,
        errors: &Mutex<Vec<String>>,
    ) -> Result<(), SimError>;

    fn stop(
        &mut self,
        store: &ObjectStore,
        tracer: &Tracer,
        retry_budget: usize,
        errors: &Mutex<Vec<String>>,
    );
}

fn dispatch(
    controller: &mut dyn Controller,
    wake: Wake,
    store: &ObjectStore,
    tracer: &Tracer,
    retry_budget: usize,
    errors: &Mutex<Vec<String>>,
) -> Vec<(Duration, String)> {
    let mut cx = Ctx::new(store, tracer, retry_budget);
    controller.handle(wake, &mut cx);
    let errs = cx.take_errors();
    if !errs.is_empty() {
        errors.lock().extend(errs);
    }
    cx.take_timers()
}

struct LockstepEngine {
    controllers: Vec<(Box<dyn Controller>, Receiver<WatchEvent>)>,
    timers: BinaryHeap<Reverse<(Timestamp, u64, usize, String)>>,
    seq: u64,
    rng: ChaCha20Rng,
    clock: Arc<LogicalClock>,
    max_steps: u64,
}

impl LockstepEngine {
    /// Runs controllers until no event is queued and no timer is pending.
    fn run_to_quiescence(
        &mut self,
        store: &ObjectStore,
        tracer: &Tracer,
        retry_budget: usize,
        errors: &Mutex<Vec<String>>,
    ) -> Result<(), SimError> {
        let mut steps = 0u64;
        loop {
            // Candidates: controllers with queued events, then a due timer.
            let mut ready: Vec<Option<usize>> = self
                .controllers
                .iter()
                .enumerate()
                .filter(|(_, (_, rx))| !rx.is_empty())
                .map(|(i, _)| Some(i))
                .collect();
            let timer_due = self
                .timers
                .peek()
                .is_some_and(|Reverse((at, ..))| *at <= self.clock.peek());
            if timer_due {
                ready.push(None);
            }
            let pick = if ready.is_empty() {
                match self.timers.peek() {
                    Some(Reverse((at, ..))) => {
                        self.clock.advance_to(*at);
                        None
                    }
                    None => return Ok(()),
                }
            } else {
                ready[self.rng.random_range(0..ready.len())]
            };

            let (idx, wake) = match pick {
                Some(i) => {
                    let ev = self.controllers[i].1.try_recv().expect("queued event");
                    (i, Wake::Event(ev))
                }
                None => {
                    let Reverse((_, _, i, key)) = self.timers.pop().expect("pending timer");
                    (i, Wake::Timer(key))
                }
            };
            let timers = dispatch(
                self.controllers[idx].0.as_mut(),
                wake,
                store,
                tracer,
                retry_budget,
                errors,
            );
            for (delay, key) in timers {
                let at = self.clock.peek() + TimeDelta::from_std(delay).unwrap_or(TimeDelta::MAX);
                self.seq += 1;
                self.timers.push(Reverse((at, self.seq, idx, key)));
            }
            steps += 1;
            if steps > self.max_steps {
                return Err(SimError::StepLimit(self.max_steps));
            }
        }
    }
}

impl Engine for LockstepEngine {
    fn wait_until(
        &mut self,
        cond: Condition<'_>,
        store: &ObjectStore,
        tracer: &Tracer,
        config: &SimConfig,
        errors: &Mutex<Vec<String>>,
    ) -> Result<(), SimError> {
        self.run_to_quiescence(store, tracer, config.retry_budget, errors)?;
        if cond(store) {
            Ok(())
        } else {
            // Quiescent but not converged: nothing will ever change.
            Err(SimError::Timeout {
                step: 0,
                waited: Duration::ZERO,
            })
        }
    }

    fn stop(
        &mut self,
        store: &ObjectStore,
        tracer: &Tracer,
        retry_budget: usize,
        errors: &Mutex<Vec<String>>,
    ) {
        let _ = self.run_to_quiescence(store, tracer, retry_budget, errors);
    }
}

struct ThreadedEngine {
    stop: Option<crossbeam_channel::Sender<()>>,
    workers: Vec<thread::JoinHandle<()>>,
}

impl ThreadedEngine {
    fn start(
        controllers: Vec<(Box<dyn Controller>, Receiver<WatchEvent>)>,
        store: Arc<ObjectStore>,
        tracer: Arc<Tracer>,
        retry_budget: usize,
        errors: Arc<Mutex<Vec<String>>>,
    ) -> Self {
        let (stop_tx, stop_rx) = crossbeam_channel::bounded::<()>(0);
        let workers = controllers
            .into_iter()
            .map(|(mut ctrl, rx)| {
                let (store, tracer, errors, stop_rx) = (
                    store.clone(),
                    tracer.clone(),
                    errors.clone(),
                    stop_rx.clone(),
                );
                thread::Builder::new()
                    .name(ctrl.name().to_string())
                    .spawn(move || {
                        let mut timers: BinaryHeap<Reverse<(Instant, u64, String)>> =
                            BinaryHeap::new();
                        let mut seq = 0u64;
                        let mut run =
                            |ctrl: &mut Box<dyn Controller>, wake, timers: &mut BinaryHeap<_>| {
                                for (delay, key) in dispatch(
                                    ctrl.as_mut(),
                                    wake,
                                    &store,
                                    &tracer,
                                    retry_budget,
                                    &errors,
                                ) {
                                    seq += 1;
                                    timers.push(Reverse((Instant::now() + delay, seq, key)));
                                }
                            };
                        loop {
                            let wait = timers
                                .peek()
                                .map(|Reverse((at, ..))| {
                                    at.saturating_duration_since(Instant::now())
                                })
                                .unwrap_or(Duration::from_millis(100));
                            select! {
                                recv(rx) -> ev => match ev {
                                    Ok(ev) => run(&mut ctrl, Wake::Event(ev), &mut timers),
                                    Err(_) => return,
                                },
                                recv(stop_rx) -> _ => {
                                    // Finish what is already queued, then exit.
                                    while let Ok(ev) = rx.try_recv() {
                                        run(&mut ctrl, Wake::Event(ev), &mut timers);
                                    }
                                    return;
                                },
                                default(wait) => {}
                            }
                            while timers
                                .peek()
                                .is_some_and(|Reverse((at, ..))| *at <= Instant::now())
                            {
                                let Reverse((_, _, key)) = timers.pop().expect("due timer");
                                run(&mut ctrl, Wake::Timer(key), &mut timers);
                            }
                        }
                    })
                    .expect("spawn controller thread")
            })
            .collect();
        ThreadedEngine {
            stop: Some(stop_tx),
            workers,
        }
    }
}

impl Engine for ThreadedEngine {
    fn wait_until(
        &mut self,
        cond: Condition<'_>,
        store: &ObjectStore,
        _tracer: &Tracer,
        config: &SimConfig,
        _errors: &Mutex<Vec<String>>,
    ) -> Result<(), SimError> {
        let started = Instant::now();
        loop {
            if cond(store) {
                return Ok(());
            }
            if started.elapsed() >= config.barrier_timeout {
                return Err(SimError::Timeout {
                    step: 0,
                    waited: started.elapsed(),
                });
            }
            thread::sleep(config.barrier_poll);
        }
    }

    fn stop(
        &mut self,
        _store: &ObjectStore,
        _tracer: &Tracer,
        _retry_budget: usize,
        _errors: &Mutex<Vec<String>>,
    ) {
        self.stop.take();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ThreadedEngine {
    fn drop(&mut self) {
        self.stop.take();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}
