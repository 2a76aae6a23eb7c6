//! Glue between controllers and the instrumentation library: merging observed
//! contexts, shipping records, reconcile spans, JSON Lines logs, the logical
//! clock and the annotation audit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::Arc;

use cascade_trace::time::rfc3339_micros;
use cascade_trace::{
    extract, Clock, Cpid, Instrumentation, OpenSpan, Timestamp, TraceContext, TraceSink,
    ANCESTORS_ANNOTATION, CPID_ANNOTATION,
};
use chrono::{TimeDelta, TimeZone, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::object::SimObject;
use crate::store::WriteHook;

/// Clock for deterministic runs: starts at a fixed instant and moves forward
/// by a fixed step on every reading.
#[derive(Debug)]
pub struct LogicalClock {
    micros: AtomicI64,
    step: i64,
}

impl LogicalClock {
    pub fn new() -> Self {
        LogicalClock {
            micros: AtomicI64::new(0),
            step: 10,
        }
    }

    fn epoch() -> Timestamp {
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
    }

    /// Reads without advancing.
    pub fn peek(&self) -> Timestamp {
        Self::epoch() + TimeDelta::microseconds(self.micros.load(Ordering::SeqCst))
    }

    /// Jumps forward to `t`; never moves backwards.
    pub fn advance_to(&self, t: Timestamp) {
        let target = (t - Self::epoch()).num_microseconds().unwrap_or(i64::MAX);
        self.micros.fetch_max(target, Ordering::SeqCst);
    }
}

impl Default for LogicalClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for LogicalClock {
    fn now(&self) -> Timestamp {
        let at = self.micros.fetch_add(self.step, Ordering::SeqCst);
        Self::epoch() + TimeDelta::microseconds(at)
    }
}

/// One controller log line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    #[serde(with = "rfc3339_micros")]
    pub ts: Timestamp,
    pub controller: String,
    pub cpid: Cpid,
    pub msg: String,
    #[serde(flatten)]
    pub fields: BTreeMap<String, String>,
}

/// Appends [`LogRecord`]s to a JSON Lines file, or discards them.
pub struct LogWriter {
    out: Mutex<Option<BufWriter<File>>>,
    written: AtomicU64,
}

impl LogWriter {
    pub fn discard() -> Self {
        LogWriter {
            out: Mutex::new(None),
            written: AtomicU64::new(0),
        }
    }

    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(LogWriter {
            out: Mutex::new(Some(BufWriter::new(File::create(path)?))),
            written: AtomicU64::new(0),
        })
    }

    pub fn write(&self, record: &LogRecord) {
        self.written.fetch_add(1, Ordering::Relaxed);
        if let Some(out) = self.out.lock().as_mut() {
            let line = serde_json::to_string(record).expect("log record serializes");
            let _ = writeln!(out, "{line}");
        }
    }

    pub fn written(&self) -> u64 {
        self.written.load(Ordering::Relaxed)
    }

    pub fn flush(&self) -> io::Result<()> {
        match self.out.lock().as_mut() {
            Some(out) => out.flush(),
            None => Ok(()),
        }
    }
}

/// Reads a JSON Lines log file back.
pub fn read_log(path: &Path) -> io::Result<Vec<LogRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)))
        .collect()
}

/// Everything a controller needs to trace its work.
pub struct Tracer {
    inst: Instrumentation,
    sink: Arc<dyn TraceSink>,
    log: Arc<LogWriter>,
    merges: Mutex<BTreeMap<String, usize>>,
    roots: Mutex<Vec<Cpid>>,
}

impl Tracer {
    pub fn new(inst: Instrumentation, sink: Arc<dyn TraceSink>, log: Arc<LogWriter>) -> Self {
        Tracer {
            inst,
            sink,
            log,
            merges: Mutex::new(BTreeMap::new()),
            roots: Mutex::new(Vec::new()),
        }
    }

    pub fn instrumentation(&self) -> &Instrumentation {
        &self.inst
    }

    pub fn sink(&self) -> &Arc<dyn TraceSink> {
        &self.sink
    }

    pub fn log_writer(&self) -> &Arc<LogWriter> {
        &self.log
    }

    /// Context carried by `obj`. A malformed context counts as none.
    pub fn context_of(&self, obj: &SimObject) -> Option<TraceContext> {
        self.inst.extract(&obj.annotations).ok().flatten()
    }

    /// Registers a fresh root CPID.
    pub fn new_root(&self) -> TraceContext {
        let (tctx, log) = self.inst.new_root_context();
        self.sink.send_mergelog(log);
        self.roots.lock().push(tctx.cpid());
        tctx
    }

    /// Merges the contexts of `observed`, sending a mergelog when required.
    /// `None` when none of them is traced.
    pub fn merge_objects(&self, controller: &str, observed: &[&SimObject]) -> Option<TraceContext> {
        let ctxs: Vec<TraceContext> = observed.iter().filter_map(|o| self.context_of(o)).collect();
        self.merge(controller, &ctxs)
    }

    pub fn merge(&self, controller: &str, ctxs: &[TraceContext]) -> Option<TraceContext> {
        if ctxs.is_empty() {
            return None;
        }
        let (tctx, log) = self.inst.merge(ctxs).ok()?;
        if let Some(log) = log {
            *self
                .merges
                .lock()
                .entry(controller.to_string())
                .or_default() += 1;
            self.log(
                controller,
                tctx.cpid(),
                "merged trace contexts",
                [(
                    "sources",
                    log.source_cpids
                        .iter()
                        .map(Cpid::to_string)
                        .collect::<Vec<_>>()
                        .join(","),
                )],
            );
            self.sink.send_mergelog(log);
        }
        Some(tctx)
    }

    /// Merge mergelogs issued so far, by controller.
    pub fn merges_by_controller(&self) -> BTreeMap<String, usize> {
        self.merges.lock().clone()
    }

    pub fn roots(&self) -> Vec<Cpid> {
        self.roots.lock().clone()
    }

    pub fn log<'a>(
        &self,
        controller: &str,
        cpid: Cpid,
        msg: &str,
        fields: impl IntoIterator<Item = (&'a str, String)>,
    ) {
        self.log.write(&LogRecord {
            ts: cascade_trace::time::truncate_micros(self.inst.now()),
            controller: controller.to_string(),
            cpid,
            msg: msg.to_string(),
            fields: fields
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        });
    }

    /// Opens the root span of a reconcile pass triggered by an object
    /// carrying `trigger`.
    pub fn pass(&self, controller: &'static str, name: &str, trigger: Option<Cpid>) -> Pass<'_> {
        let root = trigger.map(|c| self.inst.start_span(c, controller, name, None));
        Pass {
            tracer: self,
            controller,
            root,
        }
    }
}

/// Spans of one reconcile pass. The root span closes on drop.
pub struct Pass<'a> {
    tracer: &'a Tracer,
    controller: &'static str,
    root: Option<OpenSpan>,
}

impl Pass<'_> {
    /// Runs `f` inside a child span tagged with `cpid`, if any.
    pub fn step<R>(&self, cpid: Option<Cpid>, name: &str, f: impl FnOnce() -> R) -> R {
        let parent = self.root.as_ref().map(OpenSpan::span_id);
        let open = cpid.map(|c| {
            self.tracer
                .inst
                .start_span(c, self.controller, name, parent)
        });
        let out = f();
        if let Some(open) = open {
            self.tracer.sink.send_span(self.tracer.inst.end_span(open));
        }
        out
    }

    pub fn log<'a>(
        &self,
        cpid: Option<Cpid>,
        msg: &str,
        fields: impl IntoIterator<Item = (&'a str, String)>,
    ) {
        if let Some(c) = cpid {
            self.tracer.log(self.controller, c, msg, fields);
        }
    }
}

impl Drop for Pass<'_> {
    fn drop(&mut self) {
        if let Some(open) = self.root.take() {
            self.tracer.sink.send_span(self.tracer.inst.end_span(open));
        }
    }
}

/// Checks every written object: at most one CPID, ancestors within bound.
pub struct Audit {
    max_ancestors: usize,
    checked: AtomicU64,
    violations: Mutex<Vec<String>>,
}

impl Audit {
    pub fn new(max_ancestors: usize) -> Arc<Self> {
        Arc::new(Audit {
            max_ancestors,
            checked: AtomicU64::new(0),
            violations: Mutex::new(Vec::new()),
        })
    }

    pub fn hook(self: &Arc<Self>) -> WriteHook {
        let me = self.clone();
        Arc::new(move |obj| me.check(obj))
    }

    pub fn check(&self, obj: &SimObject) {
        self.checked.fetch_add(1, Ordering::Relaxed);
        let at = format!("{}/{}@{}", obj.kind(), obj.name, obj.resource_version);
        let mut found = Vec::new();
        let trace_keys: Vec<&String> = obj
            .annotations
            .keys()
            .filter(|k| k.starts_with("cascade-trace/"))
            .collect();
        for k in &trace_keys {
            if k.as_str() != CPID_ANNOTATION && k.as_str() != ANCESTORS_ANNOTATION {
                found.push(format!("{at}: unexpected trace annotation {k}"));
            }
        }
        match extract(&obj.annotations, usize::MAX) {
            Ok(Some(t)) if t.ancestors().len() > self.max_ancestors => found.push(format!(
                "{at}: {} ancestors exceed bound {}",
                t.ancestors().len(),
                self.max_ancestors
            )),
            Ok(None) if !trace_keys.is_empty() => {
                found.push(format!("{at}: ancestors without a CPID"))
            }
            Err(e) => found.push(format!("{at}: {e}")),
            _ => {}
        }
        if !found.is_empty() {
            self.violations.lock().extend(found);
        }
    }

    pub fn checked(&self) -> u64 {
        self.checked.load(Ordering::Relaxed)
    }

    pub fn violations(&self) -> Vec<String> {
        self.violations.lock().clone()
    }
}
