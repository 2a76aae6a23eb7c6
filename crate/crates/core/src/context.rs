//! Trace contexts carried on objects and the merge-or-replace decision.
//!
//! An object carries exactly one CPID plus a short, newest-first list of
//! ancestor CPIDs. When a controller writes an object it merges the contexts
//! of everything it observed: if one observed CPID already descends from all
//! the others the object simply takes that CPID, otherwise a fresh CPID is
//! minted and a [`Mergelog`] records where it came from.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use thiserror::Error;

use crate::cpid::{Cpid, IdGenerator, SpanId};
use crate::record::{Mergelog, Span};
use crate::time::{self, Clock, SystemClock, Timestamp};

pub const CPID_ANNOTATION: &str = "cascade-trace/cpid";
pub const ANCESTORS_ANNOTATION: &str = "cascade-trace/ancestors";

/// Default bound on the ancestor list.
pub const DEFAULT_MAX_ANCESTORS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContextError {
    #[error("malformed trace context: {0}")]
    Malformed(String),
    #[error("merge needs at least one trace context")]
    EmptyInput,
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct TraceContext {
    cpid: Cpid,
    ancestors: Vec<Cpid>,
}

impl TraceContext {
    pub fn root(cpid: Cpid) -> Self {
        TraceContext {
            cpid,
            ancestors: Vec::new(),
        }
    }

    /// Builds a context, rejecting self-ancestry and duplicate ancestors.
    pub fn new(cpid: Cpid, ancestors: Vec<Cpid>) -> Result<Self, ContextError> {
        for (i, a) in ancestors.iter().enumerate() {
            if *a == cpid {
                return Err(ContextError::Malformed(format!(
                    "{cpid} lists itself as an ancestor"
                )));
            }
            if ancestors[..i].contains(a) {
                return Err(ContextError::Malformed(format!("duplicate ancestor {a}")));
            }
        }
        Ok(TraceContext { cpid, ancestors })
    }

    pub fn cpid(&self) -> Cpid {
        self.cpid
    }

    /// Newest first.
    pub fn ancestors(&self) -> &[Cpid] {
        &self.ancestors
    }

    pub fn truncated(mut self, max_ancestors: usize) -> Self {
        self.ancestors.truncate(max_ancestors);
        self
    }
}

impl fmt::Debug for TraceContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{} <- [", self.cpid)?;
        for (i, a) in self.ancestors.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str("]}")
    }
}

/// Writes the context into an object's annotations. Other keys are untouched.
pub fn inject(annotations: &mut BTreeMap<String, String>, tctx: &TraceContext) {
    let ancestors = tctx
        .ancestors
        .iter()
        .map(Cpid::to_string)
        .collect::<Vec<_>>()
        .join(",");
    annotations.insert(CPID_ANNOTATION.to_owned(), tctx.cpid.to_string());
    annotations.insert(ANCESTORS_ANNOTATION.to_owned(), ancestors);
}

/// Reads the context back from an object's annotations.
///
/// `Ok(None)` when the object is untraced. Callers are expected to treat a
/// malformed context as untraced too; the error only exists so they can say
/// so in their logs.
pub fn extract(
    annotations: &BTreeMap<String, String>,
    max_ancestors: usize,
) -> Result<Option<TraceContext>, ContextError> {
    let Some(raw_cpid) = annotations.get(CPID_ANNOTATION) else {
        return Ok(None);
    };
    let cpid: Cpid = raw_cpid
        .parse()
        .map_err(|e| ContextError::Malformed(format!("{e}")))?;
    let ancestors = match annotations.get(ANCESTORS_ANNOTATION).map(String::as_str) {
        None | Some("") => Vec::new(),
        Some(list) => list
            .split(',')
            .map(str::parse)
            .collect::<Result<Vec<Cpid>, _>>()
            .map_err(|e| ContextError::Malformed(format!("{e}")))?,
    };
    if ancestors.len() > max_ancestors {
        return Err(ContextError::Malformed(format!(
            "{} ancestors exceed the bound of {max_ancestors}",
            ancestors.len()
        )));
    }
    TraceContext::new(cpid, ancestors).map(Some)
}

/// Local ancestor-relationship graph: root CPID -> its known ancestors.
///
/// Roots keep their first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CpidGraph {
    roots: IndexMap<Cpid, Vec<Cpid>>,
}

impl CpidGraph {
    pub fn roots(&self) -> impl ExactSizeIterator<Item = Cpid> + '_ {
        self.roots.keys().copied()
    }

    pub fn root_count(&self) -> usize {
        self.roots.len()
    }

    pub fn ancestors_of(&self, root: &Cpid) -> Option<&[Cpid]> {
        self.roots.get(root).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Cpid, &[Cpid])> {
        self.roots.iter().map(|(k, v)| (k, v.as_slice()))
    }

    fn add(&mut self, tctx: &TraceContext) {
        let mut ancestors = tctx.ancestors.clone();

        // Roots named in this context's ancestors are absorbed by it; their
        // own ancestors are older still, so they go on the end.
        let absorbed: Vec<Cpid> = self
            .roots
            .keys()
            .filter(|k| ancestors.contains(k))
            .copied()
            .collect();
        for key in absorbed {
            if let Some(vals) = self.roots.shift_remove(&key) {
                for v in vals {
                    if !ancestors.contains(&v) {
                        ancestors.push(v);
                    }
                }
            }
        }

        // If this context is itself a known root or a known ancestor of one,
        // its ancestors are newer than what that root already lists.
        let mut included = false;
        for (key, vals) in self.roots.iter_mut() {
            if *key == tctx.cpid || vals.contains(&tctx.cpid) {
                for a in ancestors.iter().rev() {
                    if !vals.contains(a) {
                        vals.insert(0, *a);
                    }
                }
                included = true;
            }
        }
        if !included {
            self.roots.insert(tctx.cpid, ancestors);
        }
    }
}

/// Builds the local ancestor graph for a set of observed contexts.
///
/// A single root means that root already subsumes every other input.
pub fn build_cpid_graph(tctxs: &[TraceContext]) -> CpidGraph {
    let mut graph = CpidGraph::default();
    for tctx in tctxs {
        graph.add(tctx);
    }
    graph
}

/// Merges observed contexts, minting a new CPID only when no single input
/// already descends from all the others.
///
/// `fresh` is called at most once.
pub fn merge_contexts(
    tctxs: &[TraceContext],
    max_ancestors: usize,
    now: Timestamp,
    fresh: impl FnOnce() -> Cpid,
) -> Result<(TraceContext, Option<Mergelog>), ContextError> {
    if tctxs.is_empty() {
        return Err(ContextError::EmptyInput);
    }
    let graph = build_cpid_graph(tctxs);
    if graph.root_count() == 1 {
        let (root, ancestors) = graph.roots.into_iter().next().expect("one root");
        let tctx = TraceContext {
            cpid: root,
            ancestors,
        };
        return Ok((tctx.truncated(max_ancestors), None));
    }

    let sources: Vec<Cpid> = graph.roots().collect();
    let mut ancestors = sources.clone();
    for vals in graph.roots.values() {
        for v in vals {
            if !ancestors.contains(v) {
                ancestors.push(*v);
            }
        }
    }
    ancestors.truncate(max_ancestors);

    let new_cpid = fresh();
    let log = Mergelog::new(new_cpid, sources, now)
        .map_err(|e| ContextError::Malformed(e.to_string()))?;
    let tctx = TraceContext::new(new_cpid, ancestors)?;
    Ok((tctx, Some(log)))
}

/// A span that has been started but not yet ended.
#[derive(Debug, Clone)]
pub struct OpenSpan {
    cpid: Cpid,
    span_id: SpanId,
    parent_id: Option<SpanId>,
    service: String,
    name: String,
    start_time: Timestamp,
}

impl OpenSpan {
    pub fn span_id(&self) -> SpanId {
        self.span_id
    }

    pub fn cpid(&self) -> Cpid {
        self.cpid
    }
}

/// The instrumentation library handed to each controller.
///
/// Holds the ancestor bound, the id generator and the clock. Everything else
/// is stateless, so one instance can be shared between controllers.
#[derive(Clone)]
pub struct Instrumentation {
    max_ancestors: usize,
    ids: Arc<IdGenerator>,
    clock: Arc<dyn Clock>,
}

impl fmt::Debug for Instrumentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Instrumentation")
            .field("max_ancestors", &self.max_ancestors)
            .finish_non_exhaustive()
    }
}

impl Instrumentation {
    pub fn new(max_ancestors: usize, ids: Arc<IdGenerator>, clock: Arc<dyn Clock>) -> Self {
        Instrumentation {
            max_ancestors,
            ids,
            clock,
        }
    }

    pub fn with_defaults(max_ancestors: usize) -> Self {
        Self::new(
            max_ancestors,
            Arc::new(IdGenerator::from_entropy()),
            Arc::new(SystemClock),
        )
    }

    pub fn max_ancestors(&self) -> usize {
        self.max_ancestors
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    /// A fresh root context and the mergelog that registers it.
    pub fn new_root_context(&self) -> (TraceContext, Mergelog) {
        let cpid = self.ids.cpid();
        (
            TraceContext::root(cpid),
            Mergelog::registration(cpid, self.clock.now()),
        )
    }

    pub fn merge(
        &self,
        tctxs: &[TraceContext],
    ) -> Result<(TraceContext, Option<Mergelog>), ContextError> {
        merge_contexts(tctxs, self.max_ancestors, self.clock.now(), || {
            self.ids.cpid()
        })
    }

    pub fn extract(
        &self,
        annotations: &BTreeMap<String, String>,
    ) -> Result<Option<TraceContext>, ContextError> {
        extract(annotations, self.max_ancestors)
    }

    pub fn start_span(
        &self,
        cpid: Cpid,
        service: &str,
        name: &str,
        parent: Option<SpanId>,
    ) -> OpenSpan {
        OpenSpan {
            cpid,
            span_id: self.ids.span_id(),
            parent_id: parent,
            service: service.to_owned(),
            name: name.to_owned(),
            start_time: time::truncate_micros(self.clock.now()),
        }
    }

    pub fn end_span(&self, open: OpenSpan) -> Span {
        let end = time::truncate_micros(self.clock.now()).max(open.start_time);
        Span {
            cpid: open.cpid,
            span_id: open.span_id,
            parent_id: open.parent_id,
            service: open.service,
            name: open.name,
            start_time: open.start_time,
            end_time: end,
        }
    }
}
