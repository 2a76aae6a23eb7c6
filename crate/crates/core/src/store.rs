//! In-memory state of the trace server: stored mergelogs, the merge graph
//! built from them, and spans.
//!
//! Mutations take the write lock, so a reader never sees a half-applied
//! mergelog or a prune in progress.

use std::collections::{HashMap, HashSet};

use parking_lot::RwLock;

use crate::cpid::Cpid;
use crate::graph::{Applied, GraphError, GraphSnapshot, MergeGraph};
use crate::record::{Mergelog, Span};
use crate::sink::{QueryError, TraceQuery, TraceSink};

/// Append-ordered spans with a per-CPID index.
#[derive(Debug, Default, Clone)]
pub struct SpanStore {
    spans: Vec<Span>,
    by_cpid: HashMap<Cpid, Vec<usize>>,
}

impl SpanStore {
    pub fn push(&mut self, span: Span) {
        self.by_cpid
            .entry(span.cpid)
            .or_default()
            .push(self.spans.len());
        self.spans.push(span);
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn all(&self) -> &[Span] {
        &self.spans
    }

    /// Spans tagged with any of `cpids`, in insertion order.
    pub fn for_cpids<'a>(&self, cpids: impl IntoIterator<Item = &'a Cpid>) -> Vec<Span> {
        let mut positions: Vec<usize> = cpids
            .into_iter()
            .filter_map(|c| self.by_cpid.get(c))
            .flatten()
            .copied()
            .collect();
        positions.sort_unstable();
        positions.dedup();
        positions
            .into_iter()
            .map(|i| self.spans[i].clone())
            .collect()
    }
}

#[derive(Debug, Default)]
struct Inner {
    graph: MergeGraph,
    mergelogs: Vec<Mergelog>,
    spans: SpanStore,
}

#[derive(Debug, Default)]
pub struct TraceStore {
    inner: RwLock<Inner>,
}

impl TraceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ingest_mergelog(&self, log: Mergelog) -> Result<Applied, GraphError> {
        let mut inner = self.inner.write();
        let applied = inner.graph.apply_mergelog(&log)?;
        if applied == Applied::Applied {
            inner.mergelogs.push(log);
        }
        Ok(applied)
    }

    pub fn ingest_span(&self, span: Span) {
        self.inner.write().spans.push(span);
    }

    pub fn list_mergelogs(&self, filter: Option<&Cpid>) -> Result<Vec<Mergelog>, GraphError> {
        let inner = self.inner.read();
        match filter {
            None => Ok(inner.mergelogs.clone()),
            Some(c) => {
                let related: HashSet<Cpid> = inner.graph.related_cpids(c)?.into_iter().collect();
                Ok(inner
                    .mergelogs
                    .iter()
                    .filter(|l| related.contains(&l.new_cpid))
                    .cloned()
                    .collect())
            }
        }
    }

    pub fn list_spans(&self, filter: Option<&Cpid>) -> Result<Vec<Span>, GraphError> {
        let inner = self.inner.read();
        match filter {
            None => Ok(inner.spans.all().to_vec()),
            Some(c) => {
                let related = inner.graph.related_cpids(c)?;
                Ok(inner.spans.for_cpids(&related))
            }
        }
    }

    pub fn related(&self, cpid: &Cpid) -> Result<Vec<Cpid>, GraphError> {
        self.inner.read().graph.related_cpids(cpid)
    }

    /// Prunes the graph and drops the mergelogs of removed CPIDs.
    pub fn prune(&self, max_nodes: usize) -> Vec<Cpid> {
        let mut inner = self.inner.write();
        let removed = inner.graph.prune(max_nodes);
        if !removed.is_empty() {
            let gone: HashSet<&Cpid> = removed.iter().collect();
            inner.mergelogs.retain(|l| !gone.contains(&l.new_cpid));
        }
        removed
    }

    pub fn snapshot(&self) -> GraphSnapshot {
        self.inner.read().graph.snapshot()
    }

    pub fn node_count(&self) -> usize {
        self.inner.read().graph.len()
    }

    pub fn mergelog_count(&self) -> usize {
        self.inner.read().mergelogs.len()
    }

    pub fn span_count(&self) -> usize {
        self.inner.read().spans.len()
    }
}

impl From<GraphError> for QueryError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::NotFound(c) => QueryError::NotFound(c),
            other => QueryError::Rejected(other.to_string()),
        }
    }
}

impl TraceSink for TraceStore {
    fn send_mergelog(&self, log: Mergelog) {
        // Fire-and-forget, same as over the wire: a rejected log is dropped.
        let _ = self.ingest_mergelog(log);
    }

    fn send_span(&self, span: Span) {
        self.ingest_span(span);
    }
}

impl TraceQuery for TraceStore {
    fn related(&self, cpid: &Cpid) -> Result<Vec<Cpid>, QueryError> {
        Ok(TraceStore::related(self, cpid)?)
    }

    fn mergelogs(&self, filter: Option<&Cpid>) -> Result<Vec<Mergelog>, QueryError> {
        Ok(self.list_mergelogs(filter)?)
    }

    fn spans(&self, filter: Option<&Cpid>) -> Result<Vec<Span>, QueryError> {
        Ok(self.list_spans(filter)?)
    }

    fn graph(&self) -> Result<GraphSnapshot, QueryError> {
        Ok(self.snapshot())
    }
}
