//! Where controllers send records, and how investigators read them back.

use std::sync::Arc;

use thiserror::Error;

use crate::cpid::Cpid;
use crate::graph::GraphSnapshot;
use crate::record::{Mergelog, Span};

/// Destination for mergelogs and spans.
///
/// Sending never blocks on the trace server and never fails: tracing is an
/// auxiliary function and must not hold up a reconcile pass.
pub trait TraceSink: Send + Sync {
    fn send_mergelog(&self, log: Mergelog);
    fn send_span(&self, span: Span);

    /// Blocks until everything sent so far has been delivered (or dropped).
    fn flush(&self) {}
}

impl<T: TraceSink + ?Sized> TraceSink for Arc<T> {
    fn send_mergelog(&self, log: Mergelog) {
        (**self).send_mergelog(log)
    }

    fn send_span(&self, span: Span) {
        (**self).send_span(span)
    }

    fn flush(&self) {
        (**self).flush()
    }
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn send_mergelog(&self, _log: Mergelog) {}
    fn send_span(&self, _span: Span) {}
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("unknown CPID {0}")]
    NotFound(Cpid),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("trace server unreachable: {0}")]
    Transport(String),
}

/// Read side of the trace server.
pub trait TraceQuery {
    fn related(&self, cpid: &Cpid) -> Result<Vec<Cpid>, QueryError>;
    fn mergelogs(&self, filter: Option<&Cpid>) -> Result<Vec<Mergelog>, QueryError>;
    fn spans(&self, filter: Option<&Cpid>) -> Result<Vec<Span>, QueryError>;
    fn graph(&self) -> Result<GraphSnapshot, QueryError>;
}

impl<T: TraceQuery + ?Sized> TraceQuery for Arc<T> {
    fn related(&self, cpid: &Cpid) -> Result<Vec<Cpid>, QueryError> {
        (**self).related(cpid)
    }

    fn mergelogs(&self, filter: Option<&Cpid>) -> Result<Vec<Mergelog>, QueryError> {
        (**self).mergelogs(filter)
    }

    fn spans(&self, filter: Option<&Cpid>) -> Result<Vec<Span>, QueryError> {
        (**self).spans(filter)
    }

    fn graph(&self) -> Result<GraphSnapshot, QueryError> {
        (**self).graph()
    }
}
