//! Tracing for cascading object changes in a declarative control plane.
//!
//! Each object carries one change propagation identifier ([`Cpid`]). When a
//! controller derives an object from several differently-tagged objects it
//! records the merge in a [`Mergelog`]; the trace server folds mergelogs into
//! a [`MergeGraph`] and answers "which CPIDs descend from this one" so spans
//! and logs of a whole cascade can be pulled up from a single CPID.

pub mod context;
pub mod cpid;
pub mod graph;
pub mod record;
pub mod sink;
pub mod store;
pub mod time;

pub use context::{
    build_cpid_graph, extract, inject, merge_contexts, ContextError, CpidGraph, Instrumentation,
    OpenSpan, TraceContext, ANCESTORS_ANNOTATION, CPID_ANNOTATION, DEFAULT_MAX_ANCESTORS,
};
pub use cpid::{Cpid, IdGenerator, ParseCpidError, SpanId};
pub use graph::{Applied, GraphError, GraphSnapshot, MergeGraph, NodeInfo};
pub use record::{InvalidRecord, Mergelog, Span};
pub use sink::{NullSink, QueryError, TraceQuery, TraceSink};
pub use store::{SpanStore, TraceStore};
pub use time::{Clock, SystemClock, Timestamp};
