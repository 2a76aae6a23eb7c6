//! The investigation flow: from one CPID to every related span and log line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::path::Path;

use cascade_trace::{Cpid, QueryError, Span, Timestamp, TraceQuery};
use cascade_trace_sim::{read_log, LogRecord};
use serde::Serialize;

use crate::flame::{by_service, span_forest, SpanNode};

#[derive(Debug, Clone, Serialize)]
pub struct InvestigationResult {
    pub cpid: Cpid,
    pub related: Vec<Cpid>,
    pub spans_by_service: BTreeMap<String, Vec<Span>>,
    pub log_records: Vec<LogRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum InvestigateError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("cannot read log file {path}: {source}")]
    Log {
        path: String,
        source: std::io::Error,
    },
}

pub fn investigate(
    query: &dyn TraceQuery,
    cpid: Cpid,
    log_file: Option<&Path>,
) -> Result<InvestigationResult, InvestigateError> {
    let related = query.related(&cpid)?;
    let spans = query.spans(Some(&cpid))?;
    let wanted: BTreeSet<Cpid> = related.iter().copied().collect();
    let log_records = match log_file {
        Some(path) => read_log(path)
            .map_err(|source| InvestigateError::Log {
                path: path.display().to_string(),
                source,
            })?
            .into_iter()
            .filter(|r| wanted.contains(&r.cpid))
            .collect(),
        None => Vec::new(),
    };
    Ok(InvestigationResult {
        cpid,
        related,
        spans_by_service: by_service(&spans),
        log_records,
    })
}

impl InvestigationResult {
    pub fn span_count(&self) -> usize {
        self.spans_by_service.values().map(Vec::len).sum()
    }

    /// Per-service timelines followed by the matched log lines.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "CPID {}", self.cpid);
        let _ = writeln!(out, "\nrelated CPIDs ({}):", self.related.len());
        for c in &self.related {
            let _ = writeln!(out, "  {c}");
        }
        let _ = writeln!(out, "\nspans ({}):", self.span_count());
        for (service, spans) in &self.spans_by_service {
            let _ = writeln!(out, "\n[{service}]");
            let _ = writeln!(
                out,
                "  {:<27}  {:>10}  {:<36}  span",
                "start", "dur_us", "cpid"
            );
            for root in span_forest(spans) {
                timeline_rows(&root, 0, &mut out);
            }
        }
        let _ = writeln!(out, "\nlog records ({}):", self.log_records.len());
        for r in &self.log_records {
            let fields: Vec<String> = r.fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(
                out,
                "  {}  {:<22}  {}  {}  {}",
                stamp(&r.ts),
                r.controller,
                r.cpid,
                r.msg,
                fields.join(" ")
            );
        }
        out
    }
}

fn timeline_rows(node: &SpanNode, depth: usize, out: &mut String) {
    let s = &node.span;
    let _ = writeln!(
        out,
        "  {:<27}  {:>10}  {}  {}{}",
        stamp(&s.start_time),
        node.duration_us,
        s.cpid,
        "  ".repeat(depth),
        s.name
    );
    for c in &node.children {
        timeline_rows(c, depth + 1, out);
    }
}

fn stamp(t: &Timestamp) -> String {
    t.format("%Y-%m-%dT%H:%M:%S%.6fZ").to_string()
}
