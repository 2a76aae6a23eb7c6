//! Flame graph export of the spans of a cascade.
//!
//! The folded format is the collapsed-stack text read by `flamegraph.pl`,
//! inferno and speedscope: one line per span, `service;root;...;span
//! <duration in microseconds>`. Durations are whole span durations, not
//! self time.

use std::collections::{BTreeMap, HashMap, HashSet};

use cascade_trace::{Span, SpanId};
use serde::Serialize;

/// A span with its children, ordered by start time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpanNode {
    #[serde(flatten)]
    pub span: Span,
    pub duration_us: i64,
    pub children: Vec<SpanNode>,
}

fn by_start(a: &&Span, b: &&Span) -> std::cmp::Ordering {
    (a.start_time, a.span_id).cmp(&(b.start_time, b.span_id))
}

/// Rebuilds span trees from `parent_id` links. Spans whose parent is not
/// among `spans` become roots.
pub fn span_forest(spans: &[Span]) -> Vec<SpanNode> {
    let ids: HashSet<SpanId> = spans.iter().map(|s| s.span_id).collect();
    let mut children: HashMap<SpanId, Vec<&Span>> = HashMap::new();
    let mut roots = Vec::new();
    for s in spans {
        match s.parent_id {
            Some(p) if ids.contains(&p) && p != s.span_id => children.entry(p).or_default().push(s),
            _ => roots.push(s),
        }
    }
    for list in children.values_mut() {
        list.sort_by(by_start);
    }
    roots.sort_by(by_start);

    fn build(
        s: &Span,
        children: &HashMap<SpanId, Vec<&Span>>,
        seen: &mut HashSet<SpanId>,
    ) -> SpanNode {
        seen.insert(s.span_id);
        let kids = children
            .get(&s.span_id)
            .into_iter()
            .flatten()
            .filter(|c| !seen.contains(&c.span_id))
            .copied()
            .collect::<Vec<_>>();
        SpanNode {
            span: s.clone(),
            duration_us: s.duration_micros(),
            children: kids.into_iter().map(|c| build(c, children, seen)).collect(),
        }
    }

    let mut seen = HashSet::new();
    roots
        .into_iter()
        .map(|r| build(r, &children, &mut seen))
        .collect()
}

/// Folded stacks, depth first.
pub fn folded(spans: &[Span]) -> String {
    fn walk(node: &SpanNode, prefix: &str, out: &mut String) {
        let path = format!("{prefix};{}", frame(&node.span.name));
        out.push_str(&format!("{path} {}\n", node.duration_us));
        for c in &node.children {
            walk(c, &path, out);
        }
    }
    let mut out = String::new();
    for root in span_forest(spans) {
        walk(&root, &frame(&root.span.service), &mut out);
    }
    out
}

// Frame names cannot contain the separators of the format.
fn frame(s: &str) -> String {
    s.replace([';', ' ', '\n'], "_")
}

/// Spans grouped by service, each group sorted by start time.
pub fn by_service(spans: &[Span]) -> BTreeMap<String, Vec<Span>> {
    let mut groups: BTreeMap<String, Vec<Span>> = BTreeMap::new();
    for s in spans {
        groups.entry(s.service.clone()).or_default().push(s.clone());
    }
    for g in groups.values_mut() {
        g.sort_by(|a, b| by_start(&a, &b));
    }
    groups
}
