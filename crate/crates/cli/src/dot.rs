//! Graphviz export of the merge graph.

use std::fmt::Write;

use cascade_trace::GraphSnapshot;

/// Renders the graph as a DOT digraph. Root CPIDs are ellipses; CPIDs minted
/// by a merge are grey boxes.
pub fn render(graph: &GraphSnapshot) -> String {
    let mut out = String::from("digraph merge_graph {\n");
    if !graph.nodes.is_empty() {
        out.push_str("  rankdir=LR;\n  node [fontname=\"monospace\"];\n");
    }
    for (cpid, info) in &graph.nodes {
        let attrs = if info.merge_created {
            "shape=box, style=filled, fillcolor=lightgrey"
        } else {
            "shape=ellipse"
        };
        let _ = writeln!(out, "  \"{cpid}\" [{attrs}];");
    }
    for (from, to) in &graph.edges {
        let _ = writeln!(out, "  \"{from}\" -> \"{to}\";");
    }
    out.push_str("}\n");
    out
}
