//! JSON bodies of the HTTP API that are not plain mergelogs or spans.

use cascade_trace::time::{rfc3339_millis, Timestamp};
use cascade_trace::{Cpid, GraphSnapshot, NodeInfo};
use serde::{Deserialize, Serialize};

pub const MERGELOGS_PATH: &str = "/v1/mergelogs";
pub const SPANS_PATH: &str = "/v1/spans";
pub const RELATED_PATH: &str = "/v1/related";
pub const PRUNE_PATH: &str = "/v1/prune";
pub const GRAPH_PATH: &str = "/v1/graph";
pub const CONFIG_PATH: &str = "/v1/config";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelatedBody {
    pub cpids: Vec<Cpid>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneRequest {
    pub max_nodes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneResponse {
    pub removed: Vec<Cpid>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeBody {
    pub cpid: Cpid,
    #[serde(with = "rfc3339_millis")]
    pub timestamp: Timestamp,
    pub merge_created: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeBody {
    pub from: Cpid,
    pub to: Cpid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphBody {
    pub nodes: Vec<NodeBody>,
    pub edges: Vec<EdgeBody>,
}

impl From<GraphSnapshot> for GraphBody {
    fn from(s: GraphSnapshot) -> Self {
        GraphBody {
            nodes: s
                .nodes
                .into_iter()
                .map(|(cpid, info)| NodeBody {
                    cpid,
                    timestamp: info.timestamp,
                    merge_created: info.merge_created,
                })
                .collect(),
            edges: s
                .edges
                .into_iter()
                .map(|(from, to)| EdgeBody { from, to })
                .collect(),
        }
    }
}

impl From<GraphBody> for GraphSnapshot {
    fn from(b: GraphBody) -> Self {
        GraphSnapshot {
            nodes: b
                .nodes
                .into_iter()
                .map(|n| {
                    (
                        n.cpid,
                        NodeInfo {
                            timestamp: n.timestamp,
                            merge_created: n.merge_created,
                        },
                    )
                })
                .collect(),
            edges: b.edges.into_iter().map(|e| (e.from, e.to)).collect(),
        }
    }
}

/// Server settings echoed back for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigBody {
    pub n_ancestors: usize,
    pub max_graph_nodes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
