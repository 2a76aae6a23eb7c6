//! The trace server's merge graph.
//!
//! Nodes are CPIDs, edges run from each merge source to the CPID minted for
//! the merge. Everything reachable from a CPID inherits its change context.

use std::collections::{BTreeSet, HashMap, HashSet};

use thiserror::Error;

use crate::cpid::Cpid;
use crate::record::Mergelog;
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("mergelog for {new} would close a cycle through {source_cpid}")]
    CycleRejected { new: Cpid, source_cpid: Cpid },
    #[error("{0} already has a mergelog with different sources")]
    ConflictingMergelog(Cpid),
    #[error("unknown CPID {0}")]
    NotFound(Cpid),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Applied {
    Applied,
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeInfo {
    pub timestamp: Timestamp,
    /// True iff the node was introduced by a mergelog with sources.
    pub merge_created: bool,
}

#[derive(Debug, Clone)]
struct Node {
    info: NodeInfo,
    /// Sorted sources of this node's own mergelog, once it has been seen.
    logged_sources: Option<Vec<Cpid>>,
    in_degree: usize,
    out: BTreeSet<Cpid>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphSnapshot {
    /// Sorted by CPID.
    pub nodes: Vec<(Cpid, NodeInfo)>,
    /// `(source, new)` pairs, sorted.
    pub edges: Vec<(Cpid, Cpid)>,
}

#[derive(Debug, Clone, Default)]
pub struct MergeGraph {
    nodes: HashMap<Cpid, Node>,
    edge_count: usize,
}

impl MergeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn contains(&self, cpid: &Cpid) -> bool {
        self.nodes.contains_key(cpid)
    }

    pub fn node(&self, cpid: &Cpid) -> Option<NodeInfo> {
        self.nodes.get(cpid).map(|n| n.info)
    }

    pub fn in_degree(&self, cpid: &Cpid) -> Option<usize> {
        self.nodes.get(cpid).map(|n| n.in_degree)
    }

    /// Adds the mergelog's nodes and edges.
    ///
    /// Sources that were never registered are created on the fly, since
    /// mergelogs from different controllers may arrive out of order.
    pub fn apply_mergelog(&mut self, log: &Mergelog) -> Result<Applied, GraphError> {
        let mut sorted_sources = log.source_cpids.clone();
        sorted_sources.sort();

        if let Some(existing) = self.nodes.get(&log.new_cpid) {
            match &existing.logged_sources {
                Some(prev) if *prev == sorted_sources => return Ok(Applied::Duplicate),
                Some(_) => return Err(GraphError::ConflictingMergelog(log.new_cpid)),
                None => {}
            }
            // The node is already known as a source of something else. Any
            // source reachable from it would close a cycle.
            let reachable = self.reachable_set(&log.new_cpid);
            if let Some(s) = log.source_cpids.iter().find(|s| reachable.contains(s)) {
                return Err(GraphError::CycleRejected {
                    new: log.new_cpid,
                    source_cpid: *s,
                });
            }
        }

        for s in &log.source_cpids {
            self.nodes.entry(*s).or_insert_with(|| Node {
                info: NodeInfo {
                    timestamp: log.timestamp,
                    merge_created: false,
                },
                logged_sources: None,
                in_degree: 0,
                out: BTreeSet::new(),
            });
        }
        let node = self.nodes.entry(log.new_cpid).or_insert_with(|| Node {
            info: NodeInfo {
                timestamp: log.timestamp,
                merge_created: false,
            },
            logged_sources: None,
            in_degree: 0,
            out: BTreeSet::new(),
        });
        node.info = NodeInfo {
            timestamp: log.timestamp,
            merge_created: !log.source_cpids.is_empty(),
        };
        node.logged_sources = Some(sorted_sources);

        for s in &log.source_cpids {
            let src = self.nodes.get_mut(s).expect("source inserted above");
            if src.out.insert(log.new_cpid) {
                self.edge_count += 1;
                self.nodes
                    .get_mut(&log.new_cpid)
                    .expect("new node inserted above")
                    .in_degree += 1;
            }
        }
        Ok(Applied::Applied)
    }

    fn reachable_set(&self, from: &Cpid) -> HashSet<Cpid> {
        let mut seen = HashSet::new();
        let mut stack = vec![*from];
        while let Some(c) = stack.pop() {
            if seen.insert(c) {
                if let Some(n) = self.nodes.get(&c) {
                    stack.extend(n.out.iter().copied());
                }
            }
        }
        seen
    }

    /// Every CPID reachable from `cpid`, including itself.
    ///
    /// The queried CPID comes first, the rest follow in CPID order.
    pub fn related_cpids(&self, cpid: &Cpid) -> Result<Vec<Cpid>, GraphError> {
        if !self.nodes.contains_key(cpid) {
            return Err(GraphError::NotFound(*cpid));
        }
        let mut rest: Vec<Cpid> = self
            .reachable_set(cpid)
            .into_iter()
            .filter(|c| c != cpid)
            .collect();
        rest.sort();
        let mut out = Vec::with_capacity(rest.len() + 1);
        out.push(*cpid);
        out.extend(rest);
        Ok(out)
    }

    /// Removes nodes until at most `max_nodes` remain or nothing is removable.
    ///
    /// Only nodes nobody merges into are removed, oldest first. Merge-created
    /// nodes orphaned by a removal go with it. Returns removed CPIDs in order.
    pub fn prune(&mut self, max_nodes: usize) -> Vec<Cpid> {
        let mut removed = Vec::new();
        while self.nodes.len() > max_nodes {
            let Some(victim) = self
                .nodes
                .iter()
                .filter(|(_, n)| n.in_degree == 0)
                .min_by_key(|(c, n)| (n.info.timestamp, **c))
                .map(|(c, _)| *c)
            else {
                break;
            };
            let mut queue = vec![victim];
            while let Some(c) = queue.pop() {
                let node = self.nodes.remove(&c).expect("queued nodes exist");
                removed.push(c);
                // Cascade in CPID order for a deterministic removal list.
                for child in node.out.iter().rev() {
                    self.edge_count -= 1;
                    let ch = self.nodes.get_mut(child).expect("edge endpoint exists");
                    ch.in_degree -= 1;
                    if ch.in_degree == 0 && ch.info.merge_created {
                        queue.push(*child);
                    }
                }
            }
        }
        removed
    }

    pub fn snapshot(&self) -> GraphSnapshot {
        let mut nodes: Vec<(Cpid, NodeInfo)> =
            self.nodes.iter().map(|(c, n)| (*c, n.info)).collect();
        nodes.sort_by_key(|(c, _)| *c);
        let mut edges: Vec<(Cpid, Cpid)> = self
            .nodes
            .iter()
            .flat_map(|(c, n)| n.out.iter().map(move |t| (*c, *t)))
            .collect();
        edges.sort();
        GraphSnapshot { nodes, edges }
    }
}
