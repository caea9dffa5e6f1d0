//! Morse graph of a transition graph and the regions of attraction of its
//! attractors.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::digraph::Csr;
use crate::geometry::CellIndex;
use crate::scc::{condensation_edges, strongly_connected_components, Components};
use crate::transition::TransitionGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeLabel {
    Success,
    Failure,
    Unlabeled,
}

impl std::fmt::Display for OutcomeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OutcomeLabel::Success => "success",
            OutcomeLabel::Failure => "failure",
            OutcomeLabel::Unlabeled => "unlabeled",
        })
    }
}

/// One recurrent component of `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorseNode {
    pub id: usize,
    /// Node positions in the transition graph, ascending.
    pub nodes: Vec<u32>,
    /// Flat cell ids, ascending.
    pub cells: Vec<usize>,
    pub is_attractor: bool,
    pub label: OutcomeLabel,
}

/// DAG of recurrent components. Ids follow a topological order, so every
/// edge goes from a smaller id to a larger one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorseGraph {
    pub nodes: Vec<MorseNode>,
    /// `(from, to)` pairs, sorted.
    pub edges: Vec<(usize, usize)>,
}

impl MorseGraph {
    pub fn attractors(&self) -> impl Iterator<Item = &MorseNode> {
        self.nodes.iter().filter(|n| n.is_attractor)
    }

    pub fn attractor_count(&self) -> usize {
        self.attractors().count()
    }

    pub fn successors(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.0 == id).map(|e| e.1)
    }

    /// Kahn's algorithm; `None` if the edge set has a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        for &(_, b) in &self.edges {
            indeg[b] += 1;
        }
        let mut ready: Vec<usize> = (0..n).rev().filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = ready.pop() {
            order.push(v);
            for w in self.successors(v) {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    ready.push(w);
                }
            }
        }
        (order.len() == n).then_some(order)
    }
}

/// Components with at least two cells, or a single cell with a self-edge.
pub fn recurrent_components(graph: &TransitionGraph, comps: &Components) -> Vec<usize> {
    (0..comps.len())
        .filter(|&c| is_recurrent(graph.adjacency(), &comps.members[c]))
        .collect()
}

fn is_recurrent(adj: &Csr, members: &[u32]) -> bool {
    members.len() > 1 || adj.has_edge(members[0] as usize, members[0] as usize)
}

/// SCC condensation restricted to recurrent components. A Morse edge
/// `a -> b` is drawn when some path of `F` leaves `a` and enters `b`
/// passing only through non-recurrent cells.
pub fn build_morse_graph(graph: &TransitionGraph) -> MorseGraph {
    let adj = graph.adjacency();
    let comps = strongly_connected_components(adj);
    let k = comps.len();
    let recurrent: Vec<bool> = comps.members.iter().map(|m| is_recurrent(adj, m)).collect();

    // Tarjan emits sinks first, so walking ids upward visits every
    // component after all of its successors.
    let mut by_source: Vec<Vec<u32>> = vec![Vec::new(); k];
    for (a, b) in condensation_edges(adj, &comps) {
        by_source[a as usize].push(b);
    }
    // reach[c]: recurrent components first hit from c (excluding c itself)
    let mut reach: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); k];
    for c in 0..k {
        let mut acc = BTreeSet::new();
        for &t in &by_source[c] {
            if recurrent[t as usize] {
                acc.insert(t);
            } else {
                acc.extend(reach[t as usize].iter().copied());
            }
        }
        reach[c] = acc;
    }

    // Morse ids: recurrent components in topological order (sources first).
    let order: Vec<usize> = (0..k).rev().filter(|&c| recurrent[c]).collect();
    let mut morse_id = vec![usize::MAX; k];
    for (id, &c) in order.iter().enumerate() {
        morse_id[c] = id;
    }
    let mut edges: Vec<(usize, usize)> = order
        .iter()
        .flat_map(|&c| reach[c].iter().map(move |&t| (c, t as usize)))
        .map(|(a, b)| (morse_id[a], morse_id[b]))
        .collect();
    edges.sort_unstable();
    edges.dedup();

    let cells = graph.nodes().cells();
    let nodes = order
        .iter()
        .enumerate()
        .map(|(id, &c)| {
            let members = comps.members[c].clone();
            MorseNode {
                id,
                cells: members.iter().map(|&v| cells[v as usize]).collect(),
                nodes: members,
                is_attractor: reach[c].is_empty(),
                label: OutcomeLabel::Unlabeled,
            }
        })
        .collect();
    MorseGraph { nodes, edges }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoaEntry {
    /// Reaches exactly this attractor (Morse node id).
    Attractor(usize),
    /// Reaches two or more attractors.
    Ambiguous,
    /// Reaches no attractor.
    Unreachable,
}

impl std::fmt::Display for RoaEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RoaEntry::Attractor(id) => write!(f, "attractor:{id}"),
            RoaEntry::Ambiguous => f.write_str("ambiguous"),
            RoaEntry::Unreachable => f.write_str("unreachable"),
        }
    }
}

/// Region-of-attraction entry for every valid cell, indexed like the
/// transition graph's node list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoaAssignment {
    pub cells: Vec<usize>,
    pub entries: Vec<RoaEntry>,
}

impl RoaAssignment {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry for a flat cell id; `None` if the cell is outside the valid set.
    pub fn lookup(&self, flat: usize) -> Option<RoaEntry> {
        self.cells
            .binary_search(&flat)
            .ok()
            .map(|i| self.entries[i])
    }

    pub fn count(&self, entry: RoaEntry) -> usize {
        self.entries.iter().filter(|e| **e == entry).count()
    }

    /// Flat ids assigned exclusively to `attractor`.
    pub fn region(&self, attractor: usize) -> Vec<usize> {
        self.cells
            .iter()
            .zip(&self.entries)
            .filter(|(_, e)| **e == RoaEntry::Attractor(attractor))
            .map(|(c, _)| *c)
            .collect()
    }
}

/// Backward search from every attractor over `F`.
pub fn regions_of_attraction(graph: &TransitionGraph, morse: &MorseGraph) -> RoaAssignment {
    let n = graph.node_count();
    let rev = graph.adjacency().reversed();
    let mut first: Vec<Option<usize>> = vec![None; n];
    let mut ambiguous = vec![false; n];
    let mut seen = vec![u32::MAX; n];
    let mut queue: Vec<u32> = Vec::new();

    for (tag, attractor) in morse.attractors().enumerate() {
        let tag = tag as u32;
        queue.clear();
        for &v in &attractor.nodes {
            seen[v as usize] = tag;
            queue.push(v);
        }
        let mut head = 0;
        while head < queue.len() {
            let v = queue[head] as usize;
            head += 1;
            match first[v] {
                None => first[v] = Some(attractor.id),
                Some(a) if a != attractor.id => ambiguous[v] = true,
                _ => {}
            }
            for &u in rev.successors(v) {
                if seen[u as usize] != tag {
                    seen[u as usize] = tag;
                    queue.push(u);
                }
            }
        }
    }

    let entries = (0..n)
        .map(|v| match (first[v], ambiguous[v]) {
            (_, true) => RoaEntry::Ambiguous,
            (Some(a), false) => RoaEntry::Attractor(a),
            (None, false) => RoaEntry::Unreachable,
        })
        .collect();
    RoaAssignment {
        cells: graph.nodes().cells().to_vec(),
        entries,
    }
}

/// Cell indices of a Morse node.
pub fn node_cells(graph: &TransitionGraph, node: &MorseNode) -> Vec<CellIndex> {
    node.nodes
        .iter()
        .map(|&v| graph.cell_of(v as usize))
        .collect()
}
