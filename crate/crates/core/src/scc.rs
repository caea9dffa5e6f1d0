//! Strongly connected components without recursion.

use crate::digraph::Csr;

/// SCC decomposition of a digraph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    /// Components in reverse topological order of the condensation:
    /// if an edge runs from component `a` to component `b != a`, then `b < a`.
    pub members: Vec<Vec<u32>>,
    /// Component id of every node.
    pub component_of: Vec<u32>,
}

impl Components {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

const UNVISITED: u32 = u32::MAX;

/// Tarjan's algorithm with an explicit call stack; linear in nodes + edges.
/// Members of each component are sorted ascending.
pub fn strongly_connected_components(graph: &Csr) -> Components {
    let n = graph.node_count();
    assert!(n < UNVISITED as usize, "graph too large");
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0u32; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<u32> = Vec::new();
    // (node, position in its successor list)
    let mut call: Vec<(u32, usize)> = Vec::new();
    let mut component_of = vec![UNVISITED; n];
    let mut members: Vec<Vec<u32>> = Vec::new();
    let mut next = 0u32;

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        call.push((root as u32, 0));
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root as u32);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            let succ = graph.successors(v as usize);
            if *pos < succ.len() {
                let w = succ[*pos] as usize;
                *pos += 1;
                if index[w] == UNVISITED {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w as u32);
                    on_stack[w] = true;
                    call.push((w as u32, 0));
                } else if on_stack[w] {
                    low[v as usize] = low[v as usize].min(index[w]);
                }
                continue;
            }
            call.pop();
            let v = v as usize;
            if let Some(&(parent, _)) = call.last() {
                let p = parent as usize;
                low[p] = low[p].min(low[v]);
            }
            if low[v] == index[v] {
                let id = members.len() as u32;
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack underflow");
                    on_stack[w as usize] = false;
                    component_of[w as usize] = id;
                    comp.push(w);
                    if w as usize == v {
                        break;
                    }
                }
                comp.sort_unstable();
                members.push(comp);
            }
        }
    }

    Components {
        members,
        component_of,
    }
}

/// Edges of the condensation DAG, deduplicated, sorted by (from, to).
pub fn condensation_edges(graph: &Csr, comps: &Components) -> Vec<(u32, u32)> {
    let mut edges: Vec<(u32, u32)> = graph
        .edges()
        .filter_map(|(a, b)| {
            let (ca, cb) = (comps.component_of[a], comps.component_of[b]);
            (ca != cb).then_some((ca, cb))
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}
