//! JSON interchange formats, digests and text exports.
//!
//! All floating-point values go through `serde_json`, which writes the
//! shortest decimal that parses back to the same `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::digraph::Csr;
use crate::dynamics::{Activation, DynamicsError, DynamicsMap, DynamicsNet, Layer};
use crate::evaluation::{EvaluationError, TrajectoryDataset};
use crate::geometry::{GeometryError, LatentGrid};
use crate::morse::{MorseGraph, RoaAssignment};
use crate::transition::{BuildMetadata, CellKind, TransitionGraph, ValidCellSet};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{context}: malformed JSON: {source}")]
    Json {
        context: String,
        source: serde_json::Error,
    },
    #[error("{context}: {source}")]
    Dataset {
        context: String,
        source: EvaluationError,
    },
    #[error("{context}: {source}")]
    Network {
        context: String,
        source: DynamicsError,
    },
    #[error("{context}: {message}")]
    Format { context: String, message: String },
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|source| IoError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("in-memory values serialize")
}

pub(crate) fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory values serialize");
    s.push('\n');
    s
}

pub(crate) fn from_json<T: for<'de> Deserialize<'de>>(
    text: &str,
    context: &str,
) -> Result<T, IoError> {
    serde_json::from_str(text).map_err(|source| IoError::Json {
        context: context.to_string(),
        source,
    })
}

// ---------------------------------------------------------------- datasets

pub fn parse_trajectories(text: &str, context: &str) -> Result<TrajectoryDataset, IoError> {
    let ds: TrajectoryDataset = from_json(text, context)?;
    ds.validate().map_err(|source| IoError::Dataset {
        context: context.to_string(),
        source,
    })?;
    Ok(ds)
}

pub fn load_trajectories(path: &Path) -> Result<TrajectoryDataset, IoError> {
    parse_trajectories(&read_text(path)?, &path.display().to_string())
}

pub fn trajectories_to_json(ds: &TrajectoryDataset) -> String {
    let mut s = to_json(ds);
    s.push('\n');
    s
}

pub fn save_trajectories(ds: &TrajectoryDataset, path: &Path) -> Result<(), IoError> {
    write_text(path, &trajectories_to_json(ds))
}

/// Digest of the canonical serialization; stable across load/save.
pub fn dataset_digest(ds: &TrajectoryDataset) -> String {
    sha256_hex(to_json(ds).as_bytes())
}

// ---------------------------------------------------------------- networks

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetFile {
    input_dim: usize,
    layers: Vec<LayerFile>,
}

pub fn parse_dynamics_net(text: &str, context: &str) -> Result<DynamicsNet, IoError> {
    let raw: NetFile = from_json(text, context)?;
    let layers = raw
        .layers
        .into_iter()
        .map(|l| Layer {
            rows: l.rows,
            cols: l.cols,
            weights: l.weights,
            bias: l.bias,
            activation: l.activation,
        })
        .collect();
    DynamicsNet::new(raw.input_dim, layers).map_err(|source| IoError::Network {
        context: context.to_string(),
        source,
    })
}

pub fn load_dynamics_net(path: &Path) -> Result<DynamicsNet, IoError> {
    parse_dynamics_net(&read_text(path)?, &path.display().to_string())
}

pub fn dynamics_net_to_json(net: &DynamicsNet) -> String {
    let file = NetFile {
        input_dim: net.input_dim(),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerFile {
                rows: l.rows,
                cols: l.cols,
                weights: l.weights.clone(),
                bias: l.bias.clone(),
                activation: l.activation,
            })
            .collect(),
    };
    let mut s = to_json(&file);
    s.push('\n');
    s
}

pub fn dynamics_digest(map: &DynamicsMap) -> String {
    match map {
        DynamicsMap::Network(n) => sha256_hex(dynamics_net_to_json(n).as_bytes()),
        DynamicsMap::Analytic(a) => sha256_hex(to_json(a).as_bytes()),
    }
}

// ---------------------------------------------------------------- graph cache

pub const GRAPH_FORMAT: &str = "latmorse-transition-graph/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub format: String,
    pub config_digest: String,
    pub meta: BuildMetadata,
    /// Flat ids of valid cells, ascending.
    pub cells: Vec<usize>,
    pub kinds: Vec<CellKind>,
    /// Successor flat ids per cell, aligned with `cells`.
    pub successors: Vec<Vec<usize>>,
}

impl GraphFile {
    pub fn from_graph(graph: &TransitionGraph, config_digest: &str) -> Self {
        let cells = graph.nodes().cells().to_vec();
        let successors = (0..graph.node_count())
            .map(|v| {
                graph
                    .successors(v)
                    .iter()
                    .map(|&t| cells[t as usize])
                    .collect()
            })
            .collect();
        Self {
            format: GRAPH_FORMAT.to_string(),
            config_digest: config_digest.to_string(),
            meta: graph.meta.clone(),
            kinds: graph.nodes().kinds().to_vec(),
            cells,
            successors,
        }
    }

    pub fn into_graph(self, context: &str) -> Result<TransitionGraph, IoError> {
        let bad = |message: String| IoError::Format {
            context: context.to_string(),
            message,
        };
        if self.format != GRAPH_FORMAT {
            return Err(bad(format!("unsupported graph format {:?}", self.format)));
        }
        let grid = LatentGrid::new(self.meta.subdivisions.clone())
            .map_err(|e: GeometryError| bad(e.to_string()))?;
        if self.cells.len() != self.kinds.len() || self.cells.len() != self.successors.len() {
            return Err(bad("cells, kinds and successors differ in length".into()));
        }
        if self.cells.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("cells are not strictly ascending".into()));
        }
        if self.cells.last().is_some_and(|&c| c >= grid.total_cells()) {
            return Err(bad("cell id outside the grid".into()));
        }
        let nodes = ValidCellSet::from_parts(
            self.cells
                .iter()
                .copied()
                .zip(self.kinds.iter().copied())
                .collect(),
        );
        let mut rows = Vec::with_capacity(self.successors.len());
        for (i, succ) in self.successors.iter().enumerate() {
            let mut row = Vec::with_capacity(succ.len());
            for &t in succ {
                let pos = nodes.position(t).ok_or_else(|| {
                    bad(format!(
                        "cell {} has an edge to unknown cell {t}",
                        self.cells[i]
                    ))
                })?;
                row.push(pos as u32);
            }
            rows.push(row);
        }
        Ok(TransitionGraph::from_parts(
            grid,
            nodes,
            Csr::from_adjacency(rows),
            self.meta,
        ))
    }
}

// ---------------------------------------------------------------- exports

/// DOT rendering of a Morse graph; one node per Morse set, in id order.
pub fn export_morse_dot(morse: &MorseGraph) -> String {
    let mut out = String::from("digraph morse {\n  rankdir=TB;\n  node [shape=ellipse];\n");
    for n in &morse.nodes {
        let _ = writeln!(
            out,
            "  m{id} [label=\"{id}\\ncells={cells}\\n{label}\", cells={cells}, is_attractor={att}, outcome=\"{label}\"{shape}];",
            id = n.id,
            cells = n.cells.len(),
            att = n.is_attractor,
            label = n.label,
            shape = if n.is_attractor { ", shape=doublecircle" } else { "" },
        );
    }
    for &(a, b) in &morse.edges {
        let _ = writeln!(out, "  m{a} -> m{b};");
    }
    out.push_str("}\n");
    out
}

/// CSV with one row per valid cell, in flat-id order.
pub fn export_roa(roa: &RoaAssignment, grid: &LatentGrid) -> String {
    let d = grid.dim();
    let mut out = String::from("cell_id");
    for a in 0..d {
        let _ = write!(out, ",idx_{a}");
    }
    for a in 0..d {
        let _ = write!(out, ",center_{a}");
    }
    out.push_str(",assignment\n");
    for (&cell, entry) in roa.cells.iter().zip(&roa.entries) {
        let idx = grid.cell_index(cell).expect("roa cells lie in the grid");
        let center = grid.cell_center(&idx).expect("valid cell");
        let _ = write!(out, "{cell}");
        for i in &idx.0 {
            let _ = write!(out, ",{i}");
        }
        for c in &center.0 {
            let _ = write!(out, ",{c}");
        }
        let _ = writeln!(out, ",{entry}");
    }
    out
}
