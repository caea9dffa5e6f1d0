//! Combinatorial outer approximation of the latent dynamics.
//!
//! Each valid cell's corners are pushed through the r-step map, every
//! image is inflated to a closed ball of radius `delta`, and the cell gets
//! an edge to every valid cell the union of those balls touches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digraph::Csr;
use crate::dynamics::{DynamicsError, DynamicsMap, RolloutSpec, Scratch};
use crate::evaluation::TrajectoryDataset;
use crate::geometry::{clamp_slice, CellIndex, GeometryError, LatentGrid, LatentPoint};

#[derive(Debug, Error)]
pub enum TransitionError {
    #[error("dataset has no points")]
    EmptyDataset,
    #[error("delta must be finite and non-negative, got {0}")]
    BadDelta(f64),
    #[error("map dimension {map} does not match grid dimension {grid}")]
    DimensionMismatch { map: usize, grid: usize },
    #[error("failed to start worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    /// Holds at least one trajectory point.
    Data,
    /// Moore neighbour of a data cell.
    Neighbor,
}

/// The analysis domain: cells holding data plus their Moore neighbours.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidCellSet {
    cells: Vec<usize>,
    kinds: Vec<CellKind>,
}

impl ValidCellSet {
    /// Builds from explicit `(flat id, kind)` pairs; sorts and deduplicates,
    /// preferring `Data` on collisions.
    pub fn from_parts(mut parts: Vec<(usize, CellKind)>) -> Self {
        parts.sort_by_key(|&(id, kind)| (id, kind != CellKind::Data));
        parts.dedup_by_key(|p| p.0);
        let (cells, kinds) = parts.into_iter().unzip();
        Self { cells, kinds }
    }

    /// Every cell of the grid, all marked as data cells.
    pub fn all(grid: &LatentGrid) -> Self {
        Self {
            cells: (0..grid.total_cells()).collect(),
            kinds: vec![CellKind::Data; grid.total_cells()],
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Flat ids in increasing order.
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn kinds(&self) -> &[CellKind] {
        &self.kinds
    }

    /// Position of a flat id in the node list.
    #[inline]
    pub fn position(&self, flat: usize) -> Option<usize> {
        self.cells.binary_search(&flat).ok()
    }

    pub fn contains(&self, flat: usize) -> bool {
        self.position(flat).is_some()
    }

    pub fn data_cell_count(&self) -> usize {
        self.kinds.iter().filter(|k| **k == CellKind::Data).count()
    }
}

/// Cells containing dataset points, plus all of their Moore neighbours.
pub fn valid_cells(
    dataset: &TrajectoryDataset,
    grid: &LatentGrid,
) -> Result<ValidCellSet, TransitionError> {
    valid_cells_from_points(dataset.all_points(), grid)
}

pub fn valid_cells_from_points<'a>(
    points: impl IntoIterator<Item = &'a LatentPoint>,
    grid: &LatentGrid,
) -> Result<ValidCellSet, TransitionError> {
    let mut data = Vec::new();
    for p in points {
        data.push(grid.flat_id(&grid.point_to_cell(p)?)?);
    }
    if data.is_empty() {
        return Err(TransitionError::EmptyDataset);
    }
    data.sort_unstable();
    data.dedup();
    let mut parts: Vec<(usize, CellKind)> = data.iter().map(|&f| (f, CellKind::Data)).collect();
    let mut idx = vec![0; grid.dim()];
    for &f in &data {
        grid.unflatten_into(f, &mut idx);
        grid.for_each_neighbor_flat(&idx, |n| parts.push((n, CellKind::Neighbor)));
    }
    Ok(ValidCellSet::from_parts(parts))
}

/// Parameters recorded alongside a built graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildMetadata {
    pub subdivisions: Vec<usize>,
    pub rollout_steps: usize,
    pub delta: f64,
    /// Estimated r-step Lipschitz constant, absent when delta was given directly.
    pub lipschitz: Option<f64>,
    pub extra_samples_per_cell: usize,
    pub seed: u64,
    pub dataset_digest: String,
    pub dynamics_digest: String,
    /// Ball-touched cells outside the valid set, summed over all sources.
    pub escaped_targets: u64,
    /// Ball-touched cells inside the valid set, summed over all sources.
    pub kept_targets: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BuildOptions {
    /// Random interior samples propagated per cell in addition to corners.
    pub extra_samples_per_cell: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
}

/// Directed graph `F` over the valid cells. Node `i` is `nodes().cells()[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionGraph {
    grid: LatentGrid,
    nodes: ValidCellSet,
    adjacency: Csr,
    pub meta: BuildMetadata,
}

impl TransitionGraph {
    /// Assembles a graph from parts; edges are node positions.
    pub fn from_parts(
        grid: LatentGrid,
        nodes: ValidCellSet,
        adjacency: Csr,
        meta: BuildMetadata,
    ) -> Self {
        assert_eq!(nodes.len(), adjacency.node_count());
        Self {
            grid,
            nodes,
            adjacency,
            meta,
        }
    }

    pub fn grid(&self) -> &LatentGrid {
        &self.grid
    }

    pub fn nodes(&self) -> &ValidCellSet {
        &self.nodes
    }

    pub fn adjacency(&self) -> &Csr {
        &self.adjacency
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.edge_count()
    }

    /// Successor node positions of node `v`, ascending.
    pub fn successors(&self, v: usize) -> &[u32] {
        self.adjacency.successors(v)
    }

    pub fn cell_of(&self, v: usize) -> CellIndex {
        self.grid
            .cell_index(self.nodes.cells()[v])
            .expect("node cell ids are valid")
    }

    /// Edges as `(from flat id, to flat id)` in deterministic order.
    pub fn flat_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cells = self.nodes.cells();
        self.adjacency
            .edges()
            .map(move |(a, b)| (cells[a], cells[b]))
    }

    /// Nodes with no successor inside the valid set.
    pub fn exit_cells(&self) -> usize {
        (0..self.node_count())
            .filter(|&v| self.successors(v).is_empty())
            .count()
    }
}

/// Summary of a built graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub data_cells: usize,
    pub edges: usize,
    pub exit_cells: usize,
    pub max_out_degree: usize,
    pub escaped_fraction: f64,
}

pub fn graph_stats(graph: &TransitionGraph) -> GraphStats {
    let n = graph.node_count();
    let max_out_degree = (0..n).map(|v| graph.successors(v).len()).max().unwrap_or(0);
    let total = graph.meta.escaped_targets + graph.meta.kept_targets;
    let escaped_fraction = if total == 0 {
        0.0
    } else {
        graph.meta.escaped_targets as f64 / total as f64
    };
    GraphStats {
        nodes: n,
        data_cells: graph.nodes.data_cell_count(),
        edges: graph.edge_count(),
        exit_cells: graph.exit_cells(),
        max_out_degree,
        escaped_fraction,
    }
}

/// Per-worker state for computing cell images.
pub(crate) struct ImageWorker<'a> {
    map: &'a DynamicsMap,
    grid: &'a LatentGrid,
    steps: usize,
    delta: f64,
    extra: usize,
    seed: u64,
    scratch: Scratch,
    idx: Vec<usize>,
    point: Vec<f64>,
    image: Vec<f64>,
}

impl<'a> ImageWorker<'a> {
    pub(crate) fn new(
        map: &'a DynamicsMap,
        grid: &'a LatentGrid,
        spec: RolloutSpec,
        delta: f64,
        extra: usize,
        seed: u64,
    ) -> Self {
        let d = grid.dim();
        Self {
            map,
            grid,
            steps: spec.steps(),
            delta,
            extra,
            seed,
            scratch: Scratch::default(),
            idx: vec![0; d],
            point: vec![0.0; d],
            image: vec![0.0; d],
        }
    }

    fn push_ball(&mut self, out: &mut Vec<usize>) -> Result<(), TransitionError> {
        self.map
            .rollout_into(&self.point, self.steps, &mut self.image, &mut self.scratch)?;
        clamp_slice(&mut self.image)?;
        self.grid
            .for_each_cell_in_ball(&self.image, self.delta, |f| out.push(f));
        Ok(())
    }

    /// Sorted, deduplicated flat ids touched by the cell's inflated image.
    pub(crate) fn image_of(
        &mut self,
        flat: usize,
        out: &mut Vec<usize>,
    ) -> Result<(), TransitionError> {
        out.clear();
        self.grid.unflatten_into(flat, &mut self.idx);
        for mask in 0..(1usize << self.grid.dim()) {
            self.grid.corner_into(&self.idx, mask, &mut self.point);
            self.push_ball(out)?;
        }
        if self.extra > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(flat as u64);
            for _ in 0..self.extra {
                for a in 0..self.grid.dim() {
                    let lo = self.grid.boundary(a, self.idx[a]);
                    let hi = self.grid.boundary(a, self.idx[a] + 1);
                    self.point[a] = rng.gen_range(lo..=hi);
                }
                self.push_ball(out)?;
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(())
    }
}

/// Every cell touched by the inflated r-step image of `cell`, before
/// restriction to any valid set.
pub fn cell_image(
    map: &DynamicsMap,
    grid: &LatentGrid,
    cell: &CellIndex,
    spec: RolloutSpec,
    delta: f64,
) -> Result<Vec<CellIndex>, TransitionError> {
    check_inputs(map, grid, delta)?;
    let flat = grid.flat_id(cell)?;
    let mut worker = ImageWorker::new(map, grid, spec, delta, 0, 0);
    let mut out = Vec::new();
    worker.image_of(flat, &mut out)?;
    out.into_iter()
        .map(|f| grid.cell_index(f).map_err(Into::into))
        .collect()
}

fn check_inputs(map: &DynamicsMap, grid: &LatentGrid, delta: f64) -> Result<(), TransitionError> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(TransitionError::BadDelta(delta));
    }
    if map.dim() != grid.dim() {
        return Err(TransitionError::DimensionMismatch {
            map: map.dim(),
            grid: grid.dim(),
        });
    }
    Ok(())
}

struct ChunkRows {
    rows: Vec<Vec<u32>>,
    escaped: u64,
    kept: u64,
}

/// Builds `F`. Work is split into contiguous runs of cells; rows are
/// concatenated in cell order, so the result does not depend on the
/// number of workers.
pub fn build_transition_graph(
    map: &DynamicsMap,
    cells: ValidCellSet,
    grid: &LatentGrid,
    spec: RolloutSpec,
    delta: f64,
    options: &BuildOptions,
) -> Result<TransitionGraph, TransitionError> {
    check_inputs(map, grid, delta)?;
    if let Some(&last) = cells.cells().last() {
        if last >= grid.total_cells() {
            return Err(GeometryError::InvalidFlatId(last).into());
        }
    }

    let run = || -> Result<Vec<ChunkRows>, TransitionError> {
        let threads = rayon::current_num_threads().max(1);
        let chunk_len = cells.len().div_ceil(threads * 8).max(1);
        cells
            .cells()
            .par_chunks(chunk_len)
            .map(|chunk| {
                let mut worker = ImageWorker::new(
                    map,
                    grid,
                    spec,
                    delta,
                    options.extra_samples_per_cell,
                    options.seed,
                );
                let mut image = Vec::new();
                let mut out = ChunkRows {
                    rows: Vec::with_capacity(chunk.len()),
                    escaped: 0,
                    kept: 0,
                };
                for &flat in chunk {
                    worker.image_of(flat, &mut image)?;
                    let mut row = Vec::with_capacity(image.len());
                    for &t in &image {
                        match cells.position(t) {
                            Some(pos) => row.push(pos as u32),
                            None => out.escaped += 1,
                        }
                    }
                    out.kept += row.len() as u64;
                    out.rows.push(row);
                }
                Ok(out)
            })
            .collect()
    };

    let chunks = match options.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| TransitionError::Pool(e.to_string()))?
            .install(run)?,
        None => run()?,
    };

    let (mut escaped, mut kept) = (0, 0);
    let mut rows = Vec::with_capacity(cells.len());
    for c in chunks {
        escaped += c.escaped;
        kept += c.kept;
        rows.extend(c.rows);
    }
    let meta = BuildMetadata {
        subdivisions: grid.subdivisions().to_vec(),
        rollout_steps: spec.steps(),
        delta,
        lipschitz: None,
        extra_samples_per_cell: options.extra_samples_per_cell,
        seed: options.seed,
        dataset_digest: String::new(),
        dynamics_digest: String::new(),
        escaped_targets: escaped,
        kept_targets: kept,
    };
    Ok(TransitionGraph {
        grid: grid.clone(),
        nodes: cells,
        adjacency: Csr::from_adjacency(rows),
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Activation, AnalyticSystem, DynamicsNet, Layer};
    use crate::evaluation::{Split, Trajectory};
    use std::collections::BTreeSet;

    fn dataset(points: Vec<Vec<f64>>) -> TrajectoryDataset {
        let d = points[0].len();
        let mut pts: Vec<LatentPoint> = points.into_iter().map(LatentPoint).collect();
        if pts.len() == 1 {
            pts.push(pts[0].clone());
        }
        TrajectoryDataset::new(
            d,
            Split::Train,
            vec![Trajectory {
                id: "t".into(),
                label: 1,
                points: pts,
            }],
        )
        .unwrap()
    }

    fn contraction_1d_graph() -> TransitionGraph {
        let g = LatentGrid::uniform(1, 4).unwrap();
        let m = DynamicsMap::analytic(AnalyticSystem::Contraction {
            dim: 1,
            factor: 0.5,
        })
        .unwrap();
        build_transition_graph(
            &m,
            ValidCellSet::all(&g),
            &g,
            RolloutSpec::new(1).unwrap(),
            0.125,
            &BuildOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn valid_cells_single_point() {
        let g = LatentGrid::uniform(2, 4).unwrap();
        let c = valid_cells(&dataset(vec![vec![0.1, 0.1]]), &g).unwrap();
        assert_eq!(c.data_cell_count(), 1);
        assert_eq!(c.len(), 9);
        let c = valid_cells(&dataset(vec![vec![-0.9, -0.9]]), &g).unwrap();
        assert_eq!(c.len(), 4);
    }

    #[test]
    fn valid_cells_full_cover() {
        let g = LatentGrid::uniform(2, 4).unwrap();
        let pts: Vec<Vec<f64>> = (0..16)
            .map(|f| g.cell_center(&g.cell_index(f).unwrap()).unwrap().0)
            .collect();
        let c = valid_cells(&dataset(pts), &g).unwrap();
        assert_eq!(c, ValidCellSet::all(&g));
    }

    #[test]
    fn valid_cells_two_patches() {
        // (-0.9,-0.9) sits in cell (0,0) of an 8x8 grid; (0.6,0.6) in (6,6).
        let g = LatentGrid::uniform(2, 8).unwrap();
        let c = valid_cells(&dataset(vec![vec![-0.9, -0.9], vec![0.6, 0.6]]), &g).unwrap();
        let mut expected = BTreeSet::new();
        for i in 0..=1 {
            for j in 0..=1 {
                expected.insert(i * 8 + j);
            }
        }
        for i in 5..=7 {
            for j in 5..=7 {
                expected.insert(i * 8 + j);
            }
        }
        assert_eq!(c.cells().iter().copied().collect::<BTreeSet<_>>(), expected);
        assert_eq!(c.data_cell_count(), 2);
    }

    #[test]
    fn contraction_graph_matches_sampling_oracle() {
        let f = contraction_1d_graph();
        // Sampling oracle: push 10^4 points per cell through z -> z/2 and
        // collect every cell within delta of an image.
        let g = f.grid().clone();
        let delta = 0.125;
        for v in 0..4 {
            let b = g.cell_box(&g.cell_index(v).unwrap()).unwrap();
            let mut sampled = BTreeSet::new();
            for i in 0..=10_000 {
                let x = b.lo.0[0] + (b.hi.0[0] - b.lo.0[0]) * i as f64 / 10_000.0;
                let y = 0.5 * x;
                for c in 0..4usize {
                    let cb = g.cell_box(&g.cell_index(c).unwrap()).unwrap();
                    let gap = (cb.lo.0[0] - y).max(y - cb.hi.0[0]).max(0.0);
                    if gap <= delta {
                        sampled.insert(c as u32);
                    }
                }
            }
            let got: BTreeSet<u32> = f.successors(v).iter().copied().collect();
            assert_eq!(got, sampled, "cell {v}");
            assert!(got.contains(&1) || got.contains(&2));
        }
        // cells flanking the origin reach each other
        assert!(f.adjacency().has_edge(1, 2) && f.adjacency().has_edge(2, 1));
        assert_eq!(f.edge_count(), 8);
    }

    #[test]
    fn identity_zero_delta_has_self_edges() {
        let g = LatentGrid::uniform(2, 5).unwrap();
        let net = DynamicsNet::new(
            2,
            vec![Layer {
                rows: 2,
                cols: 2,
                weights: vec![1.0, 0.0, 0.0, 1.0],
                bias: vec![0.0; 2],
                activation: Activation::Identity,
            }],
        )
        .unwrap();
        let m = DynamicsMap::Network(net);
        let f = build_transition_graph(
            &m,
            ValidCellSet::all(&g),
            &g,
            RolloutSpec::new(1).unwrap(),
            0.0,
            &BuildOptions::default(),
        )
        .unwrap();
        for v in 0..f.node_count() {
            assert!(f.adjacency().has_edge(v, v));
            // corners touch every Moore neighbour, nothing else
            let mut n = 0;
            g.for_each_neighbor_flat(&f.cell_of(v).0, |_| n += 1);
            assert_eq!(f.successors(v).len(), n + 1);
        }
    }

    #[test]
    fn huge_delta_is_complete() {
        let g = LatentGrid::uniform(2, 4).unwrap();
        let m = DynamicsMap::analytic(AnalyticSystem::bistable_2d()).unwrap();
        let f = build_transition_graph(
            &m,
            ValidCellSet::all(&g),
            &g,
            RolloutSpec::new(2).unwrap(),
            2.0 * 2f64.sqrt(),
            &BuildOptions::default(),
        )
        .unwrap();
        assert_eq!(f.edge_count(), 16 * 16);
        assert_eq!(graph_stats(&f).max_out_degree, 16);
    }

    #[test]
    fn stats_recount() {
        let f = contraction_1d_graph();
        let s = graph_stats(&f);
        let recount: usize = (0..4).map(|v| f.successors(v).len()).sum();
        assert_eq!(s.edges, recount);
        assert_eq!(s.nodes, 4);
        assert_eq!(s.exit_cells, 0);
        assert_eq!(s.max_out_degree, 2);
        assert_eq!(s.escaped_fraction, 0.0);
    }

    #[test]
    fn edgeless_stats() {
        let g = LatentGrid::uniform(1, 4).unwrap();
        let nodes = ValidCellSet::from_parts(vec![(0, CellKind::Data), (1, CellKind::Neighbor)]);
        let f = TransitionGraph::from_parts(
            g.clone(),
            nodes,
            Csr::from_adjacency(vec![Vec::<u32>::new(), vec![]]),
            BuildMetadata {
                subdivisions: vec![4],
                rollout_steps: 1,
                delta: 0.0,
                lipschitz: None,
                extra_samples_per_cell: 0,
                seed: 0,
                dataset_digest: String::new(),
                dynamics_digest: String::new(),
                escaped_targets: 0,
                kept_targets: 0,
            },
        );
        let s = graph_stats(&f);
        assert_eq!((s.edges, s.exit_cells), (0, 2));
    }

    #[test]
    fn escaped_targets_are_tallied() {
        // only the two outer cells are valid; contraction flows inward.
        // The inner corner lands on the shared face, so each cell keeps a
        // self-edge and loses the inner neighbour.
        let g = LatentGrid::uniform(1, 4).unwrap();
        let m = DynamicsMap::analytic(AnalyticSystem::Contraction {
            dim: 1,
            factor: 0.5,
        })
        .unwrap();
        let nodes = ValidCellSet::from_parts(vec![(0, CellKind::Data), (3, CellKind::Data)]);
        let f = build_transition_graph(
            &m,
            nodes,
            &g,
            RolloutSpec::new(1).unwrap(),
            0.0,
            &BuildOptions::default(),
        )
        .unwrap();
        assert_eq!(f.flat_edges().collect::<Vec<_>>(), vec![(0, 0), (3, 3)]);
        let s = graph_stats(&f);
        assert_eq!(s.exit_cells, 0);
        assert_eq!(s.escaped_fraction, 0.5);
        assert_eq!((f.meta.escaped_targets, f.meta.kept_targets), (2, 2));
    }

    #[test]
    fn worker_count_does_not_change_graph() {
        let g = LatentGrid::uniform(2, 16).unwrap();
        let m = DynamicsMap::analytic(AnalyticSystem::bistable_2d()).unwrap();
        let build = |workers| {
            build_transition_graph(
                &m,
                ValidCellSet::all(&g),
                &g,
                RolloutSpec::new(3).unwrap(),
                0.1,
                &BuildOptions {
                    extra_samples_per_cell: 3,
                    seed: 9,
                    workers: Some(workers),
                },
            )
            .unwrap()
        };
        assert_eq!(build(1), build(4));
    }

    #[test]
    fn extra_samples_only_add_edges() {
        let g = LatentGrid::uniform(2, 12).unwrap();
        let m = DynamicsMap::analytic(AnalyticSystem::bistable_2d()).unwrap();
        let mk = |extra| {
            build_transition_graph(
                &m,
                ValidCellSet::all(&g),
                &g,
                RolloutSpec::new(2).unwrap(),
                0.05,
                &BuildOptions {
                    extra_samples_per_cell: extra,
                    ..Default::default()
                },
            )
            .unwrap()
        };
        let base: BTreeSet<_> = mk(0).flat_edges().collect();
        let more: BTreeSet<_> = mk(8).flat_edges().collect();
        assert!(base.is_subset(&more));
    }

    #[test]
    fn bad_inputs() {
        let g = LatentGrid::uniform(2, 4).unwrap();
        let m = DynamicsMap::analytic(AnalyticSystem::bistable_1d()).unwrap();
        let spec = RolloutSpec::new(1).unwrap();
        assert!(matches!(
            build_transition_graph(
                &m,
                ValidCellSet::all(&g),
                &g,
                spec,
                0.1,
                &BuildOptions::default()
            ),
            Err(TransitionError::DimensionMismatch { .. })
        ));
        let g1 = LatentGrid::uniform(1, 4).unwrap();
        assert!(matches!(
            cell_image(&m, &g1, &CellIndex::new(vec![0]), spec, -1.0),
            Err(TransitionError::BadDelta(_))
        ));
    }
}
