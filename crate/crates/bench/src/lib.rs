//! Shared fixtures for the criterion benches.

use latmorse_core::transition::ValidCellSet;
use latmorse_core::{AnalyticSystem, Csr, DynamicsMap, LatentGrid};

/// Everything needed to build a transition graph over a full grid.
pub struct GraphFixture {
    pub map: DynamicsMap,
    pub grid: LatentGrid,
    pub cells: ValidCellSet,
}

pub fn full_grid(system: AnalyticSystem, per_axis: usize) -> GraphFixture {
    let grid = LatentGrid::uniform(system.dim(), per_axis).expect("grid");
    let map = DynamicsMap::analytic(system).expect("map");
    let cells = ValidCellSet::all(&grid);
    GraphFixture { map, grid, cells }
}

/// Seeded sparse random digraph with roughly `n * avg_degree` edges.
pub fn random_digraph(n: usize, avg_degree: usize, seed: u64) -> Csr {
    // splitmix64; keeps the bench crate free of RNG dependencies
    let mut state = seed;
    let mut next = move || {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    let rows: Vec<Vec<u32>> = (0..n)
        .map(|_| {
            let mut row: Vec<u32> = (0..avg_degree)
                .map(|_| (next() % n as u64) as u32)
                .collect();
            row.sort_unstable();
            row.dedup();
            row
        })
        .collect();
    Csr::from_adjacency(rows)
}
