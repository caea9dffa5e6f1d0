//! Labelled trajectory datasets generated from the built-in maps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{dist, AnalyticSystem, DynamicsError, DynamicsMap};
use crate::evaluation::{Split, Trajectory, TrajectoryDataset};
use crate::geometry::LatentPoint;

/// Index of the attractor closest to `p`; index 0 is the success attractor.
pub fn nearest_attractor(system: &AnalyticSystem, p: &LatentPoint) -> usize {
    system
        .attractors()
        .iter()
        .enumerate()
        .map(|(i, a)| (i, dist(a.coords(), p.coords())))
        .fold(
            (0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
        .0
}

/// `trajectories` runs of `steps` steps from uniform initial states. A
/// trajectory is labelled success when its final state is nearer the
/// success attractor than any other attractor.
pub fn synth_dataset(
    system: &AnalyticSystem,
    trajectories: usize,
    steps: usize,
    seed: u64,
    split: Split,
) -> Result<TrajectoryDataset, DynamicsError> {
    if trajectories == 0 || steps == 0 {
        return Err(DynamicsError::InvalidArgument(
            "need at least one trajectory of at least one step".into(),
        ));
    }
    let map = DynamicsMap::analytic(system.clone())?;
    let d = system.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = (trajectories - 1).to_string().len().max(4);
    let mut out = Vec::with_capacity(trajectories);
    for i in 0..trajectories {
        let start = LatentPoint((0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect());
        let points = map.trajectory(&start, steps)?;
        let last = points.last().expect("trajectory has points");
        let label = (nearest_attractor(system, last) == 0) as u8;
        out.push(Trajectory {
            id: format!("traj-{i:0width$}"),
            label,
            points,
        });
    }
    TrajectoryDataset::new(d, split, out).map_err(|e| DynamicsError::InvalidArgument(e.to_string()))
}
