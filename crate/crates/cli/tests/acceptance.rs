//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero if any fail.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use latmorse_core::evaluation::Confusion;
use latmorse_core::{
    build_morse_graph, build_transition_graph, regions_of_attraction,
    strongly_connected_components, AnalyticSystem, BuildOptions, Csr, DynamicsMap, LatentGrid,
    LatentPoint, RoaEntry, RolloutSpec, TransitionGraph, ValidCellSet,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 6] = [
        ("P1", "outer-approximation soundness", p1_soundness),
        ("P2", "SCC against transitive closure", p2_scc_oracle),
        ("P3", "bistable_2d Morse graph and ROA", p3_bistable_2d),
        ("P4", "structural invariants", p4_invariants),
        ("P5", "metrics arithmetic", p5_metrics),
        ("P6", "determinism", p6_determinism),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        let t0 = Instant::now();
        let outcome = run();
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{id} PASS  {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{id} FAIL  {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn full_graph(sys: &AnalyticSystem, per_axis: usize, steps: usize, delta: f64) -> TransitionGraph {
    let grid = LatentGrid::uniform(sys.dim(), per_axis).unwrap();
    let map = DynamicsMap::analytic(sys.clone()).unwrap();
    build_transition_graph(
        &map,
        ValidCellSet::all(&grid),
        &grid,
        RolloutSpec::new(steps).unwrap(),
        delta,
        &BuildOptions::default(),
    )
    .unwrap()
}

// ------------------------------------------------------------------ P1

fn p1_soundness() -> Outcome {
    const SAMPLES: usize = 1000;
    let systems = [
        AnalyticSystem::contraction(1),
        AnalyticSystem::contraction(2),
        AnalyticSystem::bistable_1d(),
        AnalyticSystem::bistable_2d(),
    ];
    let mut checked = 0usize;
    let mut builds = 0usize;
    for sys in &systems {
        for per_axis in [8, 32] {
            for steps in [1, 12] {
                let grid = LatentGrid::uniform(sys.dim(), per_axis).unwrap();
                let spec = RolloutSpec::new(steps).unwrap();
                // exact constant, no safety margin
                let delta = sys.lipschitz_bound(steps) * grid.cell_half_diagonal();
                let f = full_graph(sys, per_axis, steps, delta);
                let map = DynamicsMap::analytic(sys.clone()).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(builds as u64);
                builds += 1;
                for v in 0..f.node_count() {
                    let cell = f.cell_of(v);
                    let bx = grid.cell_box(&cell).unwrap();
                    for _ in 0..SAMPLES {
                        let p = LatentPoint::new(
                            bx.lo
                                .coords()
                                .iter()
                                .zip(bx.hi.coords())
                                .map(|(&l, &h)| rng.gen_range(l..h))
                                .collect(),
                        );
                        let image = map.rollout(&p, spec).unwrap();
                        let target = grid.flat_id(&grid.point_to_cell(&image).unwrap()).unwrap();
                        let t = f.nodes().position(target).ok_or_else(|| {
                            format!("{}: image cell {target} outside the valid set", sys.name())
                        })?;
                        ensure(f.adjacency().has_edge(v, t), || {
                            format!(
                                "{} grid {per_axis} r={steps}: {:?} maps into cell {target}, \
                                 which is not a successor of cell {}",
                                sys.name(),
                                p.coords(),
                                f.nodes().cells()[v]
                            )
                        })?;
                        checked += 1;
                    }
                }
            }
        }
    }
    Ok(format!(
        "{checked} sampled images over {builds} builds, 0 violations"
    ))
}

// ------------------------------------------------------------------ P2

#[allow(clippy::needless_range_loop)]
fn p2_scc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let n = rng.gen_range(1..=200usize);
        let rows: Vec<Vec<u32>> = (0..n)
            .map(|_| (0..n as u32).filter(|_| rng.gen_bool(0.05)).collect())
            .collect();
        let g = Csr::from_adjacency(rows);

        // boolean transitive closure with reflexivity
        let mut reach = vec![vec![false; n]; n];
        for (u, row) in reach.iter_mut().enumerate() {
            row[u] = true;
            for &v in g.successors(u) {
                row[v as usize] = true;
            }
        }
        for k in 0..n {
            let via = reach[k].clone();
            for row in reach.iter_mut().filter(|row| row[k]) {
                for (r, &w) in row.iter_mut().zip(&via) {
                    *r |= w;
                }
            }
        }

        let comps = strongly_connected_components(&g);
        for u in 0..n {
            for v in 0..n {
                let same = comps.component_of[u] == comps.component_of[v];
                let oracle = reach[u][v] && reach[v][u];
                ensure(same == oracle, || {
                    format!("case {case} (n={n}): nodes {u},{v} same={same} oracle={oracle}")
                })?;
            }
        }
        let total: usize = comps.members.iter().map(Vec::len).sum();
        ensure(total == n, || {
            format!("case {case}: partition covers {total} of {n}")
        })?;
    }
    Ok("100 random digraphs match exactly".into())
}

// ------------------------------------------------------------------ P3

fn latmorse(args: &[&str], dir: &Path) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_latmorse"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| format!("spawn failed: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "latmorse {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

const BISTABLE_CONFIG: &str = r#"{
  "task": "bistable_2d",
  "subdivisions": [32, 32],
  "rollout_steps": 12,
  "dynamics": {"analytic": {"system": "bistable_2d"}},
  "dataset": "train.json",
  "validation": "validation.json",
  "output_dir": "out"
}
"#;

fn prepare_bistable(dir: &Path) -> Result<(), String> {
    latmorse(
        &[
            "synth",
            "--system",
            "bistable_2d",
            "--trajectories",
            "500",
            "--steps",
            "50",
            "--seed",
            "1",
            "--out",
            "train.json",
        ],
        dir,
    )?;
    // ground truth: labels come from 500-step simulation
    latmorse(
        &[
            "synth",
            "--system",
            "bistable_2d",
            "--trajectories",
            "200",
            "--steps",
            "500",
            "--seed",
            "2",
            "--split",
            "validation",
            "--out",
            "validation.json",
        ],
        dir,
    )?;
    std::fs::write(dir.join("config.json"), BISTABLE_CONFIG).map_err(|e| e.to_string())
}

fn p3_bistable_2d() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    prepare_bistable(dir.path())?;
    latmorse(&["analyze", "--config", "config.json"], dir.path())?;
    let text =
        std::fs::read_to_string(dir.path().join("out/report.json")).map_err(|e| e.to_string())?;
    let report: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let attractors = report["attractors"].as_array().map(Vec::len).unwrap_or(0);
    let f = report["report"]["f_score"].as_f64().unwrap_or(f64::NAN);
    let predictions = report["report"]["predictions"]
        .as_array()
        .map(Vec::len)
        .unwrap_or(0);
    let detail = format!("{attractors} attractors, F = {f:.4} over {predictions} initial states");
    ensure(predictions == 200, || {
        format!("expected 200 predictions; {detail}")
    })?;
    ensure(attractors == 2 && f >= 0.95, || detail.clone())?;
    Ok(detail)
}

// ------------------------------------------------------------------ P4

fn check_invariants(f: &TransitionGraph, label: &str) -> Result<(), String> {
    let mg = build_morse_graph(f);
    let order = mg.topological_order();
    ensure(order.is_some(), || {
        format!("{label}: Morse graph has a cycle")
    })?;
    ensure(mg.edges.iter().all(|&(a, b)| a < b), || {
        format!("{label}: Morse edge against id order")
    })?;

    let mut seen = BTreeSet::new();
    for node in &mg.nodes {
        for &c in &node.cells {
            ensure(seen.insert(c), || {
                format!("{label}: cell {c} in two Morse sets")
            })?;
        }
    }

    let roa = regions_of_attraction(f, &mg);
    ensure(roa.cells == f.nodes().cells(), || {
        format!("{label}: ROA does not cover the valid cells exactly")
    })?;
    let mut assigned = BTreeSet::new();
    for a in mg.attractors() {
        for c in roa.region(a.id) {
            ensure(assigned.insert(c), || {
                format!("{label}: cell {c} in two regions")
            })?;
        }
    }
    let amb = roa.count(RoaEntry::Ambiguous);
    let unr = roa.count(RoaEntry::Unreachable);
    ensure(assigned.len() + amb + unr == f.node_count(), || {
        format!(
            "{label}: assigned {} + ambiguous {amb} + unreachable {unr} != {}",
            assigned.len(),
            f.node_count()
        )
    })?;
    Ok(())
}

fn p4_invariants() -> Outcome {
    let mut builds = 0;
    for (sys, n, r) in [
        (AnalyticSystem::contraction(2), 16, 12),
        (AnalyticSystem::bistable_1d(), 32, 1),
        (AnalyticSystem::bistable_1d(), 32, 12),
        (AnalyticSystem::bistable_2d(), 32, 12),
        (AnalyticSystem::bistable_2d(), 16, 1),
    ] {
        for safety in [1.0, 1.5] {
            let grid = LatentGrid::uniform(sys.dim(), n).unwrap();
            let delta = safety * sys.lipschitz_bound(r) * grid.cell_half_diagonal();
            let f = full_graph(&sys, n, r, delta);
            check_invariants(&f, &format!("{} n={n} r={r} s={safety}", sys.name()))?;
            builds += 1;
        }
    }

    // a sparse valid set with exits
    let sys = AnalyticSystem::bistable_2d();
    let grid = LatentGrid::uniform(2, 32).unwrap();
    let cells = ValidCellSet::from_parts(
        (0..grid.total_cells())
            .filter(|c| c % 3 != 0)
            .map(|c| (c, latmorse_core::transition::CellKind::Data))
            .collect(),
    );
    let map = DynamicsMap::analytic(sys.clone()).unwrap();
    let spec = RolloutSpec::new(12).unwrap();
    let f = build_transition_graph(
        &map,
        cells.clone(),
        &grid,
        spec,
        0.2,
        &BuildOptions::default(),
    )
    .unwrap();
    check_invariants(&f, "bistable_2d sparse")?;
    builds += 1;

    // delta monotonicity: the edge set only grows with delta
    let mut spot = 0;
    for (d1, d2) in [(0.05, 0.2), (0.2, 0.4)] {
        let small = build_transition_graph(
            &map,
            cells.clone(),
            &grid,
            spec,
            d1,
            &BuildOptions::default(),
        )
        .unwrap();
        let large = build_transition_graph(
            &map,
            cells.clone(),
            &grid,
            spec,
            d2,
            &BuildOptions::default(),
        )
        .unwrap();
        let big: BTreeSet<_> = large.flat_edges().collect();
        let missing = small.flat_edges().filter(|e| !big.contains(e)).count();
        ensure(missing == 0, || {
            format!("delta {d1} -> {d2}: {missing} edges lost")
        })?;
        ensure(large.edge_count() >= small.edge_count(), || {
            "edge count shrank".into()
        })?;
        spot += 1;
    }
    Ok(format!(
        "{builds} builds checked, {spot} delta pairs monotone"
    ))
}

// ------------------------------------------------------------------ P5

fn p5_metrics() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
    let s = Confusion {
        tp: 3,
        fp: 1,
        fn_: 2,
        tn: 4,
    }
    .scores();
    ensure(
        close(s.precision, 0.75) && close(s.recall, 0.6) && close(s.f_score, 2.0 / 3.0),
        || format!("(3,1,2,4) gave {s:?}"),
    )?;
    for (c, expect) in [
        (
            Confusion {
                tp: 0,
                fp: 0,
                fn_: 0,
                tn: 5,
            },
            (0.0, 0.0, 0.0),
        ),
        (
            Confusion {
                tp: 0,
                fp: 0,
                fn_: 3,
                tn: 1,
            },
            (0.0, 0.0, 0.0),
        ),
        (
            Confusion {
                tp: 0,
                fp: 2,
                fn_: 0,
                tn: 1,
            },
            (0.0, 0.0, 0.0),
        ),
        (
            Confusion {
                tp: 0,
                fp: 2,
                fn_: 3,
                tn: 1,
            },
            (0.0, 0.0, 0.0),
        ),
    ] {
        let s = c.scores();
        ensure(
            (s.precision, s.recall, s.f_score) == expect
                && s.precision.is_finite()
                && s.f_score.is_finite(),
            || format!("{c:?} gave {s:?}"),
        )?;
    }
    Ok(format!(
        "P={:.4} R={:.4} F={:.4}; zero denominators give 0",
        s.precision, s.recall, s.f_score
    ))
}

// ------------------------------------------------------------------ P6

fn p6_determinism() -> Outcome {
    const ARTIFACTS: [&str; 4] = ["graph.json", "morse.dot", "roa.csv", "report.json"];
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for (i, dir) in dirs.iter().enumerate() {
        prepare_bistable(dir.path())?;
        // different worker counts must not matter either
        let workers = if i == 0 { "1" } else { "4" };
        latmorse(
            &["--workers", workers, "analyze", "--config", "config.json"],
            dir.path(),
        )?;
    }
    for name in ARTIFACTS {
        let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("out").join(name));
        let a = read(&dirs[0]).map_err(|e| format!("{name}: {e}"))?;
        let b = read(&dirs[1]).map_err(|e| format!("{name}: {e}"))?;
        ensure(a == b, || format!("{name} differs between runs"))?;
    }
    Ok(format!(
        "{} byte-identical across two runs",
        ARTIFACTS.join(", ")
    ))
}
