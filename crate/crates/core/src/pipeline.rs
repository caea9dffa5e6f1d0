//! Staged analysis with digest-checked artifacts.
//!
//! ```text
//! build-graph -> graph.json
//! morse       -> morse.json, morse.dot
//! roa         -> roa.json, roa.csv
//! evaluate    -> report.json, morse.dot (labelled)
//! ```
//!
//! Every artifact records the config digest, and each downstream artifact
//! records the SHA-256 of the file it was computed from. A stage refuses
//! to run on an artifact whose recorded digests disagree with the current
//! inputs. Timings go to `run_meta.json`, which is never digested.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AnalysisConfig, ConfigError, DynamicsSource};
use crate::dynamics::{delta_radius, estimate_lipschitz, DynamicsError, DynamicsMap, RolloutSpec};
use crate::evaluation::{
    classify_initial_states, endpoint_sets, label_attractors, summary_table, ClassificationReport,
    EvaluationError, Scores,
};
use crate::geometry::{GeometryError, LatentGrid};
use crate::io::{
    dataset_digest, dynamics_digest, export_morse_dot, export_roa, from_json, load_dynamics_net,
    load_trajectories, read_text, sha256_hex, to_json_pretty, write_text, GraphFile, IoError,
};
use crate::morse::{build_morse_graph, regions_of_attraction, MorseGraph, RoaAssignment, RoaEntry};
use crate::transition::{
    build_transition_graph, graph_stats, valid_cells, BuildOptions, GraphStats, TransitionError,
    TransitionGraph,
};

pub const GRAPH_FILE: &str = "graph.json";
pub const MORSE_FILE: &str = "morse.json";
pub const MORSE_DOT_FILE: &str = "morse.dot";
pub const ROA_FILE: &str = "roa.json";
pub const ROA_CSV_FILE: &str = "roa.csv";
pub const REPORT_FILE: &str = "report.json";
pub const RUN_META_FILE: &str = "run_meta.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error("missing artifact {path}; run `{stage}` first")]
    Missing { path: PathBuf, stage: &'static str },
    #[error(
        "stale artifact {path}: recorded {what} digest {recorded} does not match current {current}; \
         re-run `{stage}`"
    )]
    Stale {
        path: PathBuf,
        what: &'static str,
        recorded: String,
        current: String,
        stage: &'static str,
    },
    #[error("cannot create output directory {path}: {source}")]
    OutputDir {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// A config bound to the directory it was loaded from.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub config: AnalysisConfig,
    /// Config with paths resolved.
    resolved: AnalysisConfig,
    pub config_digest: String,
    pub workers: Option<usize>,
}

impl Analysis {
    pub fn new(config: AnalysisConfig, base_dir: &Path) -> Result<Self, PipelineError> {
        config.validate()?;
        let resolved = config.resolved(base_dir);
        Ok(Self {
            config_digest: config.digest(),
            config,
            resolved,
            workers: None,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let config = AnalysisConfig::load(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::new(config, base)
    }

    pub fn with_workers(mut self, workers: Option<usize>) -> Self {
        self.workers = workers;
        self
    }

    pub fn output_dir(&self) -> &Path {
        &self.resolved.output_dir
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.resolved.output_dir.join(name)
    }

    pub fn grid(&self) -> Result<LatentGrid, PipelineError> {
        Ok(LatentGrid::new(self.config.subdivisions.clone())?)
    }

    pub fn load_dynamics(&self) -> Result<DynamicsMap, PipelineError> {
        Ok(match &self.resolved.dynamics {
            DynamicsSource::Weights(p) => DynamicsMap::Network(load_dynamics_net(p)?),
            DynamicsSource::Analytic(sys) => DynamicsMap::analytic(sys.clone())?,
        })
    }

    fn ensure_output_dir(&self) -> Result<(), PipelineError> {
        std::fs::create_dir_all(self.output_dir()).map_err(|source| PipelineError::OutputDir {
            path: self.output_dir().to_path_buf(),
            source,
        })
    }

    fn read_artifact(
        &self,
        name: &str,
        stage: &'static str,
    ) -> Result<(String, PathBuf), PipelineError> {
        let path = self.artifact(name);
        if !path.exists() {
            return Err(PipelineError::Missing { path, stage });
        }
        Ok((read_text(&path)?, path))
    }

    fn check(
        &self,
        path: &Path,
        what: &'static str,
        recorded: &str,
        current: &str,
        stage: &'static str,
    ) -> Result<(), PipelineError> {
        if recorded != current {
            return Err(PipelineError::Stale {
                path: path.to_path_buf(),
                what,
                recorded: recorded.to_string(),
                current: current.to_string(),
                stage,
            });
        }
        Ok(())
    }

    // ------------------------------------------------------------ stages

    pub fn build_graph(&self) -> Result<(TransitionGraph, StageTiming), PipelineError> {
        let t0 = Instant::now();
        let grid = self.grid()?;
        let dataset = load_trajectories(&self.resolved.dataset)?;
        let map = self.load_dynamics()?;
        if dataset.dim != grid.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: grid.dim(),
                got: dataset.dim,
            }
            .into());
        }
        let spec = RolloutSpec::new(self.config.rollout_steps)?;
        let (delta, lipschitz) = match self.config.delta {
            Some(d) => (d, None),
            None => {
                let l = estimate_lipschitz(
                    &map,
                    spec,
                    self.config.lipschitz_samples,
                    self.config.lipschitz_pair_scale,
                    self.config.seed,
                )?;
                (delta_radius(l, &grid, self.config.safety_factor), Some(l))
            }
        };
        let cells = valid_cells(&dataset, &grid)?;
        let options = BuildOptions {
            extra_samples_per_cell: self.config.extra_samples_per_cell,
            seed: self.config.seed,
            workers: self.workers,
        };
        let mut graph = build_transition_graph(&map, cells, &grid, spec, delta, &options)?;
        graph.meta.lipschitz = lipschitz;
        graph.meta.dataset_digest = dataset_digest(&dataset);
        graph.meta.dynamics_digest = dynamics_digest(&map);

        self.ensure_output_dir()?;
        let file = GraphFile::from_graph(&graph, &self.config_digest);
        write_text(&self.artifact(GRAPH_FILE), &to_json_pretty(&file))?;
        Ok((graph, StageTiming::new("build-graph", t0)))
    }

    /// Reads the cached graph, checking it against the current config,
    /// dataset and dynamics. Returns the graph and the digest of its file.
    pub fn load_graph(&self) -> Result<(TransitionGraph, String), PipelineError> {
        let (text, path) = self.read_artifact(GRAPH_FILE, "build-graph")?;
        let file: GraphFile = from_json(&text, &path.display().to_string())?;
        self.check(
            &path,
            "config",
            &file.config_digest,
            &self.config_digest,
            "build-graph",
        )?;
        let dataset = load_trajectories(&self.resolved.dataset)?;
        self.check(
            &path,
            "dataset",
            &file.meta.dataset_digest,
            &dataset_digest(&dataset),
            "build-graph",
        )?;
        let map = self.load_dynamics()?;
        self.check(
            &path,
            "dynamics",
            &file.meta.dynamics_digest,
            &dynamics_digest(&map),
            "build-graph",
        )?;
        let graph = file.into_graph(&path.display().to_string())?;
        Ok((graph, sha256_hex(text.as_bytes())))
    }

    pub fn morse(
        &self,
        graph: &TransitionGraph,
        graph_digest: &str,
    ) -> Result<(MorseGraph, StageTiming), PipelineError> {
        let t0 = Instant::now();
        let morse = build_morse_graph(graph);
        self.ensure_output_dir()?;
        let file = MorseFile {
            config_digest: self.config_digest.clone(),
            graph_digest: graph_digest.to_string(),
            morse: morse.clone(),
        };
        write_text(&self.artifact(MORSE_FILE), &to_json_pretty(&file))?;
        self.write_dot(&morse)?;
        Ok((morse, StageTiming::new("morse", t0)))
    }

    fn write_dot(&self, morse: &MorseGraph) -> Result<(), PipelineError> {
        let dot = format!(
            "// config_digest {}\n{}",
            self.config_digest,
            export_morse_dot(morse)
        );
        write_text(&self.artifact(MORSE_DOT_FILE), &dot)?;
        Ok(())
    }

    pub fn load_morse(&self, graph_digest: &str) -> Result<(MorseGraph, String), PipelineError> {
        let (text, path) = self.read_artifact(MORSE_FILE, "morse")?;
        let file: MorseFile = from_json(&text, &path.display().to_string())?;
        self.check(
            &path,
            "config",
            &file.config_digest,
            &self.config_digest,
            "morse",
        )?;
        self.check(&path, "graph", &file.graph_digest, graph_digest, "morse")?;
        Ok((file.morse, sha256_hex(text.as_bytes())))
    }

    pub fn roa(
        &self,
        graph: &TransitionGraph,
        morse: &MorseGraph,
        morse_digest: &str,
    ) -> Result<(RoaAssignment, StageTiming), PipelineError> {
        let t0 = Instant::now();
        let roa = regions_of_attraction(graph, morse);
        self.ensure_output_dir()?;
        let file = RoaFile {
            config_digest: self.config_digest.clone(),
            morse_digest: morse_digest.to_string(),
            ambiguous: roa.count(RoaEntry::Ambiguous),
            unreachable: roa.count(RoaEntry::Unreachable),
            roa: roa.clone(),
        };
        write_text(&self.artifact(ROA_FILE), &to_json_pretty(&file))?;
        write_text(
            &self.artifact(ROA_CSV_FILE),
            &export_roa(&roa, graph.grid()),
        )?;
        Ok((roa, StageTiming::new("roa", t0)))
    }

    pub fn load_roa(&self, morse_digest: &str) -> Result<(RoaAssignment, String), PipelineError> {
        let (text, path) = self.read_artifact(ROA_FILE, "roa")?;
        let file: RoaFile = from_json(&text, &path.display().to_string())?;
        self.check(
            &path,
            "config",
            &file.config_digest,
            &self.config_digest,
            "roa",
        )?;
        self.check(&path, "morse", &file.morse_digest, morse_digest, "roa")?;
        Ok((file.roa, sha256_hex(text.as_bytes())))
    }

    pub fn evaluate(
        &self,
        graph: &TransitionGraph,
        morse: &MorseGraph,
        roa: &RoaAssignment,
        roa_digest: &str,
    ) -> Result<(ReportFile, MorseGraph, StageTiming), PipelineError> {
        let t0 = Instant::now();
        let validation = load_trajectories(self.resolved.validation_path())?;
        let endpoints = endpoint_sets(&validation)?;
        let (labeled, votes) = label_attractors(morse, roa, &endpoints, graph.grid())?;
        let report = classify_initial_states(&endpoints, roa, &labeled, graph.grid())?;
        let file = ReportFile {
            config_digest: self.config_digest.clone(),
            roa_digest: roa_digest.to_string(),
            validation_digest: dataset_digest(&validation),
            task: self.task_name(),
            latent_dim: graph.grid().dim(),
            graph: graph_stats(graph),
            morse_nodes: morse.nodes.len(),
            attractors: labeled
                .attractors()
                .map(|a| AttractorSummary {
                    id: a.id,
                    cells: a.cells.len(),
                    label: a.label.to_string(),
                    success_votes: votes[a.id].success,
                    failure_votes: votes[a.id].failure,
                })
                .collect(),
            report,
        };
        self.ensure_output_dir()?;
        write_text(&self.artifact(REPORT_FILE), &to_json_pretty(&file))?;
        self.write_dot(&labeled)?;
        Ok((file, labeled, StageTiming::new("evaluate", t0)))
    }

    fn task_name(&self) -> String {
        self.config
            .task
            .clone()
            .unwrap_or_else(|| match &self.config.dynamics {
                DynamicsSource::Analytic(sys) => sys.name().to_string(),
                DynamicsSource::Weights(p) => p.display().to_string(),
            })
    }

    /// Full pipeline from inputs to report.
    pub fn analyze(&self) -> Result<AnalyzeOutcome, PipelineError> {
        let mut timings = Vec::new();
        let (graph, t) = self.build_graph()?;
        timings.push(t);
        let graph_digest = sha256_hex(read_text(&self.artifact(GRAPH_FILE))?.as_bytes());
        let (morse, t) = self.morse(&graph, &graph_digest)?;
        timings.push(t);
        let morse_digest = sha256_hex(read_text(&self.artifact(MORSE_FILE))?.as_bytes());
        let (roa, t) = self.roa(&graph, &morse, &morse_digest)?;
        timings.push(t);
        let roa_digest = sha256_hex(read_text(&self.artifact(ROA_FILE))?.as_bytes());
        let (report, labeled, t) = self.evaluate(&graph, &morse, &roa, &roa_digest)?;
        timings.push(t);
        self.write_run_meta(&timings)?;
        Ok(AnalyzeOutcome {
            stats: graph_stats(&graph),
            graph,
            morse: labeled,
            roa,
            report,
        })
    }

    pub fn write_run_meta(&self, timings: &[StageTiming]) -> Result<(), PipelineError> {
        let meta = RunMeta {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: self.config_digest.clone(),
            stages: timings.to_vec(),
        };
        self.ensure_output_dir()?;
        write_text(&self.artifact(RUN_META_FILE), &to_json_pretty(&meta))?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AnalyzeOutcome {
    pub graph: TransitionGraph,
    pub stats: GraphStats,
    /// Morse graph with attractor labels filled in.
    pub morse: MorseGraph,
    pub roa: RoaAssignment,
    pub report: ReportFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MorseFile {
    pub config_digest: String,
    pub graph_digest: String,
    pub morse: MorseGraph,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoaFile {
    pub config_digest: String,
    pub morse_digest: String,
    pub ambiguous: usize,
    pub unreachable: usize,
    pub roa: RoaAssignment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractorSummary {
    pub id: usize,
    pub cells: usize,
    pub label: String,
    pub success_votes: usize,
    pub failure_votes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config_digest: String,
    pub roa_digest: String,
    pub validation_digest: String,
    pub task: String,
    pub latent_dim: usize,
    pub graph: GraphStats,
    pub morse_nodes: usize,
    pub attractors: Vec<AttractorSummary>,
    pub report: ClassificationReport,
}

impl ReportFile {
    pub fn table(&self) -> String {
        summary_table(&[(
            self.task.clone(),
            self.latent_dim,
            Scores {
                precision: self.report.precision,
                recall: self.report.recall,
                f_score: self.report.f_score,
            },
        )])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

impl StageTiming {
    fn new(stage: &str, start: Instant) -> Self {
        Self {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunMeta {
    version: String,
    config_digest: String,
    stages: Vec<StageTiming>,
}
