//! Morse graphs and regions of attraction for learned latent dynamics.
//!
//! Given labelled latent trajectories and a latent dynamics map on the
//! cube `[-1, 1]^d`, the crate
//!
//! 1. discretizes the cube into a uniform grid and keeps the cells that
//!    hold data (plus their neighbours),
//! 2. builds an outer approximation `F` of the r-step dynamics by pushing
//!    cell corners through the map and inflating each image by a
//!    Lipschitz-derived radius,
//! 3. condenses `F` into a Morse graph whose leaves are attractors,
//! 4. assigns every cell to the attractor it exclusively reaches, and
//! 5. labels attractors from final states and scores initial-state
//!    outcome prediction.

pub mod config;
pub mod digraph;
pub mod dynamics;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod morse;
pub mod pipeline;
pub mod scc;
pub mod synth;
pub mod transition;

pub use config::{AnalysisConfig, DynamicsSource};
pub use digraph::Csr;
pub use dynamics::{
    delta_radius, estimate_lipschitz, Activation, AnalyticSystem, DynamicsMap, DynamicsNet, Layer,
    RolloutSpec,
};
pub use evaluation::{
    classify_initial_states, endpoint_sets, label_attractors, ClassificationReport, Confusion,
    EndpointSets, Scores, Split, Trajectory, TrajectoryDataset,
};
pub use geometry::{clamp_to_domain, CellBox, CellIndex, LatentGrid, LatentPoint};
pub use morse::{
    build_morse_graph, recurrent_components, regions_of_attraction, MorseGraph, MorseNode,
    OutcomeLabel, RoaAssignment, RoaEntry,
};
pub use pipeline::{Analysis, PipelineError};
pub use scc::{strongly_connected_components, Components};
pub use synth::synth_dataset;
pub use transition::{
    build_transition_graph, cell_image, graph_stats, valid_cells, BuildOptions, GraphStats,
    TransitionGraph, ValidCellSet,
};
