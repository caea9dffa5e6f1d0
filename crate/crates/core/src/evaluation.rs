//! Outcome prediction from regions of attraction: attractor labelling by
//! majority vote of final latent states and scoring of initial states.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{clamp_to_domain, GeometryError, LatentGrid, LatentPoint};
use crate::morse::{MorseGraph, OutcomeLabel, RoaAssignment, RoaEntry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("dataset has no trajectories")]
    Empty,
    #[error("trajectory {id}: {reason}")]
    BadTrajectory { id: String, reason: String },
    #[error("dataset dimension must be positive")]
    ZeroDim,
    #[error("morse graph has no attractors")]
    NoAttractors,
    #[error("no success region: none of the {0} final success states falls in an attractor's exclusive region")]
    NoSuccessRegion(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

/// One labelled trajectory; `label` is 1 for success, 0 for failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub label: u8,
    pub points: Vec<LatentPoint>,
}

impl Trajectory {
    pub fn is_success(&self) -> bool {
        self.label == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    pub dim: usize,
    pub split: Split,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryDataset {
    pub fn new(
        dim: usize,
        split: Split,
        trajectories: Vec<Trajectory>,
    ) -> Result<Self, EvaluationError> {
        let ds = Self {
            dim,
            split,
            trajectories,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), EvaluationError> {
        if self.dim == 0 {
            return Err(EvaluationError::ZeroDim);
        }
        if self.trajectories.is_empty() {
            return Err(EvaluationError::Empty);
        }
        for t in &self.trajectories {
            let bad = |reason: String| EvaluationError::BadTrajectory {
                id: t.id.clone(),
                reason,
            };
            if t.label > 1 {
                return Err(bad(format!("label {} is not 0 or 1", t.label)));
            }
            if t.points.len() < 2 {
                return Err(bad(format!(
                    "has {} points, need at least 2",
                    t.points.len()
                )));
            }
            for (i, p) in t.points.iter().enumerate() {
                if p.dim() != self.dim {
                    return Err(bad(format!(
                        "point {i} has dimension {}, expected {}",
                        p.dim(),
                        self.dim
                    )));
                }
                p.validate().map_err(|e| bad(format!("point {i}: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn all_points(&self) -> impl Iterator<Item = &LatentPoint> {
        self.trajectories.iter().flat_map(|t| t.points.iter())
    }
}

/// Initial (`b_*`) and final (`l_*`) latent states split by outcome.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EndpointSets {
    pub b_success: Vec<LatentPoint>,
    pub b_failure: Vec<LatentPoint>,
    pub l_success: Vec<LatentPoint>,
    pub l_failure: Vec<LatentPoint>,
}

pub fn endpoint_sets(dataset: &TrajectoryDataset) -> Result<EndpointSets, EvaluationError> {
    if dataset.trajectories.is_empty() {
        return Err(EvaluationError::Empty);
    }
    let mut out = EndpointSets::default();
    for t in &dataset.trajectories {
        let (first, last) = match (t.points.first(), t.points.last()) {
            (Some(f), Some(l)) => (f.clone(), l.clone()),
            _ => {
                return Err(EvaluationError::BadTrajectory {
                    id: t.id.clone(),
                    reason: "no points".into(),
                })
            }
        };
        if t.is_success() {
            out.b_success.push(first);
            out.l_success.push(last);
        } else {
            out.b_failure.push(first);
            out.l_failure.push(last);
        }
    }
    Ok(out)
}

/// Where a latent point lands in the ROA.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Roa(RoaEntry),
    /// The point's cell is not a valid cell.
    OutsideDomain,
}

fn place(
    p: &LatentPoint,
    roa: &RoaAssignment,
    grid: &LatentGrid,
) -> Result<(Placement, bool), EvaluationError> {
    let clamped = clamp_to_domain(p)?;
    let was_clamped = clamped != *p;
    let flat = grid.flat_id(&grid.point_to_cell(&clamped)?)?;
    let placement = match roa.lookup(flat) {
        Some(e) => Placement::Roa(e),
        None => Placement::OutsideDomain,
    };
    Ok((placement, was_clamped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Votes {
    pub success: usize,
    pub failure: usize,
}

/// Labels every attractor by majority vote of the final states in its
/// exclusive region. Ties and attractors without votes become failure.
pub fn label_attractors(
    morse: &MorseGraph,
    roa: &RoaAssignment,
    endpoints: &EndpointSets,
    grid: &LatentGrid,
) -> Result<(MorseGraph, Vec<Votes>), EvaluationError> {
    if morse.attractor_count() == 0 {
        return Err(EvaluationError::NoAttractors);
    }
    let mut votes = vec![Votes::default(); morse.nodes.len()];
    let mut assigned_success = 0;
    for (points, success) in [(&endpoints.l_success, true), (&endpoints.l_failure, false)] {
        for p in points {
            if let (Placement::Roa(RoaEntry::Attractor(a)), _) = place(p, roa, grid)? {
                if success {
                    votes[a].success += 1;
                    assigned_success += 1;
                } else {
                    votes[a].failure += 1;
                }
            }
        }
    }
    if !endpoints.l_success.is_empty() && assigned_success == 0 {
        return Err(EvaluationError::NoSuccessRegion(endpoints.l_success.len()));
    }
    let mut labeled = morse.clone();
    for node in labeled.nodes.iter_mut() {
        node.label = if !node.is_attractor {
            OutcomeLabel::Unlabeled
        } else if votes[node.id].success > votes[node.id].failure {
            OutcomeLabel::Success
        } else {
            OutcomeLabel::Failure
        };
    }
    Ok((labeled, votes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Success is the positive class; empty denominators give 0.
    pub fn scores(&self) -> Scores {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f_score = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Scores {
            precision,
            recall,
            f_score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub truth: OutcomeLabel,
    pub predicted: OutcomeLabel,
    /// `attractor:<id>`, `ambiguous`, `unreachable` or `outside`.
    pub region: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub predictions: Vec<Prediction>,
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub ambiguous_initial: usize,
    pub unreachable_initial: usize,
    pub outside_initial: usize,
    pub clamped_initial: usize,
}

/// Predicts each initial state's outcome from the label of the attractor
/// whose exclusive region holds it. Ambiguous, unreachable and
/// out-of-domain initial states are predicted as failure.
pub fn classify_initial_states(
    endpoints: &EndpointSets,
    roa: &RoaAssignment,
    labeled: &MorseGraph,
    grid: &LatentGrid,
) -> Result<ClassificationReport, EvaluationError> {
    let mut predictions = Vec::new();
    let mut confusion = Confusion::default();
    let (mut ambiguous, mut unreachable, mut outside, mut clamped) = (0, 0, 0, 0);
    for (points, truth) in [
        (&endpoints.b_success, OutcomeLabel::Success),
        (&endpoints.b_failure, OutcomeLabel::Failure),
    ] {
        for p in points {
            let (placement, was_clamped) = place(p, roa, grid)?;
            clamped += was_clamped as usize;
            let (predicted, region) = match placement {
                Placement::Roa(RoaEntry::Attractor(a)) => {
                    let label = match labeled.nodes[a].label {
                        OutcomeLabel::Success => OutcomeLabel::Success,
                        _ => OutcomeLabel::Failure,
                    };
                    (label, format!("attractor:{a}"))
                }
                Placement::Roa(RoaEntry::Ambiguous) => {
                    ambiguous += 1;
                    (OutcomeLabel::Failure, "ambiguous".to_string())
                }
                Placement::Roa(RoaEntry::Unreachable) => {
                    unreachable += 1;
                    (OutcomeLabel::Failure, "unreachable".to_string())
                }
                Placement::OutsideDomain => {
                    outside += 1;
                    (OutcomeLabel::Failure, "outside".to_string())
                }
            };
            match (truth, predicted) {
                (OutcomeLabel::Success, OutcomeLabel::Success) => confusion.tp += 1,
                (OutcomeLabel::Success, _) => confusion.fn_ += 1,
                (_, OutcomeLabel::Success) => confusion.fp += 1,
                _ => confusion.tn += 1,
            }
            predictions.push(Prediction {
                truth,
                predicted,
                region,
            });
        }
    }
    let s = confusion.scores();
    Ok(ClassificationReport {
        predictions,
        confusion,
        precision: s.precision,
        recall: s.recall,
        f_score: s.f_score,
        ambiguous_initial: ambiguous,
        unreachable_initial: unreachable,
        outside_initial: outside,
        clamped_initial: clamped,
    })
}

/// Fixed-width summary row: task, latent dimension, precision, recall, F.
pub fn summary_table(rows: &[(String, usize, Scores)]) -> String {
    let mut out = format!(
        "{:<24} {:>10} {:>10} {:>10} {:>10}\n",
        "Task", "Latent Dim", "Precision", "Recall", "F-score"
    );
    for (task, dim, s) in rows {
        out.push_str(&format!(
            "{:<24} {:>10} {:>10.4} {:>10.4} {:>10.4}\n",
            task, dim, s.precision, s.recall, s.f_score
        ));
    }
    out
}
