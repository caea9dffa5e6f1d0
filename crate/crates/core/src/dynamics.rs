//! Latent dynamics: feed-forward networks loaded from weights, built-in
//! analytic maps, r-step rollouts and an empirical Lipschitz estimator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{clamp_slice, GeometryError, LatentGrid, LatentPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("dimension mismatch: map expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("layer {layer}: {reason}")]
    BadLayer { layer: usize, reason: String },
    #[error("network has no layers")]
    NoLayers,
    #[error("final layer activation must be tanh or identity, found {0}")]
    BadHead(Activation),
    #[error("non-finite value produced at layer {layer}")]
    NonFinite { layer: usize },
    #[error("rollout steps must be at least 1")]
    ZeroSteps,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

/// One dense layer, `y = act(W x + b)` with `W` stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    /// Writes the layer output to `out`. Returns false when a
    /// pre-activation overflowed, which a saturating tanh would hide.
    fn apply_into(&self, x: &[f64], out: &mut Vec<f64>) -> bool {
        out.clear();
        let mut finite = true;
        for (row, b) in self.weights.chunks_exact(self.cols).zip(&self.bias) {
            let z = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b;
            finite &= z.is_finite();
            out.push(self.activation.apply(z));
        }
        finite
    }
}

/// Feed-forward latent dynamics network `Z -> Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsNet {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl DynamicsNet {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self, DynamicsError> {
        if input_dim == 0 {
            return Err(DynamicsError::InvalidArgument(
                "input_dim must be positive".into(),
            ));
        }
        let last = layers.last().ok_or(DynamicsError::NoLayers)?;
        let mut expected_cols = input_dim;
        for (i, l) in layers.iter().enumerate() {
            let bad = |reason: String| DynamicsError::BadLayer { layer: i, reason };
            if l.cols != expected_cols {
                return Err(bad(format!(
                    "cols = {} but expected {}",
                    l.cols, expected_cols
                )));
            }
            if l.rows == 0 {
                return Err(bad("rows must be positive".into()));
            }
            if l.weights.len() != l.rows * l.cols {
                return Err(bad(format!(
                    "weights has {} entries, expected rows*cols = {}",
                    l.weights.len(),
                    l.rows * l.cols
                )));
            }
            if l.bias.len() != l.rows {
                return Err(bad(format!(
                    "bias has {} entries, expected {}",
                    l.bias.len(),
                    l.rows
                )));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(bad("non-finite weight or bias".into()));
            }
            expected_cols = l.rows;
        }
        if last.rows != input_dim {
            return Err(DynamicsError::BadLayer {
                layer: layers.len() - 1,
                reason: format!("final rows = {} but input_dim = {}", last.rows, input_dim),
            });
        }
        if last.activation == Activation::Relu {
            return Err(DynamicsError::BadHead(last.activation));
        }
        Ok(Self { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    fn step_into(&self, x: &mut Vec<f64>, scratch: &mut Vec<f64>) -> Result<(), DynamicsError> {
        for (i, layer) in self.layers.iter().enumerate() {
            let finite = layer.apply_into(x, scratch);
            std::mem::swap(x, scratch);
            if !finite {
                return Err(DynamicsError::NonFinite { layer: i });
            }
        }
        // identity heads are clamped; tanh heads are already inside the cube
        clamp_slice(x)?;
        Ok(())
    }
}

/// Built-in maps with known attractors and Lipschitz constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "snake_case")]
pub enum AnalyticSystem {
    /// `z -> factor * z`; single attractor at the origin.
    Contraction {
        dim: usize,
        #[serde(default = "half")]
        factor: f64,
    },
    /// `z -> z + gain * z * (1 - z^2)`; attractors at -1 and +1.
    #[serde(rename = "bistable_1d")]
    Bistable1d {
        #[serde(default = "default_gain")]
        gain: f64,
    },
    /// `x -> s + expansion * (x - s)` clamped to the cube, `y -> contraction * y`.
    /// Attractors at (-1, 0) and (1, 0); the separatrix is the line `x = s`.
    #[serde(rename = "bistable_2d")]
    Bistable2d {
        #[serde(default = "default_separatrix")]
        separatrix: f64,
        #[serde(default = "default_expansion")]
        expansion: f64,
        #[serde(default = "half")]
        contraction: f64,
    },
}

fn half() -> f64 {
    0.5
}
fn default_gain() -> f64 {
    0.3
}
fn default_separatrix() -> f64 {
    -0.34
}
fn default_expansion() -> f64 {
    1.15
}

impl AnalyticSystem {
    pub fn contraction(dim: usize) -> Self {
        AnalyticSystem::Contraction {
            dim,
            factor: half(),
        }
    }

    pub fn bistable_1d() -> Self {
        AnalyticSystem::Bistable1d {
            gain: default_gain(),
        }
    }

    pub fn bistable_2d() -> Self {
        AnalyticSystem::Bistable2d {
            separatrix: default_separatrix(),
            expansion: default_expansion(),
            contraction: half(),
        }
    }

    /// Default-parameter system by name.
    pub fn by_name(name: &str, dim: Option<usize>) -> Option<Self> {
        match name {
            "contraction" => Some(Self::contraction(dim.unwrap_or(2))),
            "bistable_1d" => Some(Self::bistable_1d()),
            "bistable_2d" => Some(Self::bistable_2d()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AnalyticSystem::Contraction { .. } => "contraction",
            AnalyticSystem::Bistable1d { .. } => "bistable_1d",
            AnalyticSystem::Bistable2d { .. } => "bistable_2d",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            AnalyticSystem::Contraction { dim, .. } => *dim,
            AnalyticSystem::Bistable1d { .. } => 1,
            AnalyticSystem::Bistable2d { .. } => 2,
        }
    }

    /// Global Lipschitz constant of one step on the cube (Euclidean norm).
    pub fn lipschitz_per_step(&self) -> f64 {
        match *self {
            AnalyticSystem::Contraction { factor, .. } => factor.abs(),
            // derivative 1 + gain (1 - 3z^2) ranges over [1 - 2 gain, 1 + gain]
            AnalyticSystem::Bistable1d { gain } => (1.0 + gain).abs().max((1.0 - 2.0 * gain).abs()),
            AnalyticSystem::Bistable2d {
                expansion,
                contraction,
                ..
            } => expansion.abs().max(contraction.abs()),
        }
    }

    /// Lipschitz bound of the r-step composition.
    pub fn lipschitz_bound(&self, steps: usize) -> f64 {
        self.lipschitz_per_step().powi(steps as i32)
    }

    /// Attractors, with the designated success attractor first.
    pub fn attractors(&self) -> Vec<LatentPoint> {
        match self {
            AnalyticSystem::Contraction { dim, .. } => vec![LatentPoint(vec![0.0; *dim])],
            AnalyticSystem::Bistable1d { .. } => {
                vec![LatentPoint(vec![1.0]), LatentPoint(vec![-1.0])]
            }
            AnalyticSystem::Bistable2d { .. } => {
                vec![LatentPoint(vec![1.0, 0.0]), LatentPoint(vec![-1.0, 0.0])]
            }
        }
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        let ok = match *self {
            AnalyticSystem::Contraction { dim, factor } => dim > 0 && factor.is_finite(),
            AnalyticSystem::Bistable1d { gain } => gain.is_finite() && gain >= 0.0,
            AnalyticSystem::Bistable2d {
                separatrix,
                expansion,
                contraction,
            } => {
                separatrix.abs() < 1.0
                    && expansion.is_finite()
                    && expansion > 1.0
                    && contraction.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(DynamicsError::InvalidArgument(format!(
                "bad parameters for {}",
                self.name()
            )))
        }
    }

    fn step_in_place(&self, x: &mut [f64]) -> Result<(), DynamicsError> {
        match *self {
            AnalyticSystem::Contraction { factor, .. } => {
                for v in x.iter_mut() {
                    *v *= factor;
                }
            }
            AnalyticSystem::Bistable1d { gain } => {
                let z = x[0];
                x[0] = z + gain * z * (1.0 - z * z);
            }
            AnalyticSystem::Bistable2d {
                separatrix,
                expansion,
                contraction,
            } => {
                x[0] = separatrix + expansion * (x[0] - separatrix);
                x[1] *= contraction;
            }
        }
        clamp_slice(x)?;
        Ok(())
    }
}

/// The map `Z -> Z` used to build transition graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsMap {
    Network(DynamicsNet),
    Analytic(AnalyticSystem),
}

/// Number of recursive rollout steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RolloutSpec(usize);

impl RolloutSpec {
    pub fn new(steps: usize) -> Result<Self, DynamicsError> {
        if steps == 0 {
            return Err(DynamicsError::ZeroSteps);
        }
        Ok(Self(steps))
    }

    pub fn steps(self) -> usize {
        self.0
    }
}

impl Default for RolloutSpec {
    fn default() -> Self {
        Self(12)
    }
}

/// Reusable buffers for allocation-free rollouts.
#[derive(Debug, Default)]
pub struct Scratch {
    state: Vec<f64>,
    tmp: Vec<f64>,
}

impl DynamicsMap {
    pub fn analytic(system: AnalyticSystem) -> Result<Self, DynamicsError> {
        system.validate()?;
        Ok(DynamicsMap::Analytic(system))
    }

    pub fn dim(&self) -> usize {
        match self {
            DynamicsMap::Network(n) => n.input_dim(),
            DynamicsMap::Analytic(a) => a.dim(),
        }
    }

    fn check_input(&self, p: &[f64]) -> Result<(), DynamicsError> {
        if p.len() != self.dim() {
            return Err(DynamicsError::DimensionMismatch {
                expected: self.dim(),
                got: p.len(),
            });
        }
        if let Some(axis) = p.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite { axis }.into());
        }
        Ok(())
    }

    #[inline]
    fn step(&self, scratch: &mut Scratch) -> Result<(), DynamicsError> {
        match self {
            DynamicsMap::Network(n) => n.step_into(&mut scratch.state, &mut scratch.tmp),
            DynamicsMap::Analytic(a) => a.step_in_place(&mut scratch.state),
        }
    }

    pub fn forward(&self, p: &LatentPoint) -> Result<LatentPoint, DynamicsError> {
        self.rollout(p, RolloutSpec(1))
    }

    pub fn rollout(
        &self,
        p: &LatentPoint,
        spec: RolloutSpec,
    ) -> Result<LatentPoint, DynamicsError> {
        let mut scratch = Scratch::default();
        let mut out = vec![0.0; self.dim()];
        self.rollout_into(p.coords(), spec.steps(), &mut out, &mut scratch)?;
        Ok(LatentPoint(out))
    }

    /// `steps`-fold composition written into `out`.
    pub fn rollout_into(
        &self,
        p: &[f64],
        steps: usize,
        out: &mut [f64],
        scratch: &mut Scratch,
    ) -> Result<(), DynamicsError> {
        self.check_input(p)?;
        scratch.state.clear();
        scratch.state.extend_from_slice(p);
        for _ in 0..steps {
            self.step(scratch)?;
        }
        out.copy_from_slice(&scratch.state);
        Ok(())
    }

    /// Every state of a `steps`-long trajectory starting at `p`, `p` included.
    pub fn trajectory(
        &self,
        p: &LatentPoint,
        steps: usize,
    ) -> Result<Vec<LatentPoint>, DynamicsError> {
        self.check_input(p.coords())?;
        let mut scratch = Scratch::default();
        scratch.state.extend_from_slice(p.coords());
        let mut out = Vec::with_capacity(steps + 1);
        out.push(p.clone());
        for _ in 0..steps {
            self.step(&mut scratch)?;
            out.push(LatentPoint(scratch.state.clone()));
        }
        Ok(out)
    }
}

const LIPSCHITZ_CHUNK: usize = 1024;

/// Empirical Lipschitz constant of the r-step map: the largest ratio
/// `|f(x) - f(y)| / |x - y|` over random close pairs in the cube.
/// The sample budget is split into fixed-size chunks, each with its own
/// RNG stream, so the result depends only on `seed`.
pub fn estimate_lipschitz(
    map: &DynamicsMap,
    spec: RolloutSpec,
    domain_samples: usize,
    pair_scale: f64,
    seed: u64,
) -> Result<f64, DynamicsError> {
    if domain_samples < 2 {
        return Err(DynamicsError::InvalidArgument(
            "domain_samples must be at least 2".into(),
        ));
    }
    if !(pair_scale > 0.0 && pair_scale.is_finite()) {
        return Err(DynamicsError::InvalidArgument(
            "pair_scale must be positive".into(),
        ));
    }
    let d = map.dim();
    let chunks = domain_samples.div_ceil(LIPSCHITZ_CHUNK);
    let per_chunk: Vec<Result<f64, DynamicsError>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let n = LIPSCHITZ_CHUNK.min(domain_samples - chunk * LIPSCHITZ_CHUNK);
            let mut scratch = Scratch::default();
            let (mut x, mut y) = (vec![0.0; d], vec![0.0; d]);
            let (mut fx, mut fy) = (vec![0.0; d], vec![0.0; d]);
            let mut best: f64 = 0.0;
            for _ in 0..n {
                let gap = loop {
                    for v in x.iter_mut() {
                        *v = rng.gen_range(-1.0..=1.0);
                    }
                    let dir = random_direction(&mut rng, d);
                    let mag = pair_scale * (1.0 - rng.gen::<f64>());
                    for ((yv, xv), u) in y.iter_mut().zip(&x).zip(&dir) {
                        *yv = (xv + mag * u).clamp(-1.0, 1.0);
                    }
                    let gap = dist(&x, &y);
                    if gap > 0.0 {
                        break gap;
                    }
                };
                map.rollout_into(&x, spec.steps(), &mut fx, &mut scratch)?;
                map.rollout_into(&y, spec.steps(), &mut fy, &mut scratch)?;
                best = best.max(dist(&fx, &fy) / gap);
            }
            Ok(best)
        })
        .collect();
    per_chunk
        .into_iter()
        .try_fold(0.0f64, |acc, r| r.map(|v| acc.max(v)))
}

fn random_direction(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 && n <= 1.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Radius of the uncertainty ball drawn around each propagated corner.
///
/// Every point of a cell lies within one half-diagonal of its nearest
/// corner, so its r-step image lies within `L * half_diagonal` of that
/// corner's image.
pub fn delta_radius(lipschitz: f64, grid: &LatentGrid, safety_factor: f64) -> f64 {
    safety_factor * lipschitz * grid.cell_half_diagonal()
}
