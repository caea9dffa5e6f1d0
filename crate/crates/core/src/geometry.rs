//! Uniform cubical decomposition of the latent cube `[-1, 1]^d`.
//!
//! Cells are half-open `[lo, hi)` per axis, except that the last cell on
//! every axis is closed at `+1`, so every point of the cube belongs to
//! exactly one cell. Flat cell ids are row-major over the per-axis index
//! (axis 0 is the slowest-varying digit).

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DOMAIN_LO: f64 = -1.0;
pub const DOMAIN_HI: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("grid must have at least one axis")]
    EmptyGrid,
    #[error("axis {axis} has zero subdivisions")]
    ZeroSubdivisions { axis: usize },
    #[error("grid has too many cells to index")]
    TooManyCells,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cell index {idx:?} is outside the grid {subdivisions:?}")]
    InvalidCell {
        idx: Vec<usize>,
        subdivisions: Vec<usize>,
    },
    #[error("flat cell id {0} is outside the grid")]
    InvalidFlatId(usize),
    #[error("coordinate {axis} is not finite")]
    NonFinite { axis: usize },
    #[error("coordinate {axis} = {value} lies outside [-1, 1]")]
    OutOfDomain { axis: usize, value: f64 },
}

/// A point of the latent cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentPoint(pub Vec<f64>);

impl LatentPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        Self(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    /// Checks that every coordinate is finite and inside the cube.
    pub fn validate(&self) -> Result<(), GeometryError> {
        for (axis, &value) in self.0.iter().enumerate() {
            if !value.is_finite() {
                return Err(GeometryError::NonFinite { axis });
            }
            if !(DOMAIN_LO..=DOMAIN_HI).contains(&value) {
                return Err(GeometryError::OutOfDomain { axis, value });
            }
        }
        Ok(())
    }
}

impl From<Vec<f64>> for LatentPoint {
    fn from(coords: Vec<f64>) -> Self {
        Self(coords)
    }
}

/// Clamps every coordinate into `[-1, 1]`.
pub fn clamp_to_domain(p: &LatentPoint) -> Result<LatentPoint, GeometryError> {
    let mut coords = p.0.clone();
    clamp_slice(&mut coords)?;
    Ok(LatentPoint(coords))
}

pub(crate) fn clamp_slice(coords: &mut [f64]) -> Result<(), GeometryError> {
    for (axis, c) in coords.iter_mut().enumerate() {
        if !c.is_finite() {
            return Err(GeometryError::NonFinite { axis });
        }
        *c = c.clamp(DOMAIN_LO, DOMAIN_HI);
    }
    Ok(())
}

/// Per-axis cell index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellIndex(pub Vec<usize>);

impl CellIndex {
    pub fn new(idx: Vec<usize>) -> Self {
        Self(idx)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// Axis-aligned box of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellBox {
    pub lo: LatentPoint,
    pub hi: LatentPoint,
}

impl CellBox {
    pub fn half_diagonal(&self) -> f64 {
        let sq: f64 = self
            .lo
            .0
            .iter()
            .zip(&self.hi.0)
            .map(|(l, h)| (h - l) * (h - l))
            .sum();
        0.5 * sq.sqrt()
    }

    /// Half-open membership, closed on the `+1` face of the cube.
    pub fn contains(&self, p: &LatentPoint) -> bool {
        p.0.iter()
            .zip(self.lo.0.iter().zip(&self.hi.0))
            .all(|(&x, (&l, &h))| x >= l && (x < h || (h == DOMAIN_HI && x == DOMAIN_HI)))
    }

    pub fn center(&self) -> LatentPoint {
        LatentPoint(
            self.lo
                .0
                .iter()
                .zip(&self.hi.0)
                .map(|(l, h)| 0.5 * (l + h))
                .collect(),
        )
    }
}

/// Uniform grid over `[-1, 1]^d` with an independent cell count per axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentGrid {
    subdivisions: Vec<usize>,
    #[serde(skip)]
    strides: Vec<usize>,
    #[serde(skip)]
    total: usize,
}

impl LatentGrid {
    pub fn new(subdivisions: Vec<usize>) -> Result<Self, GeometryError> {
        if subdivisions.is_empty() {
            return Err(GeometryError::EmptyGrid);
        }
        if let Some(axis) = subdivisions.iter().position(|&n| n == 0) {
            return Err(GeometryError::ZeroSubdivisions { axis });
        }
        let mut strides = vec![0; subdivisions.len()];
        let mut total: usize = 1;
        for axis in (0..subdivisions.len()).rev() {
            strides[axis] = total;
            total = total
                .checked_mul(subdivisions[axis])
                .ok_or(GeometryError::TooManyCells)?;
        }
        Ok(Self {
            subdivisions,
            strides,
            total,
        })
    }

    pub fn uniform(dim: usize, per_axis: usize) -> Result<Self, GeometryError> {
        Self::new(vec![per_axis; dim])
    }

    pub fn dim(&self) -> usize {
        self.subdivisions.len()
    }

    pub fn subdivisions(&self) -> &[usize] {
        &self.subdivisions
    }

    pub fn total_cells(&self) -> usize {
        self.total
    }

    pub fn width(&self, axis: usize) -> f64 {
        (DOMAIN_HI - DOMAIN_LO) / self.subdivisions[axis] as f64
    }

    /// Half of the diagonal length of one cell.
    pub fn cell_half_diagonal(&self) -> f64 {
        let sq: f64 = (0..self.dim()).map(|a| self.width(a).powi(2)).sum();
        0.5 * sq.sqrt()
    }

    /// Lower bound of slab `k` on `axis`; `k == n` yields the closed top face.
    #[inline]
    pub(crate) fn boundary(&self, axis: usize, k: usize) -> f64 {
        let n = self.subdivisions[axis];
        if k >= n {
            DOMAIN_HI
        } else {
            DOMAIN_LO + k as f64 * self.width(axis)
        }
    }

    #[inline]
    pub(crate) fn axis_slab(&self, axis: usize, x: f64) -> usize {
        let n = self.subdivisions[axis];
        let raw = ((x - DOMAIN_LO) / self.width(axis)).floor();
        let mut k = if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(n - 1)
        };
        // floor() and boundary() can disagree by one ulp near a face.
        if k > 0 && x < self.boundary(axis, k) {
            k -= 1;
        } else if k + 1 < n && x >= self.boundary(axis, k + 1) {
            k += 1;
        }
        k
    }

    fn check_dim(&self, got: usize) -> Result<(), GeometryError> {
        if got != self.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    pub fn check_cell(&self, c: &CellIndex) -> Result<(), GeometryError> {
        self.check_dim(c.0.len())?;
        if c.0.iter().zip(&self.subdivisions).any(|(&i, &n)| i >= n) {
            return Err(GeometryError::InvalidCell {
                idx: c.0.clone(),
                subdivisions: self.subdivisions.clone(),
            });
        }
        Ok(())
    }

    pub fn flat_id(&self, c: &CellIndex) -> Result<usize, GeometryError> {
        self.check_cell(c)?;
        Ok(self.flat_id_unchecked(&c.0))
    }

    #[inline]
    pub(crate) fn flat_id_unchecked(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn cell_index(&self, flat: usize) -> Result<CellIndex, GeometryError> {
        if flat >= self.total {
            return Err(GeometryError::InvalidFlatId(flat));
        }
        let mut idx = vec![0; self.dim()];
        self.unflatten_into(flat, &mut idx);
        Ok(CellIndex(idx))
    }

    #[inline]
    pub(crate) fn unflatten_into(&self, mut flat: usize, idx: &mut [usize]) {
        for (axis, slot) in idx.iter_mut().enumerate() {
            let s = self.strides[axis];
            *slot = flat / s;
            flat %= s;
        }
    }

    pub fn point_to_cell(&self, p: &LatentPoint) -> Result<CellIndex, GeometryError> {
        self.check_dim(p.dim())?;
        p.validate()?;
        Ok(CellIndex(
            p.0.iter()
                .enumerate()
                .map(|(axis, &x)| self.axis_slab(axis, x))
                .collect(),
        ))
    }

    pub fn cell_box(&self, c: &CellIndex) -> Result<CellBox, GeometryError> {
        self.check_cell(c)?;
        let lo =
            c.0.iter()
                .enumerate()
                .map(|(a, &k)| self.boundary(a, k))
                .collect();
        let hi =
            c.0.iter()
                .enumerate()
                .map(|(a, &k)| self.boundary(a, k + 1))
                .collect();
        Ok(CellBox {
            lo: LatentPoint(lo),
            hi: LatentPoint(hi),
        })
    }

    pub fn cell_center(&self, c: &CellIndex) -> Result<LatentPoint, GeometryError> {
        Ok(self.cell_box(c)?.center())
    }

    /// The `2^d` vertices of a cell, ordered by the bit pattern of the
    /// corner (bit `a` set selects the upper bound on axis `a`).
    pub fn cell_corners(&self, c: &CellIndex) -> Result<Vec<LatentPoint>, GeometryError> {
        self.check_cell(c)?;
        let d = self.dim();
        let mut out = Vec::with_capacity(1 << d);
        let mut buf = vec![0.0; d];
        for mask in 0..(1usize << d) {
            self.corner_into(&c.0, mask, &mut buf);
            out.push(LatentPoint(buf.clone()));
        }
        Ok(out)
    }

    #[inline]
    pub(crate) fn corner_into(&self, idx: &[usize], mask: usize, out: &mut [f64]) {
        for (axis, slot) in out.iter_mut().enumerate() {
            let k = idx[axis] + ((mask >> axis) & 1);
            *slot = self.boundary(axis, k);
        }
    }

    /// Moore neighbourhood of a cell, clipped at the boundary, in flat-id order.
    pub fn neighbors(&self, c: &CellIndex) -> Result<Vec<CellIndex>, GeometryError> {
        self.check_cell(c)?;
        let mut out = Vec::new();
        self.for_each_neighbor_flat(&c.0, |flat| {
            let mut idx = vec![0; self.dim()];
            self.unflatten_into(flat, &mut idx);
            out.push(CellIndex(idx));
        });
        Ok(out)
    }

    pub(crate) fn for_each_neighbor_flat(&self, idx: &[usize], mut f: impl FnMut(usize)) {
        let ranges: Vec<(usize, usize)> = idx
            .iter()
            .zip(&self.subdivisions)
            .map(|(&i, &n)| (i.saturating_sub(1), (i + 1).min(n - 1)))
            .collect();
        let own = self.flat_id_unchecked(idx);
        self.for_each_in_box(&ranges, |flat| {
            if flat != own {
                f(flat)
            }
        });
    }

    /// Visits every cell whose per-axis index lies in the inclusive ranges,
    /// in increasing flat-id order.
    pub(crate) fn for_each_in_box(&self, ranges: &[(usize, usize)], mut f: impl FnMut(usize)) {
        let d = ranges.len();
        let mut cur: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        loop {
            f(self.flat_id_unchecked(&cur));
            let mut axis = d;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                if cur[axis] < ranges[axis].1 {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = ranges[axis].0;
            }
        }
    }

    /// Cells whose closed box is within Euclidean distance `radius` of
    /// `center`, in flat-id order.
    pub fn cells_intersecting_ball(
        &self,
        center: &LatentPoint,
        radius: f64,
    ) -> Result<Vec<CellIndex>, GeometryError> {
        self.check_dim(center.dim())?;
        let center = clamp_to_domain(center)?;
        let mut out = Vec::new();
        self.for_each_cell_in_ball(&center.0, radius.max(0.0), |flat| {
            let mut idx = vec![0; self.dim()];
            self.unflatten_into(flat, &mut idx);
            out.push(CellIndex(idx));
        });
        Ok(out)
    }

    /// Closed-ball / closed-box intersection enumeration over flat ids.
    /// `center` must already lie in the cube.
    pub(crate) fn for_each_cell_in_ball(
        &self,
        center: &[f64],
        radius: f64,
        mut f: impl FnMut(usize),
    ) {
        let d = self.dim();
        // Slab candidates per axis, widened by one so faces touching the
        // ball exactly are not lost; the exact test below prunes them.
        let ranges: Vec<(usize, usize)> = (0..d)
            .map(|a| {
                let n = self.subdivisions[a];
                let lo = self.axis_slab(a, (center[a] - radius).max(DOMAIN_LO));
                let hi = self.axis_slab(a, (center[a] + radius).min(DOMAIN_HI));
                (lo.saturating_sub(1), (hi + 1).min(n - 1))
            })
            .collect();
        // Squared per-axis gap for every candidate slab, computed once.
        let gaps: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                (ranges[a].0..=ranges[a].1)
                    .map(|k| {
                        let lo = self.boundary(a, k);
                        let hi = self.boundary(a, k + 1);
                        let x = center[a];
                        let g = if x < lo {
                            lo - x
                        } else if x > hi {
                            x - hi
                        } else {
                            0.0
                        };
                        g * g
                    })
                    .collect()
            })
            .collect();
        let r2 = radius * radius;
        let mut cur: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        loop {
            let dist2: f64 = (0..d).map(|a| gaps[a][cur[a] - ranges[a].0]).sum();
            if dist2 <= r2 {
                f(self.flat_id_unchecked(&cur));
            }
            let mut axis = d;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                if cur[axis] < ranges[axis].1 {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = ranges[axis].0;
            }
        }
    }
}
