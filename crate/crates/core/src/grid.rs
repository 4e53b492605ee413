//! Uniform periodic grids on the flat torus and the finite-difference
//! operators of the monotone scheme.
//!
//! Nodes in 2D are stored row-major, node `(i, j)` at index `i + I * j`.
//! A [`StaggeredPolicy`] holds `2 * dim` reals per node laid out as
//! `[left_0, right_0, left_1, right_1]`, one (left, right) pair per axis.

use std::ops::{Deref, DerefMut};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("unsupported dimension {0} (expected 1 or 2)")]
    Dimension(usize),
    #[error("grid needs at least 3 nodes per dimension, got {0}")]
    TooFewNodes(usize),
    #[error("time grid needs at least one step")]
    NoSteps,
    #[error("horizon must be positive and finite, got {0}")]
    Horizon(f64),
    #[error("field of length {found} does not match grid of {expected} nodes")]
    Shape { expected: usize, found: usize },
    #[error("policy is not EO-split at node {node}, component {component}: {value}")]
    NotSplit {
        node: usize,
        component: usize,
        value: f64,
    },
}

/// Maps any integer index onto `[0, n)` periodically.
#[inline]
pub fn wrap_index(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Uniform lattice on the unit torus in one or two dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceGrid {
    dim: usize,
    nodes_per_dim: usize,
    spacing: f64,
}

impl SpaceGrid {
    pub fn new(dim: usize, nodes_per_dim: usize) -> Result<Self, GridError> {
        if dim != 1 && dim != 2 {
            return Err(GridError::Dimension(dim));
        }
        if nodes_per_dim < 3 {
            return Err(GridError::TooFewNodes(nodes_per_dim));
        }
        Ok(Self {
            dim,
            nodes_per_dim,
            spacing: 1.0 / nodes_per_dim as f64,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_dim(&self) -> usize {
        self.nodes_per_dim
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Total node count `I^dim`.
    pub fn len(&self) -> usize {
        self.nodes_per_dim.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume of one cell, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Lattice multi-index of a node.
    #[inline]
    pub fn multi_index(&self, node: usize) -> [usize; 2] {
        let n = self.nodes_per_dim;
        if self.dim == 1 {
            [node, 0]
        } else {
            [node % n, node / n]
        }
    }

    /// Physical coordinates `x = i h` of a node (second entry unused in 1D).
    pub fn coords(&self, node: usize) -> [f64; 2] {
        let [i, j] = self.multi_index(node);
        [i as f64 * self.spacing, j as f64 * self.spacing]
    }

    /// Neighbor of `node` along `axis`, shifted by `offset` with periodic wrap.
    #[inline]
    pub fn neighbor(&self, node: usize, axis: usize, offset: isize) -> usize {
        let n = self.nodes_per_dim;
        let mi = self.multi_index(node);
        let shifted = wrap_index(mi[axis] as isize + offset, n);
        match axis {
            0 => node - mi[0] + shifted,
            _ => mi[0] + n * shifted,
        }
    }

    /// Samples a function of the coordinates at every node.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> ScalarField {
        (0..self.len())
            .map(|k| {
                let x = self.coords(k);
                f(&x[..self.dim])
            })
            .collect()
    }

    pub fn check(&self, len: usize) -> Result<(), GridError> {
        if len == self.len() {
            Ok(())
        } else {
            Err(GridError::Shape {
                expected: self.len(),
                found: len,
            })
        }
    }
}

/// Uniform time lattice `t_n = n dt`, `n = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    steps: usize,
    horizon: f64,
    dt: f64,
}

impl TimeGrid {
    pub fn new(steps: usize, horizon: f64) -> Result<Self, GridError> {
        if steps == 0 {
            return Err(GridError::NoSteps);
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(GridError::Horizon(horizon));
        }
        Ok(Self {
            steps,
            horizon,
            dt: horizon / steps as f64,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }
}

/// One time slice of a grid function.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScalarField(Vec<f64>);

impl ScalarField {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn constant(len: usize, value: f64) -> Self {
        Self(vec![value; len])
    }

    pub fn zeros(len: usize) -> Self {
        Self::constant(len, 0.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for ScalarField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ScalarField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ScalarField {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl FromIterator<f64> for ScalarField {
    fn from_iter<T: IntoIterator<Item = f64>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// A grid function on every time node `n = 0..=N`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScalarTimeField {
    slices: Vec<ScalarField>,
}

impl ScalarTimeField {
    pub fn new(slices: Vec<ScalarField>) -> Self {
        Self { slices }
    }

    /// `steps + 1` copies of `value`.
    pub fn constant(nodes: usize, steps: usize, value: f64) -> Self {
        Self::new(vec![ScalarField::constant(nodes, value); steps + 1])
    }

    pub fn slices(&self) -> &[ScalarField] {
        &self.slices
    }

    pub fn slices_mut(&mut self) -> &mut [ScalarField] {
        &mut self.slices
    }

    pub fn slice(&self, n: usize) -> &ScalarField {
        &self.slices[n]
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.slices.iter().fold(0.0, |acc, s| acc.max(s.max_abs()))
    }

    pub fn min(&self) -> f64 {
        self.slices
            .iter()
            .flat_map(|s| s.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.slices.iter().all(ScalarField::is_finite)
    }
}

/// Discrete control: a (left, right) pair per node and per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct StaggeredPolicy {
    dim: usize,
    data: Vec<f64>,
}

impl StaggeredPolicy {
    pub fn zeros(grid: &SpaceGrid) -> Self {
        Self {
            dim: grid.dim(),
            data: vec![0.0; 2 * grid.dim() * grid.len()],
        }
    }

    /// Builds a policy from raw `[left_0, right_0, (left_1, right_1)]` blocks.
    pub fn from_raw(dim: usize, data: Vec<f64>) -> Result<Self, GridError> {
        if dim != 1 && dim != 2 {
            return Err(GridError::Dimension(dim));
        }
        if !data.len().is_multiple_of(2 * dim) {
            return Err(GridError::Shape {
                expected: data.len() - data.len() % (2 * dim),
                found: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.data.len() / (2 * self.dim)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    /// The `2 * dim` components of one node.
    #[inline]
    pub fn node(&self, k: usize) -> &[f64] {
        let w = 2 * self.dim;
        &self.data[k * w..(k + 1) * w]
    }

    #[inline]
    pub fn node_mut(&mut self, k: usize) -> &mut [f64] {
        let w = 2 * self.dim;
        &mut self.data[k * w..(k + 1) * w]
    }

    #[inline]
    pub fn left(&self, k: usize, axis: usize) -> f64 {
        self.data[k * 2 * self.dim + 2 * axis]
    }

    #[inline]
    pub fn right(&self, k: usize, axis: usize) -> f64 {
        self.data[k * 2 * self.dim + 2 * axis + 1]
    }

    pub fn set(&mut self, k: usize, axis: usize, left: f64, right: f64) {
        let base = k * 2 * self.dim + 2 * axis;
        self.data[base] = left;
        self.data[base + 1] = right;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn check_policy(q: &StaggeredPolicy, grid: &SpaceGrid) -> Result<(), GridError> {
    if q.dim() != grid.dim() {
        return Err(GridError::Dimension(q.dim()));
    }
    grid.check(q.len())
}

/// Centered second differences, summed over axes.
pub fn laplacian_apply(u: &[f64], grid: &SpaceGrid) -> Result<ScalarField, GridError> {
    grid.check(u.len())?;
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    Ok((0..grid.len())
        .map(|k| {
            (0..grid.dim())
                .map(|axis| {
                    let prev = u[grid.neighbor(k, axis, -1)];
                    let next = u[grid.neighbor(k, axis, 1)];
                    (prev - 2.0 * u[k] + next) * inv_h2
                })
                .sum()
        })
        .collect())
}

/// One-sided differences `(D_L U, D_R U)` per axis.
pub fn upwind_gradient(u: &[f64], grid: &SpaceGrid) -> Result<StaggeredPolicy, GridError> {
    grid.check(u.len())?;
    let inv_h = 1.0 / grid.spacing();
    let mut out = StaggeredPolicy::zeros(grid);
    for k in 0..grid.len() {
        for axis in 0..grid.dim() {
            let prev = u[grid.neighbor(k, axis, -1)];
            let next = u[grid.neighbor(k, axis, 1)];
            out.set(k, axis, (u[k] - prev) * inv_h, (next - u[k]) * inv_h);
        }
    }
    Ok(out)
}

/// Engquist-Osher splitting: positive part of left components, negative
/// part of right components.
pub fn eo_split(q: &StaggeredPolicy) -> StaggeredPolicy {
    let data = q
        .data
        .chunks_exact(2)
        .flat_map(|pair| [pair[0].max(0.0), pair[1].min(0.0)])
        .collect();
    StaggeredPolicy { dim: q.dim, data }
}

const SPLIT_SLACK: f64 = 1e-14;

/// Per-node `|Q_±|^2`, the sum of squares of all split components.
pub fn eo_norm_sq(qpm: &StaggeredPolicy) -> Result<ScalarField, GridError> {
    for (idx, pair) in qpm.data.chunks_exact(2).enumerate() {
        let node = idx / qpm.dim;
        let axis = idx % qpm.dim;
        if pair[0] < -SPLIT_SLACK {
            return Err(GridError::NotSplit {
                node,
                component: 2 * axis,
                value: pair[0],
            });
        }
        if pair[1] > SPLIT_SLACK {
            return Err(GridError::NotSplit {
                node,
                component: 2 * axis + 1,
                value: pair[1],
            });
        }
    }
    Ok((0..qpm.len())
        .map(|k| qpm.node(k).iter().map(|v| v * v).sum())
        .collect())
}

/// Conservative upwind divergence `div(M Q)` with split fluxes.
pub fn divergence(
    m: &[f64],
    qpm: &StaggeredPolicy,
    grid: &SpaceGrid,
) -> Result<ScalarField, GridError> {
    grid.check(m.len())?;
    check_policy(qpm, grid)?;
    let inv_h = 1.0 / grid.spacing();
    Ok((0..grid.len())
        .map(|k| {
            (0..grid.dim())
                .map(|axis| {
                    let next = grid.neighbor(k, axis, 1);
                    let prev = grid.neighbor(k, axis, -1);
                    let left_flux = m[next] * qpm.left(next, axis) - m[k] * qpm.left(k, axis);
                    let right_flux = m[k] * qpm.right(k, axis) - m[prev] * qpm.right(prev, axis);
                    (left_flux + right_flux) * inv_h
                })
                .sum()
        })
        .collect())
}

/// Transport term `Q_± . D U` per node.
pub fn advect(
    qpm: &StaggeredPolicy,
    u: &[f64],
    grid: &SpaceGrid,
) -> Result<ScalarField, GridError> {
    grid.check(u.len())?;
    check_policy(qpm, grid)?;
    let inv_h = 1.0 / grid.spacing();
    Ok((0..grid.len())
        .map(|k| {
            (0..grid.dim())
                .map(|axis| {
                    let dl = (u[k] - u[grid.neighbor(k, axis, -1)]) * inv_h;
                    let dr = (u[grid.neighbor(k, axis, 1)] - u[k]) * inv_h;
                    qpm.left(k, axis) * dl + qpm.right(k, axis) * dr
                })
                .sum()
        })
        .collect())
}

/// `h^dim * sum_i M_i`.
pub fn total_mass(m: &[f64], grid: &SpaceGrid) -> f64 {
    grid.cell_volume() * m.iter().sum::<f64>()
}
