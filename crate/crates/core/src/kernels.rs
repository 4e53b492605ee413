//! Space-time sweeps: the forward Fokker-Planck solve, the backward linear
//! HJB solve for a frozen policy, the policy update, and the Newton solve of
//! the nonlinear HJB equation.
//!
//! Index discipline: the policy on `[t_n, t_{n+1})` is built from `U_n` and
//! `M_{n+1}`, and the HJB step at `n` sees the density `M_{n+1}`.
//!
//! The discrete Hamiltonian at a node is `H(M, v)` where `v` collects the
//! split one-sided gradients `((D_L U)^+, (D_R U)^-)` over all axes. Its
//! gradient `H_p(M, v)` is the split policy, which makes the policy-iteration
//! source `Q . D U - L(M, Q)` coincide with `H(M, v)` at a fixed point.

use thiserror::Error;

use crate::grid::{
    eo_norm_sq, eo_split, laplacian_apply, upwind_gradient, GridError, ScalarField,
    ScalarTimeField, SpaceGrid, StaggeredPolicy, TimeGrid,
};
use crate::linsys::{
    assemble_fp_matrix, assemble_hjb_matrix, solve, LinearSolveSettings, LinsysError,
    SparseOperator,
};
use crate::models::{HamiltonianModel, ModelError};

/// Densities below this are treated as negative, not round-off.
pub const NEGATIVE_DENSITY_SLACK: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("linear solve failed at time step {step}: {source}")]
    Linear { step: usize, source: LinsysError },
    #[error("Newton did not converge at time step {step} after {iterations} iterations (residual {residual:e})")]
    Newton {
        step: usize,
        iterations: usize,
        residual: f64,
    },
    #[error("density {value} at node {node} is negative beyond round-off")]
    NegativeDensity { node: usize, value: f64 },
    #[error("expected {expected} time slices, found {found}")]
    Slices { expected: usize, found: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One staggered policy per time interval `n = 0..N-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTimeField {
    slices: Vec<StaggeredPolicy>,
}

impl PolicyTimeField {
    pub fn new(slices: Vec<StaggeredPolicy>) -> Self {
        Self { slices }
    }

    pub fn zeros(grid: &SpaceGrid, steps: usize) -> Self {
        Self::new(vec![StaggeredPolicy::zeros(grid); steps])
    }

    pub fn slices(&self) -> &[StaggeredPolicy] {
        &self.slices
    }

    pub fn slice(&self, n: usize) -> &StaggeredPolicy {
        &self.slices[n]
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// Largest componentwise difference between two policies.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.slices
            .iter()
            .zip(&other.slices)
            .flat_map(|(a, b)| a.raw().iter().zip(b.raw()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.slices.iter().fold(0.0, |m, q| m.max(q.max_abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.slices.iter().all(StaggeredPolicy::is_finite)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonSettings {
    /// Target for `||F||_inf`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iters: 50,
        }
    }
}

/// Inner-loop bookkeeping of a Newton sweep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NewtonTrace {
    /// `||F||_inf` per inner iteration, one list per time step `n`.
    pub residuals: Vec<Vec<f64>>,
    pub total_iterations: usize,
}

fn check_slices(expected: usize, found: usize) -> Result<(), KernelError> {
    if expected == found {
        Ok(())
    } else {
        Err(KernelError::Slices { expected, found })
    }
}

fn clip_density(node: usize, m: f64) -> Result<f64, KernelError> {
    if m < -NEGATIVE_DENSITY_SLACK || m.is_nan() {
        Err(KernelError::NegativeDensity { node, value: m })
    } else {
        Ok(m.max(0.0))
    }
}

/// Forward implicit-Euler sweep of the Fokker-Planck equation.
pub fn fp_forward(
    m0: &ScalarField,
    q: &PolicyTimeField,
    grid: &SpaceGrid,
    time: &TimeGrid,
    epsilon: f64,
    linear: &LinearSolveSettings,
) -> Result<ScalarTimeField, KernelError> {
    grid.check(m0.len())?;
    check_slices(time.steps(), q.len())?;
    let mut slices = Vec::with_capacity(time.steps() + 1);
    slices.push(m0.clone());
    for (n, qn) in q.slices().iter().enumerate() {
        let a = assemble_fp_matrix(grid, time.dt(), epsilon, qn)
            .map_err(|source| KernelError::Linear { step: n, source })?;
        let next = solve(&a, &slices[n], linear)
            .map_err(|source| KernelError::Linear { step: n, source })?;
        slices.push(next);
    }
    Ok(ScalarTimeField::new(slices))
}

/// Backward sweep of the HJB equation linearized at a frozen policy:
/// `A_HJB(Q_n) U_n = U_{n+1} + dt S_n`.
pub fn hjb_backward_linear(
    terminal: &ScalarField,
    q: &PolicyTimeField,
    sources: &[ScalarField],
    grid: &SpaceGrid,
    time: &TimeGrid,
    epsilon: f64,
    linear: &LinearSolveSettings,
) -> Result<ScalarTimeField, KernelError> {
    grid.check(terminal.len())?;
    check_slices(time.steps(), q.len())?;
    check_slices(time.steps(), sources.len())?;
    let dt = time.dt();
    let mut slices = vec![ScalarField::default(); time.steps() + 1];
    slices[time.steps()] = terminal.clone();
    for n in (0..time.steps()).rev() {
        grid.check(sources[n].len())?;
        let a = assemble_hjb_matrix(grid, dt, epsilon, q.slice(n))
            .map_err(|source| KernelError::Linear { step: n, source })?;
        let rhs: Vec<f64> = slices[n + 1]
            .iter()
            .zip(sources[n].iter())
            .map(|(u, s)| u + dt * s)
            .collect();
        slices[n] =
            solve(&a, &rhs, linear).map_err(|source| KernelError::Linear { step: n, source })?;
    }
    Ok(ScalarTimeField::new(slices))
}

/// Running cost `L(M_{n+1}, |Q_±|^2)` per node for a split policy.
pub fn lagrangian_source(
    model: &HamiltonianModel,
    m_next: &ScalarField,
    qpm: &StaggeredPolicy,
) -> Result<ScalarField, KernelError> {
    let norms = eo_norm_sq(qpm)?;
    if norms.len() != m_next.len() {
        return Err(GridError::Shape {
            expected: norms.len(),
            found: m_next.len(),
        }
        .into());
    }
    norms
        .iter()
        .zip(m_next.iter())
        .enumerate()
        .map(|(k, (q2, m))| Ok(model.lagrangian(clip_density(k, *m)?, *q2)?))
        .collect()
}

/// `|v|^2` for the split one-sided gradient vector of a node.
#[inline]
fn split_norm_sq(components: &[f64]) -> f64 {
    components
        .chunks_exact(2)
        .map(|lr| lr[0].max(0.0).powi(2) + lr[1].min(0.0).powi(2))
        .sum()
}

/// Policy on one time interval from `U_n` and `M_{n+1}`: every staggered
/// component is `H_p(M, v)` scaled onto that component's one-sided
/// difference, then clamped to `[-bound, bound]`. For `γ = 2` this is
/// `D U / w(M)` exactly.
pub fn policy_slice(
    model: &HamiltonianModel,
    u: &ScalarField,
    m_next: &ScalarField,
    grid: &SpaceGrid,
    bound: f64,
) -> Result<StaggeredPolicy, KernelError> {
    grid.check(m_next.len())?;
    let mut q = upwind_gradient(u, grid)?;
    for k in 0..grid.len() {
        let m = clip_density(k, m_next[k])?;
        let node = q.node_mut(k);
        let s = model.grad_scale(m, split_norm_sq(node));
        for c in node.iter_mut() {
            *c = (s * *c).clamp(-bound, bound);
        }
    }
    Ok(q)
}

/// Policy update over all intervals.
pub fn policy_update(
    model: &HamiltonianModel,
    u: &ScalarTimeField,
    m: &ScalarTimeField,
    grid: &SpaceGrid,
    bound: f64,
) -> Result<PolicyTimeField, KernelError> {
    check_slices(m.len(), u.len())?;
    if u.is_empty() {
        return Err(KernelError::Slices {
            expected: 2,
            found: 0,
        });
    }
    (0..u.len() - 1)
        .map(|n| policy_slice(model, u.slice(n), m.slice(n + 1), grid, bound))
        .collect::<Result<Vec<_>, _>>()
        .map(PolicyTimeField::new)
}

/// Discrete Hamiltonian per node, `H(M, v) - ζ M` with `v` the split gradient.
pub fn discrete_hamiltonian(
    model: &HamiltonianModel,
    u: &ScalarField,
    m_next: &ScalarField,
    grid: &SpaceGrid,
) -> Result<ScalarField, KernelError> {
    grid.check(m_next.len())?;
    let grad = upwind_gradient(u, grid)?;
    (0..grid.len())
        .map(|k| {
            let m = clip_density(k, m_next[k])?;
            Ok(model.kinetic(m, split_norm_sq(grad.node(k))) - model.coupling_zeta * m)
        })
        .collect()
}

/// Residual of the nonlinear HJB step at time `n`:
/// `-(U_{n+1} - U)/dt - eps Lap U + H_disc(M_{n+1}, D U)`.
pub fn hjb_residual(
    model: &HamiltonianModel,
    u_next: &ScalarField,
    u: &ScalarField,
    m_next: &ScalarField,
    grid: &SpaceGrid,
    dt: f64,
    epsilon: f64,
) -> Result<ScalarField, KernelError> {
    grid.check(u_next.len())?;
    let lap = laplacian_apply(u, grid)?;
    let ham = discrete_hamiltonian(model, u, m_next, grid)?;
    Ok((0..grid.len())
        .map(|k| -(u_next[k] - u[k]) / dt - epsilon * lap[k] + ham[k])
        .collect())
}

/// Jacobian of [`hjb_residual`] with respect to `U`:
/// `I/dt - eps Lap + q_± . D` with `q = H_p(M_{n+1}, v)`.
pub fn newton_jacobian(
    model: &HamiltonianModel,
    m_next: &ScalarField,
    u: &ScalarField,
    grid: &SpaceGrid,
    dt: f64,
    epsilon: f64,
) -> Result<SparseOperator, KernelError> {
    let q = eo_split(&policy_slice(model, u, m_next, grid, f64::INFINITY)?);
    let a = assemble_hjb_matrix(grid, dt, epsilon, &q)
        .map_err(|source| KernelError::Linear { step: 0, source })?;
    Ok(a.scaled(1.0 / dt))
}

/// Backward sweep of the nonlinear HJB equation, one Newton solve per step,
/// each warm-started from the later time slice.
#[allow(clippy::too_many_arguments)]
pub fn hjb_backward_newton(
    model: &HamiltonianModel,
    terminal: &ScalarField,
    m: &ScalarTimeField,
    grid: &SpaceGrid,
    time: &TimeGrid,
    epsilon: f64,
    settings: &NewtonSettings,
    linear: &LinearSolveSettings,
) -> Result<(ScalarTimeField, NewtonTrace), KernelError> {
    grid.check(terminal.len())?;
    check_slices(time.steps() + 1, m.len())?;
    let dt = time.dt();
    let steps = time.steps();
    let mut slices = vec![ScalarField::default(); steps + 1];
    slices[steps] = terminal.clone();
    let mut trace = NewtonTrace {
        residuals: vec![Vec::new(); steps],
        total_iterations: 0,
    };
    for n in (0..steps).rev() {
        let u_next = &slices[n + 1];
        let m_next = m.slice(n + 1);
        let mut u = u_next.clone();
        let mut f = hjb_residual(model, u_next, &u, m_next, grid, dt, epsilon)?;
        let mut res = f.max_abs();
        let history = &mut trace.residuals[n];
        history.push(res);
        let mut iterations = 0;
        while res > settings.tol {
            if iterations == settings.max_iters || !res.is_finite() {
                return Err(KernelError::Newton {
                    step: n,
                    iterations,
                    residual: res,
                });
            }
            let jac = newton_jacobian(model, m_next, &u, grid, dt, epsilon)?;
            let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
            let delta = solve(&jac, &rhs, linear)
                .map_err(|source| KernelError::Linear { step: n, source })?;
            iterations += 1;

            let mut step = 1.0;
            let (trial, trial_f) = loop {
                let trial: ScalarField = u
                    .iter()
                    .zip(delta.iter())
                    .map(|(a, d)| a + step * d)
                    .collect();
                let trial_f = hjb_residual(model, u_next, &trial, m_next, grid, dt, epsilon)?;
                if trial_f.max_abs() <= 10.0 * res || step < 1e-3 {
                    break (trial, trial_f);
                }
                step *= 0.5;
            };
            let tiny = delta.max_abs() * step <= 4.0 * f64::EPSILON * trial.max_abs().max(1.0);
            u = trial;
            f = trial_f;
            res = f.max_abs();
            history.push(res);
            if tiny {
                // update below round-off: the residual is at its floor
                break;
            }
        }
        trace.total_iterations += iterations;
        slices[n] = u;
    }
    Ok((ScalarTimeField::new(slices), trace))
}
