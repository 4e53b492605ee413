//! Outer iterations: policy iteration in its two variants and the
//! fixed-point iteration with a Newton inner loop.
//!
//! All three stop on the density successive difference
//! `max_{n,i} |M^(k) - M^(k-1)|`, count one full pass as one iteration,
//! and keep only the last two iterates unless field history is requested.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::diagnostics::{
    linf_gap, policy_gap, residual_mfg, ConvergenceReport, DiagnosticsError, IterationRecord,
};
use crate::grid::{
    eo_split, upwind_gradient, GridError, ScalarField, ScalarTimeField, SpaceGrid, TimeGrid,
};
use crate::kernels::{
    fp_forward, hjb_backward_linear, hjb_backward_newton, lagrangian_source, policy_update,
    KernelError, NewtonSettings, PolicyTimeField,
};
use crate::linsys::LinearSolveSettings;
use crate::models::{ModelError, ScenarioPreset};

/// First iteration excluded from the linear-rate fit.
pub const RATE_FIT_SKIP: usize = 5;
/// Density differences below this belong to the round-off plateau.
pub const RATE_FIT_FLOOR: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Pi1,
    Pi2,
    FixedPoint,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Self::Pi1, Self::Pi2, Self::FixedPoint];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pi1 => "pi1",
            Self::Pi2 => "pi2",
            Self::FixedPoint => "fixed_point",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = SolverError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                SolverError::Config(format!(
                    "unknown algorithm '{s}' (expected pi1, pi2 or fixed_point)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialPolicy {
    Zero,
    Custom(PolicyTimeField),
}

/// Running cost used in the linear HJB step of PI1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Pi1Source {
    /// `L(M_{n+1}, Q_n)` at the current density.
    #[default]
    Lagrangian,
    /// `Q_n . D U^(k-1)_n - H(M_{n+1}, D U^(k-1)_n)`, using the previous
    /// value function (the true Lagrangian on the first pass).
    PerturbedLagrangian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub scenario: ScenarioPreset,
    pub algorithm: Algorithm,
    pub tol_density: f64,
    pub max_outer_iters: usize,
    /// Componentwise bound on the control; infinite means unconstrained.
    pub control_bound: f64,
    pub initial_policy: InitialPolicy,
    pub newton: NewtonSettings,
    pub linear: LinearSolveSettings,
    pub blowup_threshold: f64,
    pub keep_field_history: bool,
    pub pi1_source: Pi1Source,
}

impl SolverConfig {
    pub fn new(scenario: ScenarioPreset, algorithm: Algorithm) -> Self {
        Self {
            scenario,
            algorithm,
            tol_density: 1e-8,
            max_outer_iters: 500,
            control_bound: f64::INFINITY,
            initial_policy: InitialPolicy::Zero,
            newton: NewtonSettings::default(),
            linear: LinearSolveSettings::default(),
            blowup_threshold: 1e8,
            keep_field_history: false,
            pi1_source: Pi1Source::Lagrangian,
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: String| Err(SolverError::Config(msg));
        if !(self.tol_density > 0.0) {
            return bad(format!(
                "tol_density must be positive, got {}",
                self.tol_density
            ));
        }
        if self.max_outer_iters == 0 {
            return bad("max_outer_iters must be at least 1".into());
        }
        if !(self.control_bound > 0.0) {
            return bad(format!("R must be positive, got {}", self.control_bound));
        }
        if !(self.blowup_threshold > 0.0) {
            return bad("blowup_threshold must be positive".into());
        }
        if !(self.newton.tol > 0.0) || self.newton.max_iters == 0 {
            return bad("Newton settings need tol > 0 and max_iters >= 1".into());
        }
        if !(self.linear.rel_tol > 0.0) {
            return bad("linear rel_tol must be positive".into());
        }
        self.scenario.model.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Diverged(String),
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Converged => f.write_str("converged"),
            Self::MaxIterations => f.write_str("max_iterations"),
            Self::Diverged(why) => write!(f, "diverged ({why})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub u: ScalarTimeField,
    pub m: ScalarTimeField,
    /// Policy built from the final `U` and `M`.
    pub q: PolicyTimeField,
    pub converged: bool,
    pub iterations: usize,
    pub status: SolveStatus,
}

pub fn pi1_solve(config: &SolverConfig) -> Result<(Solution, ConvergenceReport), SolverError> {
    run(config, Algorithm::Pi1, None)
}

pub fn pi2_solve(config: &SolverConfig) -> Result<(Solution, ConvergenceReport), SolverError> {
    run(config, Algorithm::Pi2, None)
}

pub fn fixed_point_solve(
    config: &SolverConfig,
) -> Result<(Solution, ConvergenceReport), SolverError> {
    run(config, Algorithm::FixedPoint, None)
}

/// Runs `config.algorithm`, recording gaps to `reference` when given.
pub fn solve(
    config: &SolverConfig,
    reference: Option<&Solution>,
) -> Result<(Solution, ConvergenceReport), SolverError> {
    run(config, config.algorithm, reference)
}

struct Setup {
    grid: SpaceGrid,
    time: TimeGrid,
    m0: ScalarField,
    terminal: ScalarField,
}

impl Setup {
    fn new(config: &SolverConfig) -> Result<Self, SolverError> {
        config.validate()?;
        let grid = config.scenario.space_grid()?;
        let time = config.scenario.time_grid()?;
        let m0 = config.scenario.initial_slice(&grid);
        let terminal = config.scenario.terminal_slice(&grid);
        Ok(Self {
            grid,
            time,
            m0,
            terminal,
        })
    }
}

/// State carried from one pass to the next.
struct Iterate {
    u: ScalarTimeField,
    m: ScalarTimeField,
    q: PolicyTimeField,
}

fn blowup_reason(config: &SolverConfig, it: &Iterate) -> Option<String> {
    let limit = config.blowup_threshold;
    let check = |name: &str, finite: bool, size: f64| {
        if !finite {
            Some(format!("non-finite {name}"))
        } else if size > limit {
            Some(format!("|{name}|_inf = {size:e} exceeds {limit:e}"))
        } else {
            None
        }
    };
    check("U", it.u.is_finite(), it.u.max_abs())
        .or_else(|| check("M", it.m.is_finite(), it.m.max_abs()))
        .or_else(|| check("Q", it.q.is_finite(), it.q.max_abs()))
}

fn sources_for(
    config: &SolverConfig,
    m: &ScalarTimeField,
    q: &PolicyTimeField,
    previous_u: Option<&ScalarTimeField>,
    grid: &SpaceGrid,
) -> Result<Vec<ScalarField>, SolverError> {
    let model = &config.scenario.model;
    (0..q.len())
        .map(|n| {
            let qpm = eo_split(q.slice(n));
            match previous_u {
                Some(u_prev) => {
                    perturbed_source(config, m.slice(n + 1), &qpm, u_prev.slice(n), grid)
                }
                None => Ok(lagrangian_source(model, m.slice(n + 1), &qpm)?),
            }
        })
        .collect()
}

/// `Q_± . v - H(M, v)` with `v` the split gradient of the previous value.
fn perturbed_source(
    config: &SolverConfig,
    m_next: &ScalarField,
    qpm: &crate::grid::StaggeredPolicy,
    u_prev: &ScalarField,
    grid: &SpaceGrid,
) -> Result<ScalarField, SolverError> {
    let model = &config.scenario.model;
    let grad = upwind_gradient(u_prev, grid)?;
    (0..grid.len())
        .map(|k| {
            let m = m_next[k].max(0.0);
            let (mut dot, mut v2) = (0.0, 0.0);
            for (c, (q, p)) in qpm.node(k).iter().zip(grad.node(k)).enumerate() {
                let p = if c % 2 == 0 { p.max(0.0) } else { p.min(0.0) };
                dot += q * p;
                v2 += p * p;
            }
            Ok(dot - model.kinetic(m, v2) + model.coupling_zeta * m)
        })
        .collect()
}

fn run(
    config: &SolverConfig,
    algorithm: Algorithm,
    reference: Option<&Solution>,
) -> Result<(Solution, ConvergenceReport), SolverError> {
    let setup = Setup::new(config)?;
    let Setup {
        grid,
        time,
        m0,
        terminal,
    } = &setup;
    let model = &config.scenario.model;
    let eps = config.scenario.epsilon;
    let lin = &config.linear;
    let bound = config.control_bound;

    let start = Instant::now();
    let mut report = ConvergenceReport::default();

    let initial_q = match &config.initial_policy {
        InitialPolicy::Zero => PolicyTimeField::zeros(grid, time.steps()),
        InitialPolicy::Custom(q) => {
            if q.len() != time.steps() || q.slices().iter().any(|s| s.len() != grid.len()) {
                return Err(SolverError::Config(
                    "custom initial policy does not match the grids".into(),
                ));
            }
            q.clone()
        }
    };
    // Policy driving the next FP solve.
    let mut q_drive = initial_q;
    // Fixed-point guess U = 0, M = 1 (M_0 is always the initial datum).
    let mut last: Option<Iterate> = None;
    if algorithm == Algorithm::FixedPoint {
        let mut m = ScalarTimeField::constant(grid.len(), time.steps(), 1.0);
        m.slices_mut()[0] = m0.clone();
        let u = ScalarTimeField::constant(grid.len(), time.steps(), 0.0);
        let t = Instant::now();
        q_drive = policy_update(model, &u, &m, grid, bound)?;
        report.timings.policy += t.elapsed();
        last = Some(Iterate {
            u,
            m,
            q: q_drive.clone(),
        });
    }
    let mut u_tilde_prev: Option<ScalarTimeField> = None;
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;

    for pass in 1..=config.max_outer_iters {
        let t = Instant::now();
        let m = fp_forward(m0, &q_drive, grid, time, eps, lin)?;
        report.timings.fp += t.elapsed();

        let u = match algorithm {
            Algorithm::Pi1 => {
                let previous_u = match config.pi1_source {
                    Pi1Source::PerturbedLagrangian => last.as_ref().map(|it| &it.u),
                    Pi1Source::Lagrangian => None,
                };
                let t = Instant::now();
                let sources = sources_for(config, &m, &q_drive, previous_u, grid)?;
                let u = hjb_backward_linear(terminal, &q_drive, &sources, grid, time, eps, lin)?;
                report.timings.hjb += t.elapsed();
                u
            }
            Algorithm::Pi2 => {
                let t = Instant::now();
                let q_tilde = match &u_tilde_prev {
                    Some(u_prev) => policy_update(model, u_prev, &m, grid, bound)?,
                    None => q_drive.clone(),
                };
                report.timings.policy += t.elapsed();
                let t = Instant::now();
                let sources = sources_for(config, &m, &q_tilde, None, grid)?;
                let u = hjb_backward_linear(terminal, &q_tilde, &sources, grid, time, eps, lin)?;
                report.timings.hjb += t.elapsed();
                u
            }
            Algorithm::FixedPoint => {
                let t = Instant::now();
                let (u, trace) =
                    hjb_backward_newton(model, terminal, &m, grid, time, eps, &config.newton, lin)?;
                report.timings.newton += t.elapsed();
                report.newton_iterations += trace.total_iterations;
                u
            }
        };

        let t = Instant::now();
        let q_next = policy_update(model, &u, &m, grid, bound)?;
        report.timings.policy += t.elapsed();

        let current = Iterate { u, m, q: q_next };
        if let Some(reason) = blowup_reason(config, &current) {
            status = SolveStatus::Diverged(reason);
            iterations = pass;
            break;
        }

        let d_density = match &last {
            Some(prev) => Some(linf_gap(&current.m, &prev.m)?),
            None => None,
        };
        let (res_hjb, res_fp) = residual_mfg(model, &current.u, &current.m, grid, time, eps)?;
        let (gap_u, gap_m, gap_q) = match reference {
            Some(r) => (
                Some(linf_gap(&current.u, &r.u)?),
                Some(linf_gap(&current.m, &r.m)?),
                Some(policy_gap(&current.q, &r.q)?),
            ),
            None => (None, None, None),
        };
        report.records.push(IterationRecord {
            iteration: pass,
            d_density,
            res_hjb,
            res_fp,
            gap_u,
            gap_m,
            gap_q,
            elapsed: start.elapsed().as_secs_f64(),
        });
        if config.keep_field_history {
            report
                .field_history
                .push((current.u.clone(), current.m.clone()));
        }

        iterations = pass;
        q_drive = current.q.clone();
        if algorithm == Algorithm::Pi2 {
            u_tilde_prev = Some(current.u.clone());
        }
        last = Some(current);
        if d_density.is_some_and(|d| d <= config.tol_density) {
            status = SolveStatus::Converged;
            break;
        }
    }

    report.fit_rate(RATE_FIT_SKIP, RATE_FIT_FLOOR);
    let last = match last {
        Some(it) => it,
        // diverged on the very first pass: report the data we started from
        None => Iterate {
            u: ScalarTimeField::constant(grid.len(), time.steps(), 0.0),
            m: ScalarTimeField::new(vec![m0.clone(); time.steps() + 1]),
            q: PolicyTimeField::zeros(grid, time.steps()),
        },
    };
    let solution = Solution {
        u: last.u,
        m: last.m,
        q: last.q,
        converged: status == SolveStatus::Converged,
        iterations,
        status,
    };
    Ok((solution, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_scenario, ScenarioOverrides};

    fn small(name: &str, nodes: usize, steps: usize) -> ScenarioPreset {
        build_scenario(
            name,
            &ScenarioOverrides {
                nodes: Some(nodes),
                steps: Some(steps),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.as_str().parse::<Algorithm>().unwrap(), a);
        }
        assert!("newton".parse::<Algorithm>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = SolverConfig::new(small("example1", 20, 10), Algorithm::Pi1);
        cfg.tol_density = 0.0;
        assert!(matches!(pi1_solve(&cfg), Err(SolverError::Config(_))));
        cfg.tol_density = 1e-8;
        cfg.max_outer_iters = 0;
        assert!(matches!(pi1_solve(&cfg), Err(SolverError::Config(_))));
    }

    #[test]
    fn coarse_example1_converges_for_every_algorithm() {
        for algorithm in Algorithm::ALL {
            let cfg = SolverConfig::new(small("example1", 40, 40), algorithm);
            let (sol, report) = solve(&cfg, None).unwrap();
            assert!(sol.converged, "{algorithm}: {}", sol.status);
            assert_eq!(report.records.len(), sol.iterations);
            let d = report.records.last().unwrap().d_density.unwrap();
            assert!(d <= 1e-8);
        }
    }

    #[test]
    fn blowup_is_reported_as_divergence() {
        let mut cfg = SolverConfig::new(small("example1", 20, 20), Algorithm::Pi1);
        cfg.blowup_threshold = 1e-3;
        let (sol, _) = pi1_solve(&cfg).unwrap();
        assert!(matches!(sol.status, SolveStatus::Diverged(_)));
        assert!(!sol.converged);
    }

    #[test]
    fn max_iterations_is_not_convergence() {
        let mut cfg = SolverConfig::new(small("example1", 20, 20), Algorithm::Pi2);
        cfg.max_outer_iters = 2;
        let (sol, report) = pi2_solve(&cfg).unwrap();
        assert_eq!(sol.status, SolveStatus::MaxIterations);
        assert_eq!(sol.iterations, 2);
        assert_eq!(report.records.len(), 2);
    }

    #[test]
    fn perturbed_source_variant_reaches_the_same_fixed_point() {
        let base = SolverConfig::new(small("example1", 30, 30), Algorithm::Pi1);
        let mut alt = base.clone();
        alt.pi1_source = Pi1Source::PerturbedLagrangian;
        let (a, _) = pi1_solve(&base).unwrap();
        let (b, _) = pi1_solve(&alt).unwrap();
        assert!(a.converged && b.converged);
        assert!(linf_gap(&a.m, &b.m).unwrap() < 1e-6);
        assert!(linf_gap(&a.u, &b.u).unwrap() < 1e-6);
    }
}
