//! Residuals of the discrete MFG system, distances between iterates,
//! linear-rate fitting, and the maximum-horizon sweep.

use std::ops::Range;
use std::time::Duration;

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{
    divergence, eo_split, laplacian_apply, GridError, ScalarTimeField, SpaceGrid, TimeGrid,
};
use crate::kernels::{hjb_residual, policy_slice, KernelError, PolicyTimeField};
use crate::models::HamiltonianModel;
use crate::solvers::{solve, Algorithm, SolverConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("rate window needs at least 3 points, got {0}")]
    WindowTooShort(usize),
    #[error("rate fit needs positive values, found {value} at index {index}")]
    NonPositive { index: usize, value: f64 },
    #[error("sweep ladder must be non-empty and strictly increasing")]
    Ladder,
    #[error("sweep lists must be non-empty")]
    EmptySweep,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Scalar metrics of one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based pass number.
    pub iteration: usize,
    /// `max |M^(k) - M^(k-1)|`; absent on a policy iteration's first pass.
    pub d_density: Option<f64>,
    pub res_hjb: f64,
    pub res_fp: f64,
    pub gap_u: Option<f64>,
    pub gap_m: Option<f64>,
    pub gap_q: Option<f64>,
    /// Wall-clock seconds since the solve started.
    pub elapsed: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub fp: Duration,
    pub hjb: Duration,
    pub policy: Duration,
    pub newton: Duration,
}

impl PhaseTimings {
    pub fn total(&self) -> Duration {
        self.fp + self.hjb + self.policy + self.newton
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceReport {
    pub records: Vec<IterationRecord>,
    pub fitted_rate: Option<f64>,
    pub fit_r2: Option<f64>,
    pub timings: PhaseTimings,
    pub newton_iterations: usize,
    /// `(U, M)` of every pass, only when requested in the config.
    pub field_history: Vec<(ScalarTimeField, ScalarTimeField)>,
}

impl ConvergenceReport {
    /// `(iteration, d_density)` for every pass where it is defined.
    pub fn density_differences(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.d_density.map(|d| (r.iteration, d)))
            .collect()
    }

    /// Fits the linear rate over iterations `>= skip` up to the first one
    /// whose density difference reaches `floor`, and stores the result.
    pub fn fit_rate(&mut self, skip: usize, floor: f64) -> Option<RateFit> {
        let seq = self.density_differences();
        let values: Vec<f64> = seq.iter().map(|(_, d)| *d).collect();
        let start = seq.iter().position(|(it, _)| *it >= skip)?;
        let end = seq[start..]
            .iter()
            .position(|(_, d)| *d <= floor)
            .map_or(seq.len(), |p| start + p + 1);
        let fit = fit_linear_rate(&values, start..end).ok()?;
        self.fitted_rate = Some(fit.rate);
        self.fit_r2 = Some(fit.r2);
        Some(fit)
    }
}

/// Sup-norm residuals `(HJB, FP)` of the discrete MFG system.
pub fn residual_mfg(
    model: &HamiltonianModel,
    u: &ScalarTimeField,
    m: &ScalarTimeField,
    grid: &SpaceGrid,
    time: &TimeGrid,
    epsilon: f64,
) -> Result<(f64, f64), DiagnosticsError> {
    let expected = time.steps() + 1;
    if u.len() != expected || m.len() != expected {
        return Err(DiagnosticsError::Shape(format!(
            "expected {expected} slices, got U={} M={}",
            u.len(),
            m.len()
        )));
    }
    let dt = time.dt();
    let mut res_hjb: f64 = 0.0;
    let mut res_fp: f64 = 0.0;
    for n in 0..time.steps() {
        let (un, m_now, m_next) = (u.slice(n), m.slice(n), m.slice(n + 1));
        let f = hjb_residual(model, u.slice(n + 1), un, m_next, grid, dt, epsilon)?;
        res_hjb = res_hjb.max(f.max_abs());
        let q = eo_split(&policy_slice(model, un, m_next, grid, f64::INFINITY)?);
        let lap = laplacian_apply(m_next, grid)?;
        let div = divergence(m_next, &q, grid)?;
        for k in 0..grid.len() {
            let r = (m_next[k] - m_now[k]) / dt - epsilon * lap[k] - div[k];
            res_fp = res_fp.max(r.abs());
        }
    }
    Ok((res_hjb, res_fp))
}

/// `max_{n,i} |A - B|`.
pub fn linf_gap(a: &ScalarTimeField, b: &ScalarTimeField) -> Result<f64, DiagnosticsError> {
    if a.len() != b.len() {
        return Err(DiagnosticsError::Shape(format!(
            "{} vs {} time slices",
            a.len(),
            b.len()
        )));
    }
    let mut gap: f64 = 0.0;
    for (sa, sb) in a.slices().iter().zip(b.slices()) {
        if sa.len() != sb.len() {
            return Err(DiagnosticsError::Shape(format!(
                "{} vs {} nodes",
                sa.len(),
                sb.len()
            )));
        }
        for (x, y) in sa.iter().zip(sb.iter()) {
            gap = gap.max((x - y).abs());
        }
    }
    Ok(gap)
}

/// `max |Q_a - Q_b|` over every staggered component.
pub fn policy_gap(a: &PolicyTimeField, b: &PolicyTimeField) -> Result<f64, DiagnosticsError> {
    if a.len() != b.len()
        || a.slices()
            .iter()
            .zip(b.slices())
            .any(|(x, y)| x.raw().len() != y.raw().len())
    {
        return Err(DiagnosticsError::Shape(
            "policy fields differ in shape".into(),
        ));
    }
    Ok(a.max_abs_diff(b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    /// `exp(slope)` of the log-linear fit.
    pub rate: f64,
    pub r2: f64,
    pub slope: f64,
    pub intercept: f64,
}

/// Least-squares fit of `ln d_k` against `k` over `window`.
pub fn fit_linear_rate(d: &[f64], window: Range<usize>) -> Result<RateFit, DiagnosticsError> {
    let window = window.start.min(d.len())..window.end.min(d.len());
    if window.len() < 3 {
        return Err(DiagnosticsError::WindowTooShort(window.len()));
    }
    let mut xs = Vec::with_capacity(window.len());
    let mut ys = Vec::with_capacity(window.len());
    for k in window {
        if !(d[k] > 0.0) {
            return Err(DiagnosticsError::NonPositive {
                index: k,
                value: d[k],
            });
        }
        xs.push(k as f64);
        ys.push(d[k].ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if ss_tot <= f64::EPSILON * ys.len() as f64 * my.abs().max(1.0) {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(RateFit {
        rate: slope.exp(),
        r2,
        slope,
        intercept,
    })
}

/// Parameters of a maximum-horizon sweep. The time step of `base` is kept
/// fixed and the number of steps scales with each horizon on the ladder.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: SolverConfig,
    pub betas: Vec<f64>,
    pub zetas: Vec<f64>,
    pub ladder: Vec<f64>,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepVerdict {
    pub beta: f64,
    pub zeta: f64,
    pub horizon: f64,
    pub steps: usize,
    pub converged: bool,
    pub iterations: usize,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub betas: Vec<f64>,
    pub zetas: Vec<f64>,
    pub ladder: Vec<f64>,
    /// Every solve, ordered by (zeta, beta, horizon) as listed.
    pub verdicts: Vec<SweepVerdict>,
    pub warnings: Vec<String>,
}

impl SweepResult {
    pub fn verdict(&self, beta: f64, zeta: f64, horizon: f64) -> Option<&SweepVerdict> {
        self.verdicts
            .iter()
            .find(|v| v.beta == beta && v.zeta == zeta && v.horizon == horizon)
    }

    /// Largest ladder horizon at which the cell converged.
    pub fn max_t(&self, beta: f64, zeta: f64) -> Option<f64> {
        self.verdicts
            .iter()
            .filter(|v| v.beta == beta && v.zeta == zeta && v.converged)
            .map(|v| v.horizon)
            .fold(None, |acc: Option<f64>, t| {
                Some(acc.map_or(t, |a| a.max(t)))
            })
    }

    pub fn cap(&self) -> f64 {
        *self.ladder.last().unwrap_or(&0.0)
    }
}

/// Runs PI1 for every (beta, zeta, T) and records convergence verdicts.
/// Solver errors count as non-convergence.
pub fn max_t_sweep(spec: &SweepSpec) -> Result<SweepResult, DiagnosticsError> {
    if spec.betas.is_empty() || spec.zetas.is_empty() {
        return Err(DiagnosticsError::EmptySweep);
    }
    if spec.ladder.is_empty()
        || spec.ladder.windows(2).any(|w| !(w[1] > w[0]))
        || !(spec.ladder[0] > 0.0)
    {
        return Err(DiagnosticsError::Ladder);
    }
    let dt = spec.base.scenario.horizon / spec.base.scenario.steps as f64;
    let mut cells = Vec::new();
    for &zeta in &spec.zetas {
        for &beta in &spec.betas {
            for &horizon in &spec.ladder {
                cells.push((beta, zeta, horizon));
            }
        }
    }
    let run = |&(beta, zeta, horizon): &(f64, f64, f64)| -> SweepVerdict {
        let mut cfg = spec.base.clone();
        cfg.algorithm = Algorithm::Pi1;
        cfg.keep_field_history = false;
        let model = &mut cfg.scenario.model;
        model.weight_theta = beta / (model.gamma - 1.0);
        model.coupling_zeta = zeta;
        cfg.scenario.horizon = horizon;
        cfg.scenario.steps = ((horizon / dt).round() as usize).max(1);
        let steps = cfg.scenario.steps;
        match solve(&cfg, None) {
            Ok((sol, _)) => SweepVerdict {
                beta,
                zeta,
                horizon,
                steps,
                converged: sol.converged,
                iterations: sol.iterations,
                status: sol.status.to_string(),
            },
            Err(e) => SweepVerdict {
                beta,
                zeta,
                horizon,
                steps,
                converged: false,
                iterations: 0,
                status: format!("error: {e}"),
            },
        }
    };
    let verdicts: Vec<SweepVerdict> = match spec.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map(|pool| pool.install(|| cells.par_iter().map(run).collect()))
            .unwrap_or_else(|_| cells.iter().map(run).collect()),
        None => cells.par_iter().map(run).collect(),
    };

    let mut result = SweepResult {
        betas: spec.betas.clone(),
        zetas: spec.zetas.clone(),
        ladder: spec.ladder.clone(),
        verdicts,
        warnings: Vec::new(),
    };
    result.warnings = sweep_warnings(&result);
    Ok(result)
}

fn sweep_warnings(result: &SweepResult) -> Vec<String> {
    let mut warnings = Vec::new();
    for &beta in &result.betas {
        for &zeta in &result.zetas {
            let mut failed_at = None;
            for &t in &result.ladder {
                match result.verdict(beta, zeta, t) {
                    Some(v) if !v.converged && failed_at.is_none() => failed_at = Some(t),
                    Some(v) if v.converged => {
                        if let Some(f) = failed_at {
                            warnings.push(format!(
                                "beta={beta} zeta={zeta}: converged at T={t} after failing at T={f}"
                            ));
                        }
                    }
                    _ => {}
                }
            }
        }
        let mut sorted = result.zetas.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let column: Vec<f64> = sorted
            .iter()
            .map(|&z| result.max_t(beta, z).unwrap_or(0.0))
            .collect();
        for (w, z) in column.windows(2).zip(sorted.windows(2)) {
            if w[1] > w[0] {
                warnings.push(format!(
                    "beta={beta}: max T grows from {} to {} as zeta increases {} -> {}",
                    w[0], w[1], z[0], z[1]
                ));
            }
        }
    }
    warnings
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ScalarField;
    use crate::models::HamiltonianModel;

    #[test]
    fn gap_examples() {
        let a = ScalarTimeField::new(vec![ScalarField::new(vec![1.0, -2.0]); 3]);
        let b = ScalarTimeField::new(vec![ScalarField::new(vec![4.0, 1.0]); 3]);
        assert_eq!(linf_gap(&a, &a).unwrap(), 0.0);
        assert_eq!(linf_gap(&a, &b).unwrap(), 3.0);
        assert_eq!(linf_gap(&b, &a).unwrap(), 3.0);
        let short = ScalarTimeField::new(vec![ScalarField::new(vec![4.0, 1.0]); 2]);
        assert!(linf_gap(&a, &short).is_err());
    }

    #[test]
    fn geometric_sequence_fit() {
        let d: Vec<f64> = (0..20).map(|k| 0.5f64.powi(k)).collect();
        let fit = fit_linear_rate(&d, 0..20).unwrap();
        assert!((fit.rate - 0.5).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        let c = vec![0.3; 10];
        let fit = fit_linear_rate(&c, 2..9).unwrap();
        assert!((fit.rate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        assert_eq!(
            fit_linear_rate(&[1.0, 0.5], 0..2),
            Err(DiagnosticsError::WindowTooShort(2))
        );
        assert!(matches!(
            fit_linear_rate(&[1.0, 0.0, 0.5, 0.1], 0..4),
            Err(DiagnosticsError::NonPositive { index: 1, .. })
        ));
    }

    #[test]
    fn trivial_stationary_solution_has_zero_residual() {
        let model = HamiltonianModel::new(2.0, 1.0, 0.0, 0.0, 0.0).unwrap();
        for dim in [1, 2] {
            let g = SpaceGrid::new(dim, 6).unwrap();
            let t = TimeGrid::new(5, 1.0).unwrap();
            let u = ScalarTimeField::constant(g.len(), 5, 0.0);
            let m = ScalarTimeField::constant(g.len(), 5, 1.0);
            assert_eq!(
                residual_mfg(&model, &u, &m, &g, &t, 0.1).unwrap(),
                (0.0, 0.0)
            );
        }
    }

    #[test]
    fn report_window_selection() {
        let mut report = ConvergenceReport::default();
        for k in 1..=30 {
            report.records.push(IterationRecord {
                iteration: k,
                d_density: (k > 1).then(|| 0.3f64.powi(k as i32)),
                res_hjb: 0.0,
                res_fp: 0.0,
                gap_u: None,
                gap_m: None,
                gap_q: None,
                elapsed: 0.0,
            });
        }
        let fit = report.fit_rate(5, 1e-7).unwrap();
        assert!((fit.rate - 0.3).abs() < 1e-10);
        assert_eq!(report.fitted_rate, Some(fit.rate));
    }
}
