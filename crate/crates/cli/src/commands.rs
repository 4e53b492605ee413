//! The `run`, `compare` and `sweep` subcommands.

use std::io::Write;
use std::path::{Path, PathBuf};

use mfg_core::diagnostics::{max_t_sweep, PhaseTimings, SweepResult};
use mfg_core::solvers::solve;
use mfg_core::{Algorithm, ConvergenceReport, Solution, SolverError, SweepSpec};

use crate::config::{assemble, Resolved, DEFAULT_MAX_ITERS, DEFAULT_SWEEP_MAX_ITERS};
use crate::error::{CliError, EXIT_DIVERGED, EXIT_OK};
use crate::output::{
    fmt_f64, unix_now, write_field, write_history, write_policy, AlgorithmSummary, OutputDir,
    PhaseSeconds, RunManifest, Verdict, DENSITY_FILE, HISTORY_FILE, POLICY_FILE,
    RESOLVED_CONFIG_FILE, VALUE_FILE,
};

pub const COMPARE_FILE: &str = "compare.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const MAX_T_FILE: &str = "max_t.csv";
pub const VERDICTS_FILE: &str = "verdicts.csv";

/// Config sources shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct ConfigSource {
    pub path: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub output_dir: Option<PathBuf>,
}

impl ConfigSource {
    fn resolve(&self, default_max_iters: usize) -> Result<Resolved, CliError> {
        let cfg = assemble(self.path.as_deref(), &self.overrides)?;
        let mut resolved = cfg.resolve(default_max_iters)?;
        if let Some(dir) = &self.output_dir {
            resolved.output_dir = dir.clone();
            resolved.echo.output_dir = Some(dir.display().to_string());
        }
        Ok(resolved)
    }
}

fn verdict_of(result: &Result<(Solution, ConvergenceReport), SolverError>) -> Verdict {
    match result {
        Ok((sol, report)) => Verdict {
            status: sol.status.to_string(),
            converged: sol.converged,
            iterations: sol.iterations,
            final_d_density: report.records.last().and_then(|r| r.d_density),
            fitted_rate: report.fitted_rate,
            fit_r2: report.fit_r2,
            exit_code: if sol.converged {
                EXIT_OK
            } else {
                EXIT_DIVERGED
            },
        },
        Err(e) => Verdict {
            status: format!("error ({e})"),
            converged: false,
            iterations: 0,
            final_d_density: None,
            fitted_rate: None,
            fit_r2: None,
            exit_code: CliError::Solver(e.clone()).exit_code(),
        },
    }
}

fn summary_of(
    algorithm: Algorithm,
    result: &Result<(Solution, ConvergenceReport), SolverError>,
) -> AlgorithmSummary {
    let (timings, newton_iterations) = match result {
        Ok((_, report)) => ((&report.timings).into(), report.newton_iterations),
        Err(_) => ((&PhaseTimings::default()).into(), 0),
    };
    AlgorithmSummary {
        algorithm: algorithm.to_string(),
        verdict: verdict_of(result),
        timings,
        newton_iterations,
    }
}

fn write_resolved(out: &mut OutputDir, resolved: &Resolved) -> Result<(), CliError> {
    let text = resolved.echo.to_toml_string()?;
    out.write(RESOLVED_CONFIG_FILE, |w| w.write_all(text.as_bytes()))
}

/// Solves one configuration and writes its fields, history and manifest.
pub fn cmd_run(source: &ConfigSource) -> Result<i32, CliError> {
    let started = unix_now();
    let resolved = source.resolve(DEFAULT_MAX_ITERS)?;
    let scenario = &resolved.solver.scenario;
    let grid = scenario.space_grid().map_err(SolverError::from)?;
    let time = scenario.time_grid().map_err(SolverError::from)?;
    let mut out = OutputDir::create(&resolved.output_dir)?;
    write_resolved(&mut out, &resolved)?;
    let mut manifest = RunManifest::new("run", resolved.echo.clone(), started);

    let algorithm = resolved.solver.algorithm;
    let result = solve(&resolved.solver, None);
    if let Ok((sol, report)) = &result {
        out.write(DENSITY_FILE, |w| write_field(w, &sol.m, &grid, &time, "m"))?;
        out.write(VALUE_FILE, |w| write_field(w, &sol.u, &grid, &time, "u"))?;
        out.write(POLICY_FILE, |w| write_policy(w, &sol.q, &grid, &time))?;
        out.write(HISTORY_FILE, |w| write_history(w, &report.records))?;
    }
    let summary = summary_of(algorithm, &result);
    let code = summary.verdict.exit_code;
    println!(
        "{algorithm}: {} after {} iterations",
        summary.verdict.status, summary.verdict.iterations
    );
    manifest.runs.push(summary);
    manifest.write(&mut out)?;
    Ok(code)
}

/// Parses a comma-separated list of algorithm names.
pub fn parse_algorithms(text: &str) -> Result<Vec<Algorithm>, CliError> {
    let mut algorithms = Vec::new();
    for name in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let a: Algorithm = name
            .parse()
            .map_err(|e: SolverError| CliError::Usage(e.to_string()))?;
        if algorithms.contains(&a) {
            return Err(CliError::Usage(format!("algorithm '{a}' listed twice")));
        }
        algorithms.push(a);
    }
    Ok(algorithms)
}

/// Runs several algorithms on the same scenario. The fixed-point solution,
/// when requested, is computed first and used as the gap reference.
pub fn cmd_compare(source: &ConfigSource, algorithms: &[Algorithm]) -> Result<i32, CliError> {
    if algorithms.len() < 2 {
        return Err(CliError::Usage(format!(
            "compare needs at least two algorithms, got {}",
            algorithms.len()
        )));
    }
    let started = unix_now();
    let resolved = source.resolve(DEFAULT_MAX_ITERS)?;
    let mut out = OutputDir::create(&resolved.output_dir)?;
    write_resolved(&mut out, &resolved)?;
    let mut manifest = RunManifest::new("compare", resolved.echo.clone(), started);

    let mut order: Vec<Algorithm> = algorithms.to_vec();
    order.sort_by_key(|a| *a != Algorithm::FixedPoint);
    let mut reference: Option<Solution> = None;
    let mut results = Vec::new();
    for &algorithm in &order {
        let mut cfg = resolved.solver.clone();
        cfg.algorithm = algorithm;
        let result = solve(&cfg, reference.as_ref());
        if algorithm == Algorithm::FixedPoint {
            if let Ok((sol, _)) = &result {
                reference = Some(sol.clone());
            }
        }
        results.push((algorithm, result));
    }

    out.write(COMPARE_FILE, |w| write_compare(w, &results))?;
    let summaries: Vec<AlgorithmSummary> = results.iter().map(|(a, r)| summary_of(*a, r)).collect();
    out.write(TIMINGS_FILE, |w| write_timings(w, &summaries))?;
    print_timings(&summaries);
    let code = summaries
        .iter()
        .map(|s| s.verdict.exit_code)
        .max()
        .unwrap_or(EXIT_OK);
    manifest.runs = summaries;
    manifest.write(&mut out)?;
    Ok(code)
}

type Outcome = (
    Algorithm,
    Result<(Solution, ConvergenceReport), SolverError>,
);

/// One row per iteration, one column group per algorithm.
fn write_compare(w: &mut dyn Write, results: &[Outcome]) -> std::io::Result<()> {
    const FIELDS: [&str; 7] = [
        "d_density",
        "res_hjb",
        "res_fp",
        "gap_u",
        "gap_m",
        "gap_q",
        "elapsed",
    ];
    let mut header = vec!["iteration".to_string()];
    for (a, _) in results {
        header.extend(FIELDS.iter().map(|f| format!("{a}_{f}")));
    }
    writeln!(w, "{}", header.join(","))?;
    let rows = results
        .iter()
        .filter_map(|(_, r)| r.as_ref().ok().map(|(_, rep)| rep.records.len()))
        .max()
        .unwrap_or(0);
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for i in 0..rows {
        let mut row = vec![(i + 1).to_string()];
        for (_, r) in results {
            match r.as_ref().ok().and_then(|(_, rep)| rep.records.get(i)) {
                Some(rec) => row.extend([
                    opt(rec.d_density),
                    fmt_f64(rec.res_hjb),
                    fmt_f64(rec.res_fp),
                    opt(rec.gap_u),
                    opt(rec.gap_m),
                    opt(rec.gap_q),
                    fmt_f64(rec.elapsed),
                ]),
                None => row.extend(std::iter::repeat_n(String::new(), FIELDS.len())),
            }
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

fn write_timings(w: &mut dyn Write, summaries: &[AlgorithmSummary]) -> std::io::Result<()> {
    writeln!(
        w,
        "algorithm,status,iterations,fp_seconds,hjb_seconds,policy_seconds,newton_seconds,total_seconds,newton_iterations"
    )?;
    for s in summaries {
        let t: &PhaseSeconds = &s.timings;
        writeln!(
            w,
            "{},\"{}\",{},{},{},{},{},{},{}",
            s.algorithm,
            s.verdict.status.replace('"', "'"),
            s.verdict.iterations,
            fmt_f64(t.fp),
            fmt_f64(t.hjb),
            fmt_f64(t.policy),
            fmt_f64(t.newton),
            fmt_f64(t.total),
            s.newton_iterations
        )?;
    }
    Ok(())
}

fn print_timings(summaries: &[AlgorithmSummary]) {
    println!(
        "{:<12} {:>6} {:>10} {:>10} {:>10} {:>10} {:>10}  status",
        "algorithm", "iters", "fp [s]", "hjb [s]", "policy [s]", "newton [s]", "total [s]"
    );
    for s in summaries {
        let t = &s.timings;
        println!(
            "{:<12} {:>6} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.3}  {}",
            s.algorithm,
            s.verdict.iterations,
            t.fp,
            t.hjb,
            t.policy,
            t.newton,
            t.total,
            s.verdict.status
        );
    }
}

#[derive(Debug, Clone)]
pub struct SweepArgs {
    pub betas: Vec<f64>,
    pub zetas: Vec<f64>,
    pub ladder: Vec<f64>,
    pub jobs: Option<usize>,
}

/// Label of one max-T cell: the largest converged horizon, `>=cap` when
/// every horizon converged, `<first` when none did.
pub fn max_t_label(result: &SweepResult, beta: f64, zeta: f64) -> String {
    match result.max_t(beta, zeta) {
        None => format!("<{}", result.ladder.first().copied().unwrap_or(0.0)),
        Some(t) if t >= result.cap() => format!(">={t}"),
        Some(t) => format!("{t}"),
    }
}

/// Rows are zeta values, columns are beta values.
pub fn write_max_t(w: &mut dyn Write, result: &SweepResult) -> std::io::Result<()> {
    let header: Vec<String> = result.betas.iter().map(|b| b.to_string()).collect();
    writeln!(w, "zeta\\beta,{}", header.join(","))?;
    for &zeta in &result.zetas {
        let cells: Vec<String> = result
            .betas
            .iter()
            .map(|&beta| max_t_label(result, beta, zeta))
            .collect();
        writeln!(w, "{zeta},{}", cells.join(","))?;
    }
    Ok(())
}

fn write_verdicts(w: &mut dyn Write, result: &SweepResult) -> std::io::Result<()> {
    writeln!(w, "beta,zeta,T,N,converged,iterations,status")?;
    for v in &result.verdicts {
        writeln!(
            w,
            "{},{},{},{},{},{},\"{}\"",
            fmt_f64(v.beta),
            fmt_f64(v.zeta),
            fmt_f64(v.horizon),
            v.steps,
            v.converged,
            v.iterations,
            v.status.replace('"', "'")
        )?;
    }
    Ok(())
}

/// Maximum-horizon sweep over (beta, zeta) with the base time step fixed.
pub fn cmd_sweep(source: &ConfigSource, args: &SweepArgs) -> Result<i32, CliError> {
    if args.jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let started = unix_now();
    let resolved = source.resolve(DEFAULT_SWEEP_MAX_ITERS)?;
    let spec = SweepSpec {
        base: resolved.solver.clone(),
        betas: args.betas.clone(),
        zetas: args.zetas.clone(),
        ladder: args.ladder.clone(),
        jobs: args.jobs,
    };
    let result = max_t_sweep(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut out = OutputDir::create(&resolved.output_dir)?;
    write_resolved(&mut out, &resolved)?;
    out.write(MAX_T_FILE, |w| write_max_t(w, &result))?;
    out.write(VERDICTS_FILE, |w| write_verdicts(w, &result))?;
    for warning in &result.warnings {
        eprintln!("warning: {warning}");
    }
    let mut table = Vec::new();
    write_max_t(&mut table, &result).map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
    print!("{}", String::from_utf8_lossy(&table));
    let mut manifest = RunManifest::new("sweep", resolved.echo.clone(), started);
    manifest.warnings = result.warnings.clone();
    manifest.write(&mut out)?;
    Ok(EXIT_OK)
}
