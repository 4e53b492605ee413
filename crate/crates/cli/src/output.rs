//! CSV and manifest writers. Floats are written with 17 significant digits
//! so that every value reads back to the same bits.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mfg_core::diagnostics::PhaseTimings;
use mfg_core::{IterationRecord, PolicyTimeField, ScalarTimeField, SpaceGrid, TimeGrid};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub const DENSITY_FILE: &str = "density.csv";
pub const VALUE_FILE: &str = "value.csv";
pub const POLICY_FILE: &str = "policy.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Seconds since the Unix epoch.
pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Tracks every file written into one output directory.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes `name` through `body`, recording it in the inventory.
    pub fn write(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| CliError::io(&path, e))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }
}

fn coord_header(dim: usize) -> &'static str {
    if dim == 1 {
        "t,x1"
    } else {
        "t,x1,x2"
    }
}

fn write_coords(w: &mut dyn Write, t: f64, grid: &SpaceGrid, node: usize) -> std::io::Result<()> {
    let x = grid.coords(node);
    write!(w, "{},{}", fmt_f64(t), fmt_f64(x[0]))?;
    if grid.dim() == 2 {
        write!(w, ",{}", fmt_f64(x[1]))?;
    }
    Ok(())
}

/// One row per (time slice, node): `t, x1[, x2], <column>`.
pub fn write_field(
    w: &mut dyn Write,
    field: &ScalarTimeField,
    grid: &SpaceGrid,
    time: &TimeGrid,
    column: &str,
) -> std::io::Result<()> {
    writeln!(w, "{},{column}", coord_header(grid.dim()))?;
    for (n, slice) in field.slices().iter().enumerate() {
        for (k, v) in slice.iter().enumerate() {
            write_coords(w, time.time(n), grid, k)?;
            writeln!(w, ",{}", fmt_f64(*v))?;
        }
    }
    Ok(())
}

/// Staggered component names in storage order.
pub fn policy_columns(dim: usize) -> Vec<String> {
    (1..=dim)
        .flat_map(|a| [format!("q{a}_left"), format!("q{a}_right")])
        .collect()
}

/// One row per (time slice, node) with every staggered component.
pub fn write_policy(
    w: &mut dyn Write,
    q: &PolicyTimeField,
    grid: &SpaceGrid,
    time: &TimeGrid,
) -> std::io::Result<()> {
    writeln!(
        w,
        "{},{}",
        coord_header(grid.dim()),
        policy_columns(grid.dim()).join(",")
    )?;
    for (n, slice) in q.slices().iter().enumerate() {
        for k in 0..grid.len() {
            write_coords(w, time.time(n), grid, k)?;
            for v in slice.node(k) {
                write!(w, ",{}", fmt_f64(*v))?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Per-pass convergence history. Wall-clock time is left to the manifest
/// so that repeated runs produce identical files.
pub fn write_history(w: &mut dyn Write, records: &[IterationRecord]) -> std::io::Result<()> {
    writeln!(w, "iteration,d_density,res_hjb,res_fp")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{}",
            r.iteration,
            fmt_opt(r.d_density),
            fmt_f64(r.res_hjb),
            fmt_f64(r.res_fp)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseSeconds {
    pub fp: f64,
    pub hjb: f64,
    pub policy: f64,
    pub newton: f64,
    pub total: f64,
}

impl From<&PhaseTimings> for PhaseSeconds {
    fn from(t: &PhaseTimings) -> Self {
        Self {
            fp: t.fp.as_secs_f64(),
            hjb: t.hjb.as_secs_f64(),
            policy: t.policy.as_secs_f64(),
            newton: t.newton.as_secs_f64(),
            total: t.total().as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub status: String,
    pub converged: bool,
    pub iterations: usize,
    pub final_d_density: Option<f64>,
    pub fitted_rate: Option<f64>,
    pub fit_r2: Option<f64>,
    pub exit_code: i32,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub verdict: Verdict,
    pub timings: PhaseSeconds,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub config: RunConfig,
    pub files: Vec<String>,
    pub runs: Vec<AlgorithmSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: RunConfig, started_unix: f64) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix,
            finished_unix: started_unix,
            config,
            files: Vec::new(),
            runs: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Finalizes the inventory and writes `manifest.json`, which lists
    /// itself along with every other file.
    pub fn write(mut self, out: &mut OutputDir) -> Result<(), CliError> {
        self.finished_unix = unix_now();
        let mut files = out.files().to_vec();
        if !files.iter().any(|f| f == MANIFEST_FILE) {
            files.push(MANIFEST_FILE.to_string());
        }
        self.files = files;
        let text = serde_json::to_string_pretty(&self)
            .map_err(|e| CliError::Config(format!("manifest serialization: {e}")))?;
        out.write(MANIFEST_FILE, |w| writeln!(w, "{text}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_text() {
        for v in [
            0.1,
            1.0 / 3.0,
            -2.5e-300,
            6.02214076e23,
            f64::MIN_POSITIVE,
            0.0,
        ] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn field_csv_has_header_and_rows() {
        let grid = SpaceGrid::new(2, 3).unwrap();
        let time = TimeGrid::new(1, 0.5).unwrap();
        let f = ScalarTimeField::constant(grid.len(), 1, 2.0);
        let mut buf = Vec::new();
        write_field(&mut buf, &f, &grid, &time, "m").unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x1,x2,m");
        assert_eq!(lines.len(), 1 + 2 * 9);
        assert!(lines.iter().skip(1).all(|l| l.split(',').count() == 4));
    }

    #[test]
    fn policy_columns_follow_storage_order() {
        assert_eq!(policy_columns(1), ["q1_left", "q1_right"]);
        assert_eq!(
            policy_columns(2),
            ["q1_left", "q1_right", "q2_left", "q2_right"]
        );
    }
}
