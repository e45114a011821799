//! CSV and JSON writers for run outputs.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;

use super::{ExperimentConfig, RunOutput, SimRecord, SweepRow, Timed};
use crate::diagnostics::{MetricsSummary, RunMetrics};
use crate::error::{Error, Result};
use crate::models::StateVector;
use crate::stability::{self, EntryDeviation, GridRow};

/// Creates `dir` and checks that none of `files` exists in it unless
/// `force` is set.
pub fn prepare_dir(dir: &Path, files: &[&str], force: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    if !force {
        let existing: Vec<PathBuf> = files.iter().map(|f| dir.join(f)).filter(|p| p.exists()).collect();
        if !existing.is_empty() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                format!("refusing to overwrite {} (use --force)", existing[0].display()),
            )));
        }
    }
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:e}")).unwrap_or_default()
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn write_metrics(path: &Path, metrics: &RunMetrics) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time", "rmse_q", "rmse_p_tan", "mean_Hosc", "mean_J", "mean_abs_g", "mean_abs_gtilde"])?;
    for r in &metrics.records {
        w.write_record([
            num(r.time),
            num(r.rmse_q),
            num(r.rmse_p_tan),
            num(r.mean_hosc),
            opt(r.mean_j),
            num(r.mean_abs_g),
            num(r.mean_abs_gtilde),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn state_header(prefix: &[&str], n: usize) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    h.extend((1..=n).map(|i| format!("q{i}")));
    h.extend((1..=n).map(|i| format!("p{i}")));
    h
}

fn state_fields(z: &StateVector) -> impl Iterator<Item = String> + '_ {
    z.q.iter().chain(z.p.iter()).map(|&v| num(v))
}

pub fn write_reference(path: &Path, reference: &[Timed<StateVector>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = reference.first().map_or(0, |(_, z)| z.dim());
    w.write_record(state_header(&["time"], n))?;
    for (t, z) in reference {
        w.write_record(std::iter::once(num(*t)).chain(state_fields(z)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_observations(path: &Path, obs: &[Timed<DVector<f64>>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let m = obs.first().map_or(0, |(_, y)| y.len());
    let mut header = vec!["time".to_string()];
    header.extend((1..=m).map(|i| format!("y{i}")));
    w.write_record(header)?;
    for (t, y) in obs {
        w.write_record(std::iter::once(num(*t)).chain(y.iter().map(|&v| num(v))))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory(path: &Path, records: &[SimRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = records.first().map_or(0, |r| r.state.dim());
    let mut header = state_header(&["time"], n);
    header.extend(["energy", "hosc", "action", "abs_g", "abs_gtilde"].map(String::from));
    w.write_record(header)?;
    for r in records {
        let tail = [num(r.energy), num(r.hosc), opt(r.action), num(r.abs_g), num(r.abs_gtilde)];
        w.write_record(std::iter::once(num(r.time)).chain(state_fields(&r.state)).chain(tail))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep(path: &Path, param: &str, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        param,
        "rmse_q",
        "rmse_p_tan",
        "mean_Hosc",
        "mean_J",
        "mean_abs_g",
        "mean_abs_gtilde",
        "newton_nonconverged",
        "error",
    ])?;
    for r in rows {
        let s = r.summary;
        w.write_record([
            num(r.value),
            opt(s.map(|s| s.rmse_q)),
            opt(s.map(|s| s.rmse_p_tan)),
            opt(s.map(|s| s.mean_hosc)),
            opt(s.and_then(|s| s.mean_j)),
            opt(s.map(|s| s.mean_abs_g)),
            opt(s.map(|s| s.mean_abs_gtilde)),
            r.newton_nonconverged.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Contents of `metadata.json`.
#[derive(Debug, Serialize)]
pub struct Metadata<'a> {
    pub command: &'a str,
    pub config: &'a ExperimentConfig,
    pub seed: u64,
    pub steps_per_observation: Option<usize>,
    pub rmse_convention: &'static str,
    pub newton_nonconverged: usize,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<MetricsSummary>,
}

pub const RMSE_CONVENTION: &str = "rmse_q = |mean(q) - q_ref| / sqrt(N); rmse_p_tan uses the momentum error projected \
     onto the tangent space at q_ref, also divided by sqrt(N); recorded at forecast times before each analysis";

pub fn write_metadata(path: &Path, meta: &Metadata<'_>) -> Result<()> {
    let text = serde_json::to_string_pretty(meta)?;
    fs::write(path, text)?;
    Ok(())
}

/// Writes `metrics.csv`, `reference.csv`, `observations.csv` and
/// `metadata.json` for an assimilation run.
pub fn write_assimilation(
    dir: &Path,
    force: bool,
    cfg: &ExperimentConfig,
    truth: &super::Truth,
    out: &RunOutput,
) -> Result<()> {
    let files = ["metrics.csv", "reference.csv", "observations.csv", "metadata.json"];
    prepare_dir(dir, &files, force)?;
    write_metrics(&dir.join("metrics.csv"), &out.metrics)?;
    write_reference(&dir.join("reference.csv"), &truth.reference)?;
    write_observations(&dir.join("observations.csv"), &truth.observations)?;
    let meta = Metadata {
        command: "assimilate",
        config: cfg,
        seed: cfg.seed,
        steps_per_observation: cfg.steps_per_obs().ok(),
        rmse_convention: RMSE_CONVENTION,
        newton_nonconverged: out.newton_nonconverged,
        warnings: out.warnings.clone(),
        summary: out.summary,
    };
    write_metadata(&dir.join("metadata.json"), &meta)
}

/// `grid.csv`: one row per `(Kh², α)` with eigenvalue magnitudes in
/// decreasing order, discriminant and regime (harmonic model only).
pub fn write_grid(path: &Path, rows: &[GridRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = rows.first().map_or(0, |r| r.abs_lambda.len());
    let mut header = vec!["Kh2".to_string(), "alpha".to_string()];
    header.extend((1..=n).map(|i| format!("abs_lambda{i}")));
    header.extend(["d", "regime"].map(String::from));
    w.write_record(header)?;
    for r in rows {
        let mut rec = vec![num(r.kh2), num(r.alpha)];
        rec.extend(r.abs_lambda.iter().map(|&v| num(v)));
        rec.push(opt(r.d));
        rec.push(r.regime.map(|g| g.as_str().to_string()).unwrap_or_default());
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `bifurcation.csv`: the pair `α±(Kh²)` over the given values.
pub fn write_bifurcation(path: &Path, kh2: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["Kh2", "alpha_minus", "alpha_plus"])?;
    for &x in kh2 {
        let (lo, hi) = stability::alpha_pm(x)?;
        w.write_record([num(x), num(lo), num(hi)])?;
    }
    w.flush()?;
    Ok(())
}

/// `comparison.csv`: extracted versus printed flow-matrix entries
/// (1-based indices).
pub fn write_comparison(path: &Path, entries: &[(f64, EntryDeviation)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["alpha", "row", "col", "extracted", "printed", "abs_diff"])?;
    for (alpha, e) in entries {
        w.write_record([
            num(*alpha),
            (e.row + 1).to_string(),
            (e.col + 1).to_string(),
            num(e.extracted),
            num(e.printed),
            num(e.abs_diff),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `trajectory.csv` and `metadata.json` for a free run.
pub fn write_simulation(dir: &Path, force: bool, cfg: &ExperimentConfig, records: &[SimRecord]) -> Result<()> {
    prepare_dir(dir, &["trajectory.csv", "metadata.json"], force)?;
    write_trajectory(&dir.join("trajectory.csv"), records)?;
    let meta = Metadata {
        command: "simulate",
        config: cfg,
        seed: cfg.seed,
        steps_per_observation: None,
        rmse_convention: RMSE_CONVENTION,
        newton_nonconverged: 0,
        warnings: super::config_warnings(cfg)?,
        summary: None,
    };
    write_metadata(&dir.join("metadata.json"), &meta)
}

/// Writes `sweep.csv`, `reference.csv`, `observations.csv` and
/// `metadata.json` for a parameter sweep.
pub fn write_sweep_run(
    dir: &Path,
    force: bool,
    cfg: &ExperimentConfig,
    param: &str,
    truth: &super::Truth,
    rows: &[SweepRow],
) -> Result<()> {
    prepare_dir(dir, &["sweep.csv", "reference.csv", "observations.csv", "metadata.json"], force)?;
    write_sweep(&dir.join("sweep.csv"), param, rows)?;
    write_reference(&dir.join("reference.csv"), &truth.reference)?;
    write_observations(&dir.join("observations.csv"), &truth.observations)?;
    let meta = Metadata {
        command: "sweep",
        config: cfg,
        seed: cfg.seed,
        steps_per_observation: cfg.steps_per_obs().ok(),
        rmse_convention: RMSE_CONVENTION,
        newton_nonconverged: rows.iter().map(|r| r.newton_nonconverged).sum(),
        warnings: super::config_warnings(cfg)?,
        summary: None,
    };
    write_metadata(&dir.join("metadata.json"), &meta)
}
