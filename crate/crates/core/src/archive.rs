//! On-disk trace archives.
//!
//! A run directory holds
//!
//! - `vehicles.csv`: one row per step, per-vehicle state, reference, clock,
//!   nominal and rectified snap, tilt and thrust ratio;
//! - `pairs.csv`: one row per step and pair with `h` and the rectified slack;
//! - `audit.json`: audit, safety summary and every retune attempt;
//! - `config.json`: the exact configuration that produced the run;
//! - `metadata.json`: shape of the tables.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a table
//! read back reproduces the recorded values bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flatness::{self, AuditReport, FlatSample};
use crate::lindyn::{IntegratorState, Vec3};
use crate::pipeline::{Attempt, RunStatus, SafetySummary, ScenarioConfig, ScenarioOutcome, SimulationTrace};

pub const VEHICLES_FILE: &str = "vehicles.csv";
pub const PAIRS_FILE: &str = "pairs.csv";
pub const AUDIT_FILE: &str = "audit.json";
pub const CONFIG_FILE: &str = "config.json";
pub const METADATA_FILE: &str = "metadata.json";

const FORMAT_VERSION: u32 = 1;

const VEHICLE_COLUMNS: [&str; 25] = [
    "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az", "jx", "jy", "jz", "ref_x", "ref_y", "ref_z", "s",
    "s_dot", "vhat_x", "vhat_y", "vhat_z", "vstar_x", "vstar_y", "vstar_z", "tilt_deg", "thrust_ratio",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub format_version: u32,
    pub scenario: String,
    pub vehicles: usize,
    pub pairs: usize,
    pub steps: usize,
    pub dt: f64,
    pub k_s: f64,
}

/// Contents of `audit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub k_s: f64,
    pub audit: AuditReport,
    pub safety: SafetySummary,
    pub max_kkt_residual: f64,
    pub attempts: Vec<Attempt>,
}

impl RunSummary {
    pub fn from_outcome(outcome: &ScenarioOutcome) -> Self {
        Self {
            status: outcome.status,
            k_s: outcome.trace.k_s,
            audit: outcome.audit.clone(),
            safety: outcome.safety,
            max_kkt_residual: outcome.trace.max_kkt_residual(),
            attempts: outcome.attempts.clone(),
        }
    }
}

/// One row of `pairs.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub t: f64,
    pub i: usize,
    pub j: usize,
    pub h: f64,
    pub slack: f64,
}

/// A run read back from disk.
#[derive(Debug, Clone)]
pub struct StoredRun {
    pub config: ScenarioConfig,
    pub metadata: Metadata,
    pub summary: RunSummary,
    pub times: Vec<f64>,
    /// Flat samples `(q, v*)` per vehicle.
    pub flats: Vec<Vec<FlatSample>>,
    pub pairs: Vec<PairRow>,
}

impl StoredRun {
    /// Re-runs the actuator audit on the stored samples.
    pub fn reaudit(&self, limits: &flatness::ActuatorLimits) -> AuditReport {
        match flatness::audit_fleet(&self.flats, self.metadata.dt, &self.config.vehicle, limits) {
            Ok(r) => r,
            Err(e) => AuditReport::singular(limits, &e, self.metadata.dt),
        }
    }

    /// Smallest stored `h`, with its time and pair.
    pub fn min_h(&self) -> Option<PairRow> {
        self.pairs.iter().copied().min_by(|a, b| a.h.total_cmp(&b.h))
    }
}

fn corrupt(path: &Path, reason: impl std::fmt::Display) -> Error {
    Error::InvalidParameter {
        field: path.display().to_string(),
        reason: reason.to_string(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn vehicle_header(m: usize) -> Vec<String> {
    let mut header = vec!["t".to_string()];
    for k in 0..m {
        header.extend(VEHICLE_COLUMNS.iter().map(|c| format!("q{k}_{c}")));
    }
    header
}

/// Writes the per-vehicle table.
pub fn write_vehicles_csv(path: &Path, trace: &SimulationTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| corrupt(path, e))?;
    w.write_record(vehicle_header(trace.vehicle_count())).map_err(|e| corrupt(path, e))?;
    for step in &trace.steps {
        let mut row = vec![step.t.to_string()];
        for v in &step.vehicles {
            let q = &v.state;
            for vec in [q.r, q.dr, q.ddr, q.dddr, v.reference.r] {
                row.extend(vec.iter().map(|x| x.to_string()));
            }
            row.push(v.s.to_string());
            row.push(v.s_dot.to_string());
            row.extend(v.nominal.iter().map(|x| x.to_string()));
            row.extend(v.rectified.iter().map(|x| x.to_string()));
            row.push(fmt_opt(v.tilt_deg));
            row.push(fmt_opt(v.thrust_ratio));
        }
        w.write_record(&row).map_err(|e| corrupt(path, e))?;
    }
    w.flush().map_err(|e| corrupt(path, e))?;
    Ok(())
}

/// Writes the per-pair table.
pub fn write_pairs_csv(path: &Path, trace: &SimulationTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| corrupt(path, e))?;
    w.write_record(["t", "i", "j", "h", "slack"]).map_err(|e| corrupt(path, e))?;
    for step in &trace.steps {
        for p in &step.pairs {
            w.write_record([
                step.t.to_string(),
                p.i.to_string(),
                p.j.to_string(),
                p.h.to_string(),
                p.slack.to_string(),
            ])
            .map_err(|e| corrupt(path, e))?;
        }
    }
    w.flush().map_err(|e| corrupt(path, e))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| corrupt(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| corrupt(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| corrupt(path, e))?;
    serde_json::from_str(&text).map_err(|e| corrupt(path, e))
}

/// Writes every archive file into `dir`, creating it if needed.
pub fn write_archive(dir: &Path, config: &ScenarioConfig, outcome: &ScenarioOutcome) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| corrupt(dir, e))?;
    let trace = &outcome.trace;
    let m = trace.vehicle_count();
    let metadata = Metadata {
        format_version: FORMAT_VERSION,
        scenario: config.name.clone(),
        vehicles: m,
        pairs: m * m.saturating_sub(1) / 2,
        steps: trace.steps.len(),
        dt: trace.dt,
        k_s: trace.k_s,
    };
    let files: Vec<PathBuf> = [VEHICLES_FILE, PAIRS_FILE, AUDIT_FILE, CONFIG_FILE, METADATA_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_vehicles_csv(&files[0], trace)?;
    write_pairs_csv(&files[1], trace)?;
    write_json(&files[2], &RunSummary::from_outcome(outcome))?;
    write_json(&files[3], config)?;
    write_json(&files[4], &metadata)?;
    Ok(files)
}

fn parse_f64(path: &Path, line: usize, field: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>()
        .map_err(|_| corrupt(path, format!("line {line}: `{field}` is not a number: `{raw}`")))
}

/// Reads an archive written by [`write_archive`].
pub fn read_archive(dir: &Path) -> Result<StoredRun> {
    if !dir.is_dir() {
        return Err(corrupt(dir, "not a directory"));
    }
    let metadata: Metadata = read_json(&dir.join(METADATA_FILE))?;
    if metadata.format_version != FORMAT_VERSION {
        return Err(corrupt(
            &dir.join(METADATA_FILE),
            format!("unsupported format version {}", metadata.format_version),
        ));
    }
    let config: ScenarioConfig = read_json(&dir.join(CONFIG_FILE))?;
    let summary: RunSummary = read_json(&dir.join(AUDIT_FILE))?;
    let m = metadata.vehicles;

    let path = dir.join(VEHICLES_FILE);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| corrupt(&path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| corrupt(&path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != vehicle_header(m) {
        return Err(corrupt(&path, format!("header does not describe {m} vehicles")));
    }
    let mut times = Vec::new();
    let mut flats = vec![Vec::new(); m];
    for (n, record) in reader.records().enumerate() {
        let line = n + 2;
        let record = record.map_err(|e| corrupt(&path, e))?;
        let t = parse_f64(&path, line, "t", &record[0])?;
        times.push(t);
        for (k, flat) in flats.iter_mut().enumerate() {
            let base = 1 + k * VEHICLE_COLUMNS.len();
            let col = |offset: usize| parse_f64(&path, line, &header[base + offset], &record[base + offset]);
            let vec3 = |offset: usize| -> Result<Vec3> { Ok(Vec3::new(col(offset)?, col(offset + 1)?, col(offset + 2)?)) };
            let q = IntegratorState::new(vec3(0)?, vec3(3)?, vec3(6)?, vec3(9)?);
            let v_star = vec3(20)?;
            flat.push(FlatSample::from_state(&q, &v_star));
        }
    }
    if times.len() != metadata.steps {
        return Err(corrupt(
            &path,
            format!("{} rows, metadata declares {} steps", times.len(), metadata.steps),
        ));
    }
    for (k, t) in times.iter().enumerate() {
        let expected = k as f64 * metadata.dt;
        if (t - expected).abs() > 1e-9 * expected.abs().max(1.0) {
            return Err(corrupt(&path, format!("row {k} has t = {t}, expected {expected}")));
        }
    }

    let path = dir.join(PAIRS_FILE);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| corrupt(&path, e))?;
    let mut pairs = Vec::new();
    for row in reader.deserialize::<PairRow>() {
        let row = row.map_err(|e| corrupt(&path, e))?;
        if row.i >= row.j || row.j >= m {
            return Err(corrupt(&path, format!("invalid pair ({}, {})", row.i, row.j)));
        }
        pairs.push(row);
    }
    if pairs.len() != metadata.steps * metadata.pairs {
        return Err(corrupt(
            &path,
            format!(
                "{} rows, expected {} steps x {} pairs",
                pairs.len(),
                metadata.steps,
                metadata.pairs
            ),
        ));
    }

    Ok(StoredRun {
        config,
        metadata,
        summary,
        times,
        flats,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::run_scenario;
    use crate::scenario;

    #[test]
    fn round_trip_preserves_samples() {
        let mut config = scenario::two_quad_pass();
        config.duration = 1.0;
        let outcome = run_scenario(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_archive(dir.path(), &config, &outcome).unwrap();
        let stored = read_archive(dir.path()).unwrap();
        assert_eq!(stored.config, config);
        assert_eq!(stored.times.len(), outcome.trace.steps.len());
        assert_eq!(stored.flats[1], outcome.trace.flat_trace(1));
        assert_eq!(stored.pairs.len(), outcome.trace.steps.len());
        assert_eq!(stored.reaudit(&config.limits), outcome.audit);
        assert_eq!(stored.summary.audit, outcome.audit);
    }

    #[test]
    fn corrupt_archive_is_rejected() {
        let mut config = scenario::two_quad_pass();
        config.duration = 0.2;
        let outcome = run_scenario(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_archive(dir.path(), &config, &outcome).unwrap();
        let path = dir.path().join(VEHICLES_FILE);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replacen("0.02,", "oops,", 1)).unwrap();
        assert!(read_archive(dir.path()).is_err());
        assert!(read_archive(&dir.path().join("missing")).is_err());
    }
}
