//! Command implementations behind the `sbcert` binary.
//!
//! Exit codes: 0 success, 1 property or audit failure, 2 input error,
//! 3 safety violation.

use std::io::Write;
use std::path::Path;

use serde_json::json;

use crate::archive::{self, RunSummary};
use crate::error::Error;
use crate::pipeline::{run_scenario, RunStatus};
use crate::scenario;
use crate::verify;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Ok = 0,
    PropertyFailure = 1,
    InputError = 2,
    SafetyViolation = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

fn input_error(err: &mut dyn Write, e: &Error) -> ExitStatus {
    let _ = writeln!(err, "error: {e}");
    ExitStatus::InputError
}

/// Runs a scenario and writes its archive to `out_dir`.
pub fn cmd_simulate(
    scenario_ref: &str,
    out_dir: &Path,
    overrides: &[String],
    dt: Option<f64>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> ExitStatus {
    let mut all = Vec::new();
    if let Some(dt) = dt {
        all.push(format!("dt={dt}"));
    }
    all.extend_from_slice(overrides);
    let config = match scenario::load(scenario_ref).and_then(|c| scenario::apply_overrides(&c, &all)) {
        Ok(c) => c,
        Err(e) => return input_error(err, &e),
    };
    let outcome = match run_scenario(&config) {
        Ok(o) => o,
        Err(fault) => {
            let _ = writeln!(err, "error: {fault}");
            let dump = out_dir.join("fault_trace.json");
            let written = std::fs::create_dir_all(out_dir)
                .map_err(|e| e.to_string())
                .and_then(|_| serde_json::to_string(&fault.trace).map_err(|e| e.to_string()))
                .and_then(|text| std::fs::write(&dump, text).map_err(|e| e.to_string()));
            match written {
                Ok(()) => {
                    let _ = writeln!(err, "trace up to the fault written to {}", dump.display());
                }
                Err(e) => {
                    let _ = writeln!(err, "could not write trace dump: {e}");
                }
            }
            return ExitStatus::PropertyFailure;
        }
    };
    if let Err(e) = archive::write_archive(out_dir, &config, &outcome) {
        return input_error(err, &e);
    }
    let _ = write_summary(out, &config.name, out_dir, &RunSummary::from_outcome(&outcome));
    match outcome.status {
        RunStatus::Ok => ExitStatus::Ok,
        RunStatus::InfeasibleUnderLimits => {
            let failing = outcome.audit.failing_metrics().join(", ");
            let _ = writeln!(err, "audit failed: {failing} exceeds the actuator limits");
            ExitStatus::PropertyFailure
        }
        RunStatus::SafetyViolation => {
            if let Some(v) = outcome.safety.first_violation {
                let _ = writeln!(
                    err,
                    "safety violation: step {} (t = {:.3} s), pair ({}, {}), h = {:.6e}",
                    v.step,
                    v.step as f64 * config.dt,
                    v.i,
                    v.j,
                    v.h
                );
            }
            ExitStatus::SafetyViolation
        }
    }
}

fn write_summary(out: &mut dyn Write, name: &str, dir: &Path, s: &RunSummary) -> std::io::Result<()> {
    writeln!(out, "scenario: {name}")?;
    for (k, a) in s.attempts.iter().enumerate() {
        writeln!(
            out,
            "attempt {k}: k_s = {}  max tilt {:.2} deg  max thrust ratio {:.3}  min h {:.6e}  audit {}",
            a.k_s,
            a.audit.max_tilt_deg,
            a.audit.max_thrust_ratio,
            a.safety.min_h,
            if a.audit.pass { "pass" } else { "fail" }
        )?;
    }
    writeln!(out, "status: {}", serde_json::to_value(s.status).unwrap_or_default().as_str().unwrap_or("?"))?;
    writeln!(out, "max KKT residual: {:.3e}", s.max_kkt_residual)?;
    writeln!(out, "archive: {}", dir.display())
}

/// Re-audits a stored archive, optionally under different limits.
pub fn cmd_audit(dir: &Path, overrides: &[String], as_json: bool, out: &mut dyn Write, err: &mut dyn Write) -> ExitStatus {
    let stored = match archive::read_archive(dir) {
        Ok(s) => s,
        Err(e) => return input_error(err, &e),
    };
    let config = match scenario::apply_overrides(&stored.config, overrides) {
        Ok(c) => c,
        Err(e) => return input_error(err, &e),
    };
    let report = stored.reaudit(&config.limits);
    let min_h = stored.min_h();
    let matches_recorded = config.limits != stored.config.limits || report == stored.summary.audit;
    if as_json {
        let doc = json!({
            "audit": report,
            "min_h": min_h.map(|p| p.h),
            "min_h_time": min_h.map(|p| p.t),
            "min_h_pair": min_h.map(|p| [p.i, p.j]),
            "matches_recorded": matches_recorded,
            "failing_metrics": report.failing_metrics(),
        });
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&doc).unwrap_or_default());
    } else {
        let _ = writeln!(
            out,
            "max tilt: {:.2} deg at t = {:.2} s (vehicle {})  limit {:.2} deg",
            report.max_tilt_deg, report.max_tilt_time, report.max_tilt_vehicle, report.limits.max_tilt_deg
        );
        let _ = writeln!(
            out,
            "max thrust ratio: {:.3} at t = {:.2} s (vehicle {})  limit {:.3}",
            report.max_thrust_ratio, report.max_thrust_time, report.max_thrust_vehicle, report.limits.max_thrust_ratio
        );
        match min_h {
            Some(p) => {
                let _ = writeln!(out, "min h: {:.6e} at t = {:.2} s, pair ({}, {})", p.h, p.t, p.i, p.j);
            }
            None => {
                let _ = writeln!(out, "min h: n/a (single vehicle)");
            }
        }
        if let Some(s) = &report.singularity {
            let _ = writeln!(out, "singular sample: vehicle {} at t = {:.2} s: {}", s.vehicle, s.time, s.reason);
        }
        let _ = writeln!(out, "audit: {}", if report.pass { "pass" } else { "fail" });
    }
    if !matches_recorded {
        let _ = writeln!(err, "warning: re-audit differs from the values recorded at simulate time");
    }
    if report.pass {
        ExitStatus::Ok
    } else {
        let _ = writeln!(err, "failing metrics: {}", report.failing_metrics().join(", "));
        ExitStatus::PropertyFailure
    }
}

/// Randomized verification; see [`crate::verify`].
pub fn cmd_verify(seed: u64, trials: usize, as_json: bool, out: &mut dyn Write, err: &mut dyn Write) -> ExitStatus {
    if trials == 0 {
        let _ = writeln!(err, "error: --trials must be at least 1");
        return ExitStatus::InputError;
    }
    let report = verify::run(seed, trials);
    if as_json {
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&report).unwrap_or_default());
    } else {
        let _ = write!(out, "{}", report.render());
    }
    if report.pass {
        ExitStatus::Ok
    } else {
        ExitStatus::PropertyFailure
    }
}

pub fn cmd_list_scenarios(out: &mut dyn Write) -> ExitStatus {
    for name in scenario::BUILTIN_NAMES {
        let c = scenario::builtin(name).expect("built-in exists");
        let _ = writeln!(
            out,
            "{name:<20} {} vehicles, {} s, k_s = {}",
            c.vehicle_count(),
            c.duration,
            c.k_s
        );
    }
    ExitStatus::Ok
}
