//! Safe trajectory generation loop.
//!
//! Each control step:
//! 1. update each vehicle's virtual clock rate from its position error,
//! 2. evaluate the reparameterized references,
//! 3. compute the nominal tracking snap per vehicle,
//! 4. assemble the pairwise certificates and solve the rectification QP,
//! 5. integrate every vehicle with its rectified snap and advance the clocks.
//!
//! The rectified flat trace is then audited against actuator limits. With
//! retuning enabled, a failing audit reruns the scenario with a larger
//! parameterization gain.

use serde::{Deserialize, Serialize};

use crate::barrier::{self, assemble_certificates, check_initial_conditions, SafetyGeometry};
use crate::error::{Error, Result};
use crate::flatness::{self, ActuatorLimits, AuditReport, FlatSample, VehicleParams};
use crate::lindyn::{self, euler_step, place_poles, GainRow, IntegratorState, Vec3};
use crate::qp::{RectificationProblem, Rectifier, FEASIBILITY_TOL};
use crate::reference::{bezier_interp, circle_ref, eval_parameterized, ReferenceTrajectory, VirtualClock};

/// Numerical zero for the safety invariant.
pub const SAFETY_TOL: f64 = 1e-9;

/// Reference of one vehicle as written in a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    Hover {
        position: Vec3,
    },
    Circle {
        radius: f64,
        angular_rate: f64,
        phase: f64,
        z: f64,
        #[serde(default = "Vec3::zeros")]
        center: Vec3,
    },
    Bezier {
        from: Vec3,
        to: Vec3,
        duration: f64,
    },
}

impl ReferenceSpec {
    pub fn trajectory(&self) -> ReferenceTrajectory {
        match self {
            Self::Hover { position } => ReferenceTrajectory::Hover { position: *position },
            Self::Circle {
                radius,
                angular_rate,
                phase,
                z,
                center,
            } => circle_ref(*radius, *angular_rate, *phase, *z, *center),
            Self::Bezier { from, to, duration } => bezier_interp(*from, *to, *duration),
        }
    }

    /// Terminal hold point, if the reference comes to rest.
    pub fn goal(&self) -> Option<Vec3> {
        match self {
            Self::Hover { position } => Some(*position),
            Self::Circle { .. } => None,
            Self::Bezier { to, .. } => Some(*to),
        }
    }

    fn validate(&self, path: &str) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::InvalidParameter {
                field: format!("{path}.{field}"),
                reason,
            })
        };
        let finite = |v: &Vec3| v.iter().all(|x| x.is_finite());
        match self {
            Self::Hover { position } if !finite(position) => bad("position", "must be finite".into()),
            Self::Circle { radius, angular_rate, phase, z, center } => {
                if !(radius.is_finite() && *radius >= 0.0) {
                    return bad("radius", format!("must be >= 0, got {radius}"));
                }
                if !(angular_rate.is_finite() && phase.is_finite() && z.is_finite() && finite(center)) {
                    return bad("angular_rate", "circle parameters must be finite".into());
                }
                Ok(())
            }
            Self::Bezier { from, to, duration } => {
                if !(finite(from) && finite(to)) {
                    return bad("from", "end points must be finite".into());
                }
                if !(duration.is_finite() && *duration > 0.0) {
                    return bad("duration", format!("must be positive, got {duration}"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub reference: ReferenceSpec,
    /// Defaults to the reference state at `t = 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<IntegratorState>,
}

/// Outer reparameterization loop settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetunePolicy {
    pub enabled: bool,
    /// `k_s` multiplier between attempts.
    pub factor: f64,
    pub max_retries: u32,
    /// Gain used when retuning from `k_s = 0`.
    pub initial_ks: f64,
}

impl Default for RetunePolicy {
    fn default() -> Self {
        Self {
            enabled: false,
            factor: 10.0,
            max_retries: 3,
            initial_ks: 1.0,
        }
    }
}

impl RetunePolicy {
    pub fn next_ks(&self, k_s: f64) -> f64 {
        if k_s > 0.0 {
            k_s * self.factor
        } else {
            self.initial_ks
        }
    }
}

fn default_poles() -> [f64; 4] {
    lindyn::DEFAULT_POLES
}

fn default_dt() -> f64 {
    lindyn::DEFAULT_DT
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default)]
    pub geometry: SafetyGeometry,
    #[serde(default = "default_poles")]
    pub poles: [f64; 4],
    #[serde(default)]
    pub k_s: f64,
    /// Per-vehicle infinity-norm snap bound; absent means unbounded.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default)]
    pub limits: ActuatorLimits,
    #[serde(default)]
    pub retune: RetunePolicy,
}

impl ScenarioConfig {
    pub fn vehicle_count(&self) -> usize {
        self.vehicles.len()
    }

    pub fn gains(&self) -> Result<GainRow> {
        place_poles(self.poles)
    }

    pub fn step_count(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn trajectories(&self) -> Vec<ReferenceTrajectory> {
        self.vehicles.iter().map(|v| v.reference.trajectory()).collect()
    }

    pub fn initial_states(&self) -> Vec<IntegratorState> {
        self.vehicles
            .iter()
            .map(|v| {
                v.initial.unwrap_or_else(|| {
                    let d = v.reference.trajectory().eval(0.0);
                    IntegratorState::new(d[0], d[1], d[2], d[3])
                })
            })
            .collect()
    }

    /// Structural checks, then the pairwise initial-condition test.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::InvalidParameter {
                field: field.to_string(),
                reason,
            })
        };
        if self.vehicles.is_empty() {
            return bad("vehicles", "at least one vehicle is required".into());
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt", format!("must be positive, got {}", self.dt));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad("duration", format!("must be positive, got {}", self.duration));
        }
        if !(self.k_s.is_finite() && self.k_s >= 0.0) {
            return bad("k_s", format!("must be >= 0, got {}", self.k_s));
        }
        if let Some(a) = self.alpha {
            if !(a.is_finite() && a > 0.0) {
                return bad("alpha", format!("must be positive, got {a}"));
            }
        }
        if !(self.retune.factor.is_finite() && self.retune.factor > 1.0) {
            return bad("retune.factor", format!("must exceed 1, got {}", self.retune.factor));
        }
        if !(self.retune.initial_ks.is_finite() && self.retune.initial_ks > 0.0) {
            return bad("retune.initial_ks", "must be positive".into());
        }
        self.geometry.validate()?;
        self.gains()?;
        self.vehicle.validate()?;
        self.limits.validate()?;
        for (k, v) in self.vehicles.iter().enumerate() {
            v.reference.validate(&format!("vehicles[{k}].reference"))?;
            if let Some(q) = &v.initial {
                if !q.is_finite() {
                    return bad(&format!("vehicles[{k}].initial"), "must be finite".into());
                }
            }
        }
        let states = self.initial_states();
        let gains = self.gains()?;
        let report = check_initial_conditions(&states, &self.geometry, &gains);
        if let Some(p) = report.failing().next() {
            return bad(
                "vehicles",
                format!(
                    "pair ({}, {}) violates the initial conditions: y = {:?}",
                    p.i, p.j, p.y
                ),
            );
        }
        Ok(())
    }
}

/// Tracking snap `r_hat'''' - k (q - q_hat)` per axis.
pub fn nominal_control(q: &IntegratorState, reference: &FlatSample, gains: &GainRow) -> Vec3 {
    lindyn::tracking_snap(q, &reference.derivatives(), gains)
}

/// Per-vehicle data of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub state: IntegratorState,
    pub reference: FlatSample,
    pub s: f64,
    pub s_dot: f64,
    pub nominal: Vec3,
    pub rectified: Vec3,
    pub tilt_deg: Option<f64>,
    pub thrust_ratio: Option<f64>,
}

/// Per-pair data of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub i: usize,
    pub j: usize,
    pub h: f64,
    /// `b - A v*`.
    pub slack: f64,
    /// `b - A v_hat`.
    pub nominal_slack: f64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub vehicles: Vec<VehicleRecord>,
    pub pairs: Vec<PairRecord>,
    pub kkt_residual: f64,
    pub relaxed_bounds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub dt: f64,
    pub k_s: f64,
    pub steps: Vec<StepRecord>,
    pub final_states: Vec<IntegratorState>,
}

impl SimulationTrace {
    pub fn vehicle_count(&self) -> usize {
        self.final_states.len()
    }

    /// Flat samples `(q_k, v*_k)` of one vehicle.
    pub fn flat_trace(&self, vehicle: usize) -> Vec<FlatSample> {
        self.steps
            .iter()
            .map(|s| {
                let v = &s.vehicles[vehicle];
                FlatSample::from_state(&v.state, &v.rectified)
            })
            .collect()
    }

    /// Minimum barrier value over recorded steps and the final state.
    pub fn safety(&self, geom: &SafetyGeometry) -> SafetySummary {
        let mut summary = SafetySummary {
            min_h: f64::INFINITY,
            min_h_step: 0,
            min_h_pair: None,
            first_violation: None,
        };
        let mut visit = |step: usize, i: usize, j: usize, h: f64| {
            if h < summary.min_h {
                summary.min_h = h;
                summary.min_h_step = step;
                summary.min_h_pair = Some((i, j));
            }
            if h < -SAFETY_TOL && summary.first_violation.is_none() {
                summary.first_violation = Some(Violation { step, i, j, h });
            }
        };
        for s in &self.steps {
            for p in &s.pairs {
                visit(s.step, p.i, p.j, p.h);
            }
        }
        let m = self.final_states.len();
        for i in 0..m {
            for j in i + 1..m {
                let h = barrier::barrier_value(&self.final_states[i], &self.final_states[j], geom);
                visit(self.steps.len(), i, j, h);
            }
        }
        summary
    }

    pub fn max_kkt_residual(&self) -> f64 {
        self.steps.iter().map(|s| s.kkt_residual).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub step: usize,
    pub i: usize,
    pub j: usize,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetySummary {
    #[serde(with = "crate::serde_float")]
    pub min_h: f64,
    pub min_h_step: usize,
    pub min_h_pair: Option<(usize, usize)>,
    pub first_violation: Option<Violation>,
}

impl SafetySummary {
    pub fn safe(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Mutable simulation state.
#[derive(Debug, Clone)]
pub struct World {
    pub step: usize,
    pub states: Vec<IntegratorState>,
    pub clocks: Vec<VirtualClock>,
    rectifier: Rectifier,
}

impl World {
    pub fn new(states: Vec<IntegratorState>, k_s: f64) -> Self {
        let clocks = vec![VirtualClock::new(k_s); states.len()];
        Self {
            step: 0,
            states,
            clocks,
            rectifier: Rectifier::new(),
        }
    }
}

/// Static per-run context shared by every step.
#[derive(Debug, Clone)]
pub struct StepContext<'a> {
    pub refs: &'a [ReferenceTrajectory],
    pub geometry: &'a SafetyGeometry,
    pub gains: &'a GainRow,
    pub alpha: Option<f64>,
    pub dt: f64,
    pub vehicle: &'a VehicleParams,
}

/// Advances the world by one control period and returns its record.
pub fn run_step(world: &mut World, ctx: &StepContext<'_>) -> Result<StepRecord> {
    let m = world.states.len();
    let mut references = Vec::with_capacity(m);
    let mut nominal = Vec::with_capacity(3 * m);
    for k in 0..m {
        let clock = &mut world.clocks[k];
        let e_r = world.states[k].r - ctx.refs[k].eval(clock.s)[0];
        clock.s_dot = clock.rate(&e_r);
        let reference = eval_parameterized(&ctx.refs[k], clock);
        nominal.extend_from_slice(nominal_control(&world.states[k], &reference, ctx.gains).as_slice());
        references.push(reference);
    }

    let constraints = assemble_certificates(&world.states, ctx.geometry, ctx.gains)?;
    let problem = RectificationProblem {
        nominal,
        constraints,
        snap_bounds: ctx.alpha.map(|a| vec![a; m]),
    };
    let solution = world.rectifier.solve(&problem)?;

    let pairs = problem
        .constraints
        .iter()
        .enumerate()
        .map(|(k, c)| PairRecord {
            i: c.i,
            j: c.j,
            h: c.eta.h,
            slack: c.slack(&solution.v),
            nominal_slack: c.slack(&problem.nominal),
            active: solution.active.contains(&k),
        })
        .collect();

    let hover = ctx.vehicle.hover_thrust();
    let mut vehicles = Vec::with_capacity(m);
    for k in 0..m {
        let v_hat = Vec3::from_column_slice(&problem.nominal[3 * k..3 * k + 3]);
        let v_star = Vec3::from_column_slice(&solution.v[3 * k..3 * k + 3]);
        let sample = FlatSample::from_state(&world.states[k], &v_star);
        let tilt = flatness::flat_to_state(&sample, ctx.vehicle).ok().map(|s| s.tilt.to_degrees());
        let ratio = flatness::flat_to_input(&sample, ctx.vehicle).ok().map(|u| u.thrust / hover);
        vehicles.push(VehicleRecord {
            state: world.states[k],
            reference: references[k],
            s: world.clocks[k].s,
            s_dot: world.clocks[k].s_dot,
            nominal: v_hat,
            rectified: v_star,
            tilt_deg: tilt,
            thrust_ratio: ratio,
        });
    }

    let record = StepRecord {
        step: world.step,
        t: world.step as f64 * ctx.dt,
        vehicles,
        pairs,
        kkt_residual: solution.kkt_residual,
        relaxed_bounds: solution.relaxed_bounds,
    };

    for k in 0..m {
        let v = Vec3::from_column_slice(&solution.v[3 * k..3 * k + 3]);
        world.states[k] = euler_step(&world.states[k], &v, ctx.dt)?;
        world.clocks[k].s += ctx.dt * world.clocks[k].s_dot;
    }
    world.step += 1;
    Ok(record)
}

/// A run aborted by a solver or geometry fault, with the trace so far.
#[derive(Debug, Clone)]
pub struct SimulationFault {
    pub step: usize,
    pub error: Error,
    pub trace: SimulationTrace,
}

impl std::fmt::Display for SimulationFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "simulation aborted at step {}: {}", self.step, self.error)
    }
}

impl std::error::Error for SimulationFault {}

/// Simulates one configuration at gain `k_s` for its full duration.
pub fn simulate(config: &ScenarioConfig, k_s: f64) -> std::result::Result<SimulationTrace, SimulationFault> {
    let fault = |step: usize, error: Error, trace: SimulationTrace| SimulationFault { step, error, trace };
    let empty = |states: Vec<IntegratorState>| SimulationTrace {
        dt: config.dt,
        k_s,
        steps: Vec::new(),
        final_states: states,
    };
    let gains = match config.gains() {
        Ok(g) => g,
        Err(e) => return Err(fault(0, e, empty(config.initial_states()))),
    };
    let refs = config.trajectories();
    let ctx = StepContext {
        refs: &refs,
        geometry: &config.geometry,
        gains: &gains,
        alpha: config.alpha,
        dt: config.dt,
        vehicle: &config.vehicle,
    };
    let mut world = World::new(config.initial_states(), k_s);
    let n = config.step_count();
    let mut steps = Vec::with_capacity(n);
    for _ in 0..n {
        match run_step(&mut world, &ctx) {
            Ok(rec) => steps.push(rec),
            Err(e) => {
                let step = world.step;
                let mut trace = empty(world.states.clone());
                trace.steps = steps;
                return Err(fault(step, e, trace));
            }
        }
    }
    Ok(SimulationTrace {
        dt: config.dt,
        k_s,
        steps,
        final_states: world.states,
    })
}

/// Audits a trace, turning a singular sample into a failing report.
pub fn audit_trace(trace: &SimulationTrace, params: &VehicleParams, limits: &ActuatorLimits) -> AuditReport {
    let flats: Vec<Vec<FlatSample>> = (0..trace.vehicle_count()).map(|k| trace.flat_trace(k)).collect();
    match flatness::audit_fleet(&flats, trace.dt, params, limits) {
        Ok(r) => r,
        Err(e) => AuditReport::singular(limits, &e, trace.dt),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub k_s: f64,
    pub audit: AuditReport,
    pub safety: SafetySummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// Audit still failing after the retry cap (or with retuning off).
    InfeasibleUnderLimits,
    SafetyViolation,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub attempts: Vec<Attempt>,
    /// Index into `attempts` of the reported trace.
    pub chosen: usize,
    pub trace: SimulationTrace,
    pub audit: AuditReport,
    pub safety: SafetySummary,
    pub status: RunStatus,
}

fn limit_excess(a: &AuditReport) -> f64 {
    (a.max_tilt_deg / a.limits.max_tilt_deg).max(a.max_thrust_ratio / a.limits.max_thrust_ratio)
}

/// Runs the scenario, auditing and optionally retuning `k_s`.
pub fn run_scenario(config: &ScenarioConfig) -> std::result::Result<ScenarioOutcome, SimulationFault> {
    let mut k_s = config.k_s;
    let mut attempts = Vec::new();
    let mut best: Option<(usize, SimulationTrace, AuditReport, SafetySummary)> = None;
    let retries = if config.retune.enabled { config.retune.max_retries } else { 0 };
    for attempt in 0..=retries {
        let trace = simulate(config, k_s)?;
        let audit = audit_trace(&trace, &config.vehicle, &config.limits);
        let safety = trace.safety(&config.geometry);
        attempts.push(Attempt {
            k_s,
            audit: audit.clone(),
            safety,
        });
        let better = match &best {
            None => true,
            Some((_, _, a, _)) => audit.pass || limit_excess(&audit) < limit_excess(a),
        };
        let done = audit.pass || !safety.safe();
        if better || done {
            best = Some((attempt as usize, trace, audit, safety));
        }
        if done {
            break;
        }
        k_s = config.retune.next_ks(k_s);
    }
    let (chosen, trace, audit, safety) = best.expect("at least one attempt");
    let status = if !safety.safe() {
        RunStatus::SafetyViolation
    } else if audit.pass {
        RunStatus::Ok
    } else {
        RunStatus::InfeasibleUnderLimits
    };
    Ok(ScenarioOutcome {
        attempts,
        chosen,
        trace,
        audit,
        safety,
        status,
    })
}

/// Largest `|v* - v_hat|` component over all steps where every nominal
/// slack exceeds `threshold`; zero means those steps were left untouched.
pub fn untouched_violation(trace: &SimulationTrace, threshold: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for s in &trace.steps {
        if s.pairs.iter().all(|p| p.nominal_slack > threshold) {
            for v in &s.vehicles {
                worst = worst.max((v.rectified - v.nominal).abs().max());
            }
        }
    }
    worst
}

/// Minimum slack at the rectified command over the whole trace.
pub fn min_rectified_slack(trace: &SimulationTrace) -> f64 {
    trace
        .steps
        .iter()
        .flat_map(|s| s.pairs.iter().map(|p| p.slack))
        .fold(f64::INFINITY, f64::min)
}

/// Rectified slacks must not fall below `-FEASIBILITY_TOL`.
pub fn certificates_respected(trace: &SimulationTrace) -> bool {
    min_rectified_slack(trace) >= -FEASIBILITY_TOL
}
