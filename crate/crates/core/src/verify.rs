//! Randomized verification harness.
//!
//! Three families of trials, each drawn from its own seeded stream:
//!
//! - `feasibility`: random non-colliding teams of 2 to 6 vehicles; the
//!   certificate set must admit a strictly feasible snap and the QP must
//!   solve without relaxing anything. One extra trial with two overlapping
//!   vehicles is injected and must be rejected on its precondition.
//! - `lie_derivative`: random pair states under random constant snaps; the
//!   closed-form `h''''` and `h'` must match finite differences of `h` along
//!   the exact trajectory.
//! - `qp_oracle`: random small QPs; the solver must agree with brute-force
//!   active-set enumeration and meet the KKT tolerance.
//!
//! Every trial has its own generator keyed by `(seed, family, trial)`, so a
//! failing instance can be replayed in isolation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use serde_json::{json, Value};

use crate::barrier::{self, BarrierConstraint, SafetyGeometry, Shape};
use crate::error::Error;
use crate::lindyn::{self, GainRow, IntegratorState, Vec3};
use crate::oracle;
use crate::qp::{self, Halfspace, RectificationProblem, KKT_TOL};

/// Relative tolerance of the finite-difference comparison.
pub const LIE_TOL: f64 = 1e-3;
/// Agreement required between the solver and the brute-force oracle.
pub const ORACLE_TOL: f64 = 1e-6;
/// QP instances whose optimal active set is worse conditioned than this are
/// rejected rather than scored.
pub const MAX_CONDITION: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Feasibility,
    LieDerivative,
    QpOracle,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Feasibility, Family::LieDerivative, Family::QpOracle];

    pub fn name(self) -> &'static str {
        match self {
            Family::Feasibility => "feasibility",
            Family::LieDerivative => "lie_derivative",
            Family::QpOracle => "qp_oracle",
        }
    }

    fn stream(self) -> u64 {
        self as u64 + 1
    }
}

/// Generator for one trial.
pub fn trial_rng(seed: u64, family: Family, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((family.stream() << 32) | trial);
    rng
}

/// Outcome of a single trial.
#[derive(Debug, Clone, PartialEq)]
pub enum TrialOutcome {
    /// Passed, with the family's figure of merit.
    Pass(f64),
    /// The instance violates a precondition and was not evaluated.
    Rejected(String),
    Fail { reason: String, instance: Value },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub trial: u64,
    pub reason: String,
    pub instance: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyReport {
    pub family: Family,
    pub trials: usize,
    pub passed: usize,
    pub rejected: usize,
    pub failed: usize,
    /// Worst figure of merit over passing trials: smallest normalized
    /// witness slack for feasibility, largest relative error otherwise.
    pub worst: f64,
    pub first_failure: Option<Counterexample>,
}

impl FamilyReport {
    fn new(family: Family) -> Self {
        let worst = match family {
            Family::Feasibility => f64::INFINITY,
            _ => 0.0,
        };
        Self {
            family,
            trials: 0,
            passed: 0,
            rejected: 0,
            failed: 0,
            worst,
            first_failure: None,
        }
    }

    fn record(&mut self, trial: u64, outcome: TrialOutcome) {
        self.trials += 1;
        match outcome {
            TrialOutcome::Pass(merit) => {
                self.passed += 1;
                self.worst = match self.family {
                    Family::Feasibility => self.worst.min(merit),
                    _ => self.worst.max(merit),
                };
            }
            TrialOutcome::Rejected(_) => self.rejected += 1,
            TrialOutcome::Fail { reason, instance } => {
                self.failed += 1;
                if self.first_failure.is_none() {
                    self.first_failure = Some(Counterexample {
                        trial,
                        reason,
                        instance,
                    });
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub trials: usize,
    pub families: Vec<FamilyReport>,
    /// Injected precondition violations that were correctly rejected.
    pub injected_rejected: usize,
    pub injected: usize,
    pub pass: bool,
}

impl VerifyReport {
    /// Plain-text rendering; identical reports render to identical bytes.
    pub fn render(&self) -> String {
        let mut out = format!("verify seed={} trials={}\n", self.seed, self.trials);
        for f in &self.families {
            let merit = match f.family {
                Family::Feasibility => format!("min witness slack {:.3e}", f.worst),
                Family::LieDerivative => format!("max relative error {:.3e}", f.worst),
                Family::QpOracle => format!("max deviation {:.3e}", f.worst),
            };
            out += &format!(
                "{:<15} {:>6}/{:<6} pass  {} rejected  {} failed  {}\n",
                f.family.name(),
                f.passed,
                f.trials - f.rejected,
                f.rejected,
                f.failed,
                merit
            );
            if let Some(c) = &f.first_failure {
                out += &format!("  counterexample trial {}: {}\n  {}\n", c.trial, c.reason, c.instance);
            }
        }
        out += &format!(
            "injected collisions rejected: {}/{}\n",
            self.injected_rejected, self.injected
        );
        out += if self.pass { "result: PASS\n" } else { "result: FAIL\n" };
        out
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, sigma: f64) -> Vec3 {
    Vec3::new(normal(rng) * sigma, normal(rng) * sigma, normal(rng) * sigma)
}

fn random_state(rng: &mut ChaCha8Rng, spread: f64) -> IntegratorState {
    IntegratorState::new(
        Vec3::new(
            rng.gen_range(-spread..spread),
            rng.gen_range(-spread..spread),
            rng.gen_range(-spread..spread),
        ),
        gaussian_vec(rng, 1.0),
        gaussian_vec(rng, 2.0),
        gaussian_vec(rng, 4.0),
    )
}

fn random_geometry(rng: &mut ChaCha8Rng) -> SafetyGeometry {
    let shape = match rng.gen_range(0..3) {
        0 | 1 => Shape::Rectangle,
        _ => Shape::Cylinder {
            n: [4, 6][rng.gen_range(0..2)],
        },
    };
    SafetyGeometry {
        d_s: rng.gen_range(0.1..0.4),
        c: rng.gen_range(1.0..3.0),
        shape,
    }
}

fn random_poles(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let mut p = [0.0; 4];
    for slot in &mut p {
        *slot = rng.gen_range(0.5..6.0);
    }
    p
}

fn states_json(states: &[IntegratorState]) -> Value {
    serde_json::to_value(states).unwrap_or(Value::Null)
}

/// True when every pair is strictly outside the safety set boundary.
pub fn non_colliding(states: &[IntegratorState], geom: &SafetyGeometry) -> bool {
    (0..states.len()).all(|i| (i + 1..states.len()).all(|j| barrier::barrier_value(&states[i], &states[j], geom) > 0.0))
}

/// Feasibility of the certificate set for one team.
pub fn feasibility_instance(states: &[IntegratorState], geom: &SafetyGeometry, gains: &GainRow) -> TrialOutcome {
    if !non_colliding(states, geom) {
        return TrialOutcome::Rejected("team starts in collision".into());
    }
    let instance = || json!({ "states": states_json(states), "geometry": geom, "poles": gains.poles });
    let constraints = match barrier::assemble_certificates(states, geom, gains) {
        Ok(c) => c,
        Err(e) => {
            return TrialOutcome::Fail {
                reason: e.to_string(),
                instance: instance(),
            }
        }
    };
    let dim = 3 * states.len();
    let witness = match qp::feasibility_probe(&constraints, dim) {
        Ok(w) => w,
        Err(e) => {
            return TrialOutcome::Fail {
                reason: format!("no strictly feasible snap: {e}"),
                instance: instance(),
            }
        }
    };
    if constraints.iter().any(|c| c.slack(&witness.v) <= 0.0) {
        return TrialOutcome::Fail {
            reason: "witness violates a certificate".into(),
            instance: instance(),
        };
    }
    // The rectifier itself must also succeed from an arbitrary nominal.
    let problem = RectificationProblem {
        nominal: witness.v.iter().map(|x| -x).collect(),
        constraints,
        snap_bounds: None,
    };
    match qp::solve(&problem) {
        Ok(sol) if sol.kkt_residual < KKT_TOL => TrialOutcome::Pass(witness.min_normalized_slack),
        Ok(sol) => TrialOutcome::Fail {
            reason: format!("KKT residual {:.3e}", sol.kkt_residual),
            instance: instance(),
        },
        Err(e) => TrialOutcome::Fail {
            reason: format!("rectifier failed: {e}"),
            instance: instance(),
        },
    }
}

fn feasibility_trial(seed: u64, trial: u64) -> TrialOutcome {
    let mut rng = trial_rng(seed, Family::Feasibility, trial);
    let m = rng.gen_range(2..=6);
    let geom = random_geometry(&mut rng);
    let gains = match lindyn::place_poles(random_poles(&mut rng)) {
        Ok(g) => g,
        Err(e) => return TrialOutcome::Rejected(e.to_string()),
    };
    // Every fourth team is packed around the safety distance.
    let clustered = trial % 4 == 3;
    let mut spread = if clustered { 0.8 * geom.d_s } else { 1.5 };
    for attempt in 1.. {
        let states: Vec<IntegratorState> = (0..m).map(|_| random_state(&mut rng, spread)).collect();
        if non_colliding(&states, &geom) {
            return feasibility_instance(&states, &geom, &gains);
        }
        if attempt % 200 == 0 {
            spread *= 1.1;
        }
    }
    unreachable!()
}

/// A team whose first two vehicles overlap.
pub fn injected_collision(seed: u64) -> (Vec<IntegratorState>, SafetyGeometry, GainRow) {
    let mut rng = trial_rng(seed, Family::Feasibility, u32::MAX as u64);
    let geom = SafetyGeometry::default();
    let mut states: Vec<IntegratorState> = (0..3).map(|k| IntegratorState::at_rest(Vec3::new(k as f64, 0.0, 0.0))).collect();
    states[1] = random_state(&mut rng, 0.05);
    states[0] = IntegratorState::at_rest(states[1].r + Vec3::new(0.1 * geom.d_s, 0.0, 0.0));
    (states, geom, GainRow::default())
}

/// Closed-form `h''''` and `h'` against finite differences along the exact
/// constant-snap trajectory. Returns the larger relative error.
pub fn lie_derivative_instance(
    qi: &IntegratorState,
    qj: &IntegratorState,
    vi: &Vec3,
    vj: &Vec3,
    geom: &SafetyGeometry,
    gains: &GainRow,
) -> TrialOutcome {
    let instance = || json!({ "qi": qi, "qj": qj, "vi": vi, "vj": vj, "geometry": geom, "poles": gains.poles });
    if qi.r == qj.r {
        return TrialOutcome::Rejected("coincident positions".into());
    }
    let states = [*qi, *qj];
    let row: BarrierConstraint = match barrier::constraint_row(&states, 0, 1, geom, gains) {
        Ok(r) => r,
        Err(e) => return TrialOutcome::Rejected(e.to_string()),
    };
    let mut v = vi.as_slice().to_vec();
    v.extend_from_slice(vj.as_slice());
    // h'''' = -A v + b - K eta.
    let reconstructed = -barrier::dot(&row.row, &v) + row.bound - gains.dot(row.eta.to_array());
    let direct = barrier::fourth_derivative(qi, qj, vi, vj, geom);
    let h_at = |t: f64| {
        let a = oracle::propagate_exact(qi, vi, t);
        let b = oracle::propagate_exact(qj, vj, t);
        barrier::barrier_value(&a, &b, geom)
    };
    let step = 0.04;
    let fd4 = oracle::fourth_derivative_richardson(h_at, step);
    let fd1 = oracle::first_derivative_fd(h_at, 1e-4);
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-9);
    let err = rel(reconstructed, fd4).max(rel(direct, fd4)).max(rel(row.eta.dh, fd1));
    if err <= LIE_TOL {
        TrialOutcome::Pass(err)
    } else {
        TrialOutcome::Fail {
            reason: format!(
                "h'''' analytic {reconstructed:.9e} vs finite difference {fd4:.9e}; h' {:.9e} vs {fd1:.9e}",
                row.eta.dh
            ),
            instance: instance(),
        }
    }
}

fn lie_trial(seed: u64, trial: u64) -> TrialOutcome {
    let mut rng = trial_rng(seed, Family::LieDerivative, trial);
    let geom = random_geometry(&mut rng);
    let gains = match lindyn::place_poles(random_poles(&mut rng)) {
        Ok(g) => g,
        Err(e) => return TrialOutcome::Rejected(e.to_string()),
    };
    let qi = random_state(&mut rng, 1.0);
    let qj = random_state(&mut rng, 1.0);
    let vi = gaussian_vec(&mut rng, 5.0);
    let vj = gaussian_vec(&mut rng, 5.0);
    lie_derivative_instance(&qi, &qj, &vi, &vj, &geom, &gains)
}

/// Solver against the brute-force oracle on `min |x - x0|^2, A x <= b`.
pub fn qp_instance(x0: &[f64], rows: &[Halfspace]) -> TrialOutcome {
    let instance = || json!({ "x0": x0, "rows": rows });
    let pairs: Vec<(Vec<f64>, f64)> = rows.iter().map(|r| (r.a.clone(), r.b)).collect();
    let reference = oracle::brute_force_projection(x0, &pairs, 1e-10);
    if let Some(r) = &reference {
        let cond = gram_condition(rows, &r.active);
        if cond > MAX_CONDITION {
            return TrialOutcome::Rejected(format!("active set Gram condition number {cond:.1e}"));
        }
    }
    let n = x0.len();
    let solved: Result<(Vec<f64>, f64), Error> = if n % 3 == 0 {
        let problem = RectificationProblem {
            nominal: x0.to_vec(),
            constraints: rows
                .iter()
                .enumerate()
                .map(|(k, r)| BarrierConstraint {
                    i: k,
                    j: k + 1,
                    row: r.a.clone(),
                    bound: r.b,
                    eta: barrier::EtaVector {
                        h: 0.0,
                        dh: 0.0,
                        ddh: 0.0,
                        dddh: 0.0,
                    },
                })
                .collect(),
            snap_bounds: None,
        };
        qp::solve(&problem).map(|s| (s.v, s.kkt_residual))
    } else {
        qp::project(x0, rows)
            .map(|p| {
                let kkt = qp::kkt_residual(x0, rows, &p);
                (p.x, kkt)
            })
            .map_err(|_| Error::Infeasible)
    };
    match (reference, solved) {
        (None, Err(_)) => TrialOutcome::Pass(0.0),
        (Some(r), Ok((x, kkt))) => {
            let dev = r.x.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = x0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            if dev <= ORACLE_TOL * scale && kkt < KKT_TOL {
                TrialOutcome::Pass(dev)
            } else {
                TrialOutcome::Fail {
                    reason: format!("deviation {dev:.3e}, KKT residual {kkt:.3e}"),
                    instance: instance(),
                }
            }
        }
        (None, Ok(_)) => TrialOutcome::Fail {
            reason: "solver returned a point, oracle found the program infeasible".into(),
            instance: instance(),
        },
        (Some(_), Err(e)) => TrialOutcome::Fail {
            reason: format!("oracle found a solution, solver failed: {e}"),
            instance: instance(),
        },
    }
}

/// Condition number of `N^T N` for the rows in `active`.
fn gram_condition(rows: &[Halfspace], active: &[usize]) -> f64 {
    if active.is_empty() {
        return 1.0;
    }
    let n = rows[active[0]].a.len();
    let cols = nalgebra::DMatrix::from_fn(n, active.len(), |r, c| rows[active[c]].a[r]);
    let sv = (cols.transpose() * &cols).singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Random program with `n <= 9` variables and `k <= 5` rows.
pub fn random_qp(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<Halfspace>) {
    let n = rng.gen_range(1..=9);
    let k = rng.gen_range(1..=5);
    let x0: Vec<f64> = (0..n).map(|_| 2.0 * normal(rng)).collect();
    let rows = (0..k)
        .map(|_| Halfspace {
            a: (0..n).map(|_| normal(rng)).collect(),
            b: normal(rng),
        })
        .collect();
    (x0, rows)
}

fn qp_trial(seed: u64, trial: u64) -> TrialOutcome {
    let mut rng = trial_rng(seed, Family::QpOracle, trial);
    let (x0, rows) = random_qp(&mut rng);
    qp_instance(&x0, &rows)
}

/// Runs one trial of a family.
pub fn run_trial(seed: u64, family: Family, trial: u64) -> TrialOutcome {
    match family {
        Family::Feasibility => feasibility_trial(seed, trial),
        Family::LieDerivative => lie_trial(seed, trial),
        Family::QpOracle => qp_trial(seed, trial),
    }
}

/// Runs `trials` trials of every family plus the injected collision.
pub fn run(seed: u64, trials: usize) -> VerifyReport {
    let families: Vec<FamilyReport> = Family::ALL
        .iter()
        .map(|&family| {
            let mut report = FamilyReport::new(family);
            for trial in 0..trials as u64 {
                report.record(trial, run_trial(seed, family, trial));
            }
            report
        })
        .collect();
    let (states, geom, gains) = injected_collision(seed);
    let injected_rejected = usize::from(matches!(
        feasibility_instance(&states, &geom, &gains),
        TrialOutcome::Rejected(_)
    ));
    let pass = trials > 0 && injected_rejected == 1 && families.iter().all(|f| f.failed == 0 && f.passed > 0);
    VerifyReport {
        seed,
        trials,
        families,
        injected_rejected,
        injected: 1,
        pass,
    }
}
