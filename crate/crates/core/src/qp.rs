//! Minimally invasive rectification of the nominal snap.
//!
//! Solves
//!
//! ```text
//!     minimize    sum_i |v_i - v_hat_i|^2
//!     subject to  A_ij v <= b_ij        for all pairs i < j
//!                 |v_i|_inf <= alpha_i  (optional)
//! ```
//!
//! with a dual active-set method (Goldfarb-Idnani) specialised to the
//! identity Hessian. The unconstrained minimizer `v_hat` is the starting
//! point, so a nominal command that already satisfies every row is returned
//! untouched. The most violated row enters first; ties go to the lowest row
//! index, which for certificate rows is the lexicographic `(i, j)` order.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::barrier::{dot, BarrierConstraint};
use crate::error::{Error, Result};

pub const FEASIBILITY_TOL: f64 = 1e-8;
pub const KKT_TOL: f64 = 1e-6;

/// A single inequality `a . x <= b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub a: Vec<f64>,
    pub b: f64,
}

impl Halfspace {
    pub fn slack(&self, x: &[f64]) -> f64 {
        self.b - dot(&self.a, x)
    }
}

/// Result of projecting `x0` onto a polyhedron.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub x: Vec<f64>,
    /// Row indices, in the order they entered.
    pub active: Vec<usize>,
    /// Multipliers for `1/2 |x - x0|^2`, aligned with `active`.
    pub multipliers: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Infeasible;

fn violation_tol(row: &Halfspace, x: &[f64]) -> f64 {
    let scale = row.b.abs().max(row.a.iter().zip(x).map(|(a, x)| (a * x).abs()).fold(0.0, f64::max));
    1e-12 * scale.max(1.0)
}

/// Most violated row outside `active`; ties resolve to the lowest index.
fn most_violated(rows: &[Halfspace], x: &[f64], active: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, row) in rows.iter().enumerate() {
        if active.contains(&k) {
            continue;
        }
        let slack = row.slack(x);
        if slack < -violation_tol(row, x) {
            let norm = row.a.iter().map(|a| a * a).sum::<f64>().sqrt();
            let score = slack / norm;
            if best.map_or(true, |(_, s)| score < s) {
                best = Some((k, score));
            }
        }
    }
    best.map(|(k, _)| k)
}

/// `(N^T N)^{-1} N^T y` for the active normals `N`.
fn active_coordinates(rows: &[Halfspace], active: &[usize], y: &[f64]) -> Option<DVector<f64>> {
    if active.is_empty() {
        return Some(DVector::zeros(0));
    }
    let n = y.len();
    let cols = DMatrix::from_fn(n, active.len(), |r, c| rows[active[c]].a[r]);
    let gram = cols.transpose() * &cols;
    let rhs = cols.transpose() * DVector::from_column_slice(y);
    gram.cholesky().map(|ch| ch.solve(&rhs))
}

/// Euclidean projection of `x0` onto `{x : a_k . x <= b_k}`.
pub fn project(x0: &[f64], rows: &[Halfspace]) -> std::result::Result<Projection, Infeasible> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let max_iter = 64 * (rows.len() + 1);
    let mut iterations = 0;

    while let Some(p) = most_violated(rows, &x, &active) {
        let ap = &rows[p].a;
        let ap_norm = ap.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut up = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Infeasible);
            }
            let r = active_coordinates(rows, &active, ap).ok_or(Infeasible)?;
            // z = -(I - P_N) a_p
            let mut z: Vec<f64> = ap.iter().map(|a| -a).collect();
            for (c, &k) in active.iter().enumerate() {
                for (zi, ai) in z.iter_mut().zip(&rows[k].a) {
                    *zi += r[c] * ai;
                }
            }
            let z_sq: f64 = z.iter().map(|v| v * v).sum();
            let dependent = active.len() >= n || z_sq.sqrt() <= 1e-10 * ap_norm;

            let mut partial: Option<(usize, f64)> = None;
            for (c, &rc) in r.iter().enumerate() {
                if rc > 0.0 {
                    let t = u[c] / rc;
                    if partial.map_or(true, |(_, s)| t < s) {
                        partial = Some((c, t));
                    }
                }
            }
            let full = if dependent {
                None
            } else {
                Some((dot(ap, &x) - rows[p].b) / z_sq)
            };

            match (partial, full) {
                (None, None) => return Err(Infeasible),
                (Some((drop, t1)), None) => {
                    for (uc, rc) in u.iter_mut().zip(r.iter()) {
                        *uc -= t1 * rc;
                    }
                    up += t1;
                    active.remove(drop);
                    u.remove(drop);
                }
                (partial, Some(t2)) => {
                    let (t, drop) = match partial {
                        Some((c, t1)) if t1 < t2 => (t1, Some(c)),
                        _ => (t2, None),
                    };
                    for (xi, zi) in x.iter_mut().zip(&z) {
                        *xi += t * zi;
                    }
                    for (uc, rc) in u.iter_mut().zip(r.iter()) {
                        *uc -= t * rc;
                    }
                    up += t;
                    match drop {
                        None => {
                            active.push(p);
                            u.push(up);
                            break;
                        }
                        Some(c) => {
                            active.remove(c);
                            u.remove(c);
                        }
                    }
                }
            }
        }
        for uc in u.iter_mut() {
            if *uc < 0.0 {
                *uc = 0.0;
            }
        }
    }
    debug_assert_eq!(x.len(), n);
    // Re-solve on the final active set to shed accumulated rounding.
    if let Some(polished) = project_with_guess(x0, rows, &active) {
        return Ok(polished);
    }
    Ok(Projection {
        x,
        active,
        multipliers: u,
    })
}

/// Projection restricted to a guessed active set; `None` unless the guess
/// satisfies every KKT condition.
fn project_with_guess(x0: &[f64], rows: &[Halfspace], guess: &[usize]) -> Option<Projection> {
    if guess.is_empty() || guess.iter().any(|&k| k >= rows.len()) {
        return None;
    }
    // Solve N^T N u = N^T x0 - b_W.
    let n = x0.len();
    let cols = DMatrix::from_fn(n, guess.len(), |r, c| rows[guess[c]].a[r]);
    let gram = cols.transpose() * &cols;
    let b = DVector::from_iterator(guess.len(), guess.iter().map(|&k| rows[k].b));
    let rhs = cols.transpose() * DVector::from_column_slice(x0) - b;
    let chol = gram.cholesky()?;
    let u = chol.solve(&rhs);
    if u.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return None;
    }
    let shift = &cols * &u;
    let mut x: Vec<f64> = x0.iter().zip(shift.iter()).map(|(a, s)| a - s).collect();
    // One refinement step back onto the active planes; `x0 - N u` cancels
    // badly when the nominal is large.
    let residual = DVector::from_iterator(guess.len(), guess.iter().map(|&k| rows[k].slack(&x)));
    let correction = &cols * chol.solve(&residual);
    for (xi, ci) in x.iter_mut().zip(correction.iter()) {
        *xi += ci;
    }
    if rows.iter().any(|row| row.slack(&x) < -violation_tol(row, &x)) {
        return None;
    }
    Some(Projection {
        x,
        active: guess.to_vec(),
        multipliers: u.iter().copied().collect(),
    })
}

/// One instance of the rectification program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectificationProblem {
    pub nominal: Vec<f64>,
    pub constraints: Vec<BarrierConstraint>,
    /// Per-vehicle infinity-norm bound on snap.
    pub snap_bounds: Option<Vec<f64>>,
}

/// Certified solution of a [`RectificationProblem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectifiedControl {
    pub v: Vec<f64>,
    /// Indices into `constraints` of the active certificate rows.
    pub active: Vec<usize>,
    /// Multipliers of the active certificate rows (objective without 1/2).
    pub multipliers: Vec<f64>,
    pub kkt_residual: f64,
    /// Snap bounds were dropped to restore feasibility.
    pub relaxed_bounds: bool,
    /// Largest `|v_k| - alpha` over all components, when bounds exist.
    pub worst_bound_violation: f64,
}

impl RectificationProblem {
    fn validate(&self) -> Result<()> {
        let n = self.nominal.len();
        if n % 3 != 0 {
            return Err(Error::Dimension(format!("nominal length {n} is not 3m")));
        }
        crate::error::ensure_finite("nominal", &self.nominal)?;
        for c in &self.constraints {
            if c.row.len() != n {
                return Err(Error::Dimension(format!(
                    "constraint ({}, {}) has {} columns, expected {n}",
                    c.i,
                    c.j,
                    c.row.len()
                )));
            }
            crate::error::ensure_finite("constraint", &c.row)?;
            crate::error::ensure_finite("constraint", &[c.bound])?;
        }
        if let Some(bounds) = &self.snap_bounds {
            if bounds.len() != n / 3 {
                return Err(Error::Dimension(format!(
                    "{} snap bounds for {} vehicles",
                    bounds.len(),
                    n / 3
                )));
            }
            if let Some(a) = bounds.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
                return Err(Error::InvalidParameter {
                    field: "alpha".into(),
                    reason: format!("snap bound must be positive, got {a}"),
                });
            }
        }
        Ok(())
    }

    fn rows(&self, with_bounds: bool) -> Vec<Halfspace> {
        let n = self.nominal.len();
        let mut rows: Vec<Halfspace> = self
            .constraints
            .iter()
            .map(|c| Halfspace {
                a: c.row.clone(),
                b: c.bound,
            })
            .collect();
        if let (true, Some(bounds)) = (with_bounds, &self.snap_bounds) {
            for k in 0..n {
                for sign in [1.0, -1.0] {
                    let mut a = vec![0.0; n];
                    a[k] = sign;
                    rows.push(Halfspace { a, b: bounds[k / 3] });
                }
            }
        }
        rows
    }

    fn worst_bound_violation(&self, v: &[f64]) -> f64 {
        match &self.snap_bounds {
            None => 0.0,
            Some(bounds) => v
                .iter()
                .enumerate()
                .map(|(k, x)| x.abs() - bounds[k / 3])
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// KKT residual for `sum |v - v_hat|^2` with `lambda = 2 u`.
pub fn kkt_residual(nominal: &[f64], rows: &[Halfspace], p: &Projection) -> f64 {
    let n = nominal.len();
    let mut stationarity: Vec<f64> = (0..n).map(|k| 2.0 * (p.x[k] - nominal[k])).collect();
    let mut worst: f64 = 0.0;
    for (&k, &u) in p.active.iter().zip(&p.multipliers) {
        let lambda = 2.0 * u;
        for (s, a) in stationarity.iter_mut().zip(&rows[k].a) {
            *s += lambda * a;
        }
        worst = worst.max(-lambda).max((lambda * rows[k].slack(&p.x)).abs());
    }
    for row in rows {
        worst = worst.max(-row.slack(&p.x));
    }
    stationarity.iter().fold(worst, |acc, s| acc.max(s.abs()))
}

/// Stateful solver carrying the previous active set as a warm start.
#[derive(Debug, Clone, Default)]
pub struct Rectifier {
    warm: Vec<usize>,
}

impl Rectifier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn solve(&mut self, problem: &RectificationProblem) -> Result<RectifiedControl> {
        problem.validate()?;
        let attempt = |with_bounds: bool, warm: &[usize]| {
            let rows = problem.rows(with_bounds);
            let x0 = &problem.nominal;
            let feasible_at_nominal = rows.iter().all(|r| r.slack(x0) >= -violation_tol(r, x0));
            let proj = if feasible_at_nominal {
                Ok(Projection {
                    x: x0.clone(),
                    active: Vec::new(),
                    multipliers: Vec::new(),
                })
            } else {
                match project_with_guess(x0, &rows, warm) {
                    Some(p) => Ok(p),
                    None => project(x0, &rows),
                }
            };
            proj.map(|p| (rows, p))
        };

        let (rows, proj, relaxed) = match attempt(true, &self.warm) {
            Ok((rows, p)) => (rows, p, false),
            Err(Infeasible) if problem.snap_bounds.is_some() => match attempt(false, &[]) {
                Ok((rows, p)) => (rows, p, true),
                Err(Infeasible) => return Err(Error::Infeasible),
            },
            Err(Infeasible) => return Err(Error::Infeasible),
        };
        self.warm = if relaxed { Vec::new() } else { proj.active.clone() };

        let kkt = kkt_residual(&problem.nominal, &rows, &proj);
        let m = problem.constraints.len();
        let (mut active, mut multipliers): (Vec<usize>, Vec<f64>) = proj
            .active
            .iter()
            .zip(&proj.multipliers)
            .filter(|(k, _)| **k < m)
            .map(|(k, u)| (*k, 2.0 * u))
            .unzip();
        let mut order: Vec<usize> = (0..active.len()).collect();
        order.sort_by_key(|&c| active[c]);
        active = order.iter().map(|&c| active[c]).collect();
        multipliers = order.iter().map(|&c| multipliers[c]).collect();
        Ok(RectifiedControl {
            worst_bound_violation: problem.worst_bound_violation(&proj.x),
            v: proj.x,
            active,
            multipliers,
            kkt_residual: kkt,
            relaxed_bounds: relaxed,
        })
    }
}

/// Cold-start solve of one rectification problem.
pub fn solve(problem: &RectificationProblem) -> Result<RectifiedControl> {
    Rectifier::new().solve(problem)
}

/// Strictly feasible point of a certificate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub v: Vec<f64>,
    /// `min_k (b_k - A_k v) / |A_k|`.
    pub min_normalized_slack: f64,
}

/// Finds `v` with `A_k v < b_k` for every row.
///
/// Looks for a common descent direction `d` with `A_k d / |A_k| <= -1` (it
/// exists whenever no convex combination of the rows vanishes) and scales
/// it until every row holds with margin.
pub fn feasibility_probe(constraints: &[BarrierConstraint], dim: usize) -> Result<Witness> {
    for c in constraints {
        if c.row.len() != dim {
            return Err(Error::Dimension(format!("row length {} != {dim}", c.row.len())));
        }
    }
    if constraints.is_empty() {
        return Ok(Witness {
            v: vec![0.0; dim],
            min_normalized_slack: f64::INFINITY,
        });
    }
    let norms: Vec<f64> = constraints
        .iter()
        .map(|c| c.row.iter().map(|a| a * a).sum::<f64>().sqrt())
        .collect();
    if let Some(k) = norms.iter().position(|n| *n == 0.0) {
        return Err(Error::DegenerateGeometry {
            i: constraints[k].i,
            j: constraints[k].j,
        });
    }
    let rows: Vec<Halfspace> = constraints
        .iter()
        .zip(&norms)
        .map(|(c, n)| Halfspace {
            a: c.row.iter().map(|a| a / n).collect(),
            b: -1.0,
        })
        .collect();
    let d = project(&vec![0.0; dim], &rows).map_err(|_| Error::Infeasible)?.x;
    let scale = constraints
        .iter()
        .zip(&norms)
        .map(|(c, n)| (-c.bound / n).max(0.0))
        .fold(0.0, f64::max)
        + 1.0;
    let v: Vec<f64> = d.iter().map(|x| x * scale).collect();
    let min_normalized_slack = constraints
        .iter()
        .zip(&norms)
        .map(|(c, n)| c.slack(&v) / n)
        .fold(f64::INFINITY, f64::min);
    if min_normalized_slack <= 0.0 {
        return Err(Error::Infeasible);
    }
    Ok(Witness {
        v,
        min_normalized_slack,
    })
}
