//! Pairwise super-ellipsoid barriers and their exponential-CBF rows.
//!
//! For a pair `(i, j)` with `delta = (dx, dy, dz / c)` the rectangle-shaped
//! barrier is `h = sum(delta_k^4) - D_s^4`. Its fourth time derivative is
//! affine in the snap inputs, so `h'''' + k . eta >= 0` becomes one row
//! `A v <= b` over the aggregate snap vector `v = (v_1, .., v_m)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lindyn::{GainRow, IntegratorState, Vec3};

/// Envelope shape of each vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// `dx^4 + dy^4 + (dz/c)^4 - D_s^4`.
    Rectangle,
    /// `(dx^2 + dy^2)^(n/2) + (dz/c)^n - D_s^n`, `n` even and at least 4.
    Cylinder { n: u32 },
}

/// Safety distance, vertical scaling and envelope shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyGeometry {
    #[serde(rename = "D_s")]
    pub d_s: f64,
    pub c: f64,
    pub shape: Shape,
}

impl Default for SafetyGeometry {
    fn default() -> Self {
        Self {
            d_s: 0.25,
            c: 2.0,
            shape: Shape::Rectangle,
        }
    }
}

impl SafetyGeometry {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::InvalidParameter {
                field: format!("geometry.{field}"),
                reason,
            })
        };
        if !(self.d_s.is_finite() && self.d_s > 0.0) {
            return bad("D_s", format!("safety distance must be positive, got {}", self.d_s));
        }
        if !(self.c.is_finite() && self.c >= 1.0) {
            return bad("c", format!("vertical scaling must be >= 1, got {}", self.c));
        }
        if let Shape::Cylinder { n } = self.shape {
            if n < 4 || n % 2 != 0 {
                return bad("shape.n", format!("cylinder exponent must be even and >= 4, got {n}"));
            }
        }
        Ok(())
    }
}

/// `(h, h', h'', h''')` along the drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaVector {
    pub h: f64,
    pub dh: f64,
    pub ddh: f64,
    pub dddh: f64,
}

impl EtaVector {
    pub fn to_array(&self) -> [f64; 4] {
        [self.h, self.dh, self.ddh, self.dddh]
    }
}

/// One certificate row `A v <= b` for the pair `(i, j)`, `i < j` when
/// produced by [`assemble_certificates`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierConstraint {
    pub i: usize,
    pub j: usize,
    pub row: Vec<f64>,
    pub bound: f64,
    pub eta: EtaVector,
}

impl BarrierConstraint {
    /// `b - A v`; non-negative when satisfied.
    pub fn slack(&self, v: &[f64]) -> f64 {
        self.bound - dot(&self.row, v)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative kinematics `delta` and its derivatives of order 0..=3.
fn relative(qi: &IntegratorState, qj: &IntegratorState, c: f64) -> [Vec3; 4] {
    let scale = Vec3::new(1.0, 1.0, 1.0 / c);
    [0, 1, 2, 3].map(|k| (qi.order(k) - qj.order(k)).component_mul(&scale))
}

/// Time-derivative jet `[f, f', f'', f''', f'''']`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Jet([f64; 5]);

const BINOMIAL: [[f64; 5]; 5] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0, 0.0],
    [1.0, 3.0, 3.0, 1.0, 0.0],
    [1.0, 4.0, 6.0, 4.0, 1.0],
];

impl Jet {
    fn mul(&self, o: &Jet) -> Jet {
        let mut out = [0.0; 5];
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = (0..=k).map(|i| BINOMIAL[k][i] * self.0[i] * o.0[k - i]).sum();
        }
        Jet(out)
    }

    fn add(&self, o: &Jet) -> Jet {
        Jet([0, 1, 2, 3, 4].map(|k| self.0[k] + o.0[k]))
    }

    fn powi(&self, n: u32) -> Jet {
        let mut out = Jet([1.0, 0.0, 0.0, 0.0, 0.0]);
        for _ in 0..n {
            out = out.mul(self);
        }
        out
    }
}

/// `eta`, the snap-free part of `h''''`, and `dh/dr_i`.
struct PairExpansion {
    eta: EtaVector,
    drift: f64,
    grad: Vec3,
}

fn expand(qi: &IntegratorState, qj: &IntegratorState, geom: &SafetyGeometry) -> PairExpansion {
    let [d, d1, d2, d3] = relative(qi, qj, geom.c);
    match geom.shape {
        Shape::Rectangle => {
            let mut eta = [0.0; 4];
            let mut drift = 0.0;
            let mut grad = Vec3::zeros();
            for k in 0..3 {
                let (x, x1, x2, x3) = (d[k], d1[k], d2[k], d3[k]);
                eta[0] += x.powi(4);
                eta[1] += 4.0 * x.powi(3) * x1;
                eta[2] += 12.0 * x * x * x1 * x1 + 4.0 * x.powi(3) * x2;
                eta[3] += 24.0 * x * x1.powi(3) + 36.0 * x * x * x1 * x2 + 4.0 * x.powi(3) * x3;
                drift += 24.0 * x1.powi(4)
                    + 144.0 * x * x1 * x1 * x2
                    + 36.0 * x * x * x2 * x2
                    + 48.0 * x * x * x1 * x3;
                grad[k] = 4.0 * x.powi(3);
            }
            grad.z /= geom.c;
            eta[0] -= geom.d_s.powi(4);
            PairExpansion {
                eta: EtaVector {
                    h: eta[0],
                    dh: eta[1],
                    ddh: eta[2],
                    dddh: eta[3],
                },
                drift,
                grad,
            }
        }
        Shape::Cylinder { n } => {
            let jet = |k: usize| Jet([d[k], d1[k], d2[k], d3[k], 0.0]);
            let (jx, jy, jz) = (jet(0), jet(1), jet(2));
            let rho = jx.mul(&jx).add(&jy.mul(&jy));
            let h = rho.powi(n / 2).add(&jz.powi(n));
            let nf = n as f64;
            let rho_pow = d[0].hypot(d[1]).powi(n as i32 - 2);
            let grad = Vec3::new(
                nf * rho_pow * d[0],
                nf * rho_pow * d[1],
                nf * d[2].powi(n as i32 - 1) / geom.c,
            );
            PairExpansion {
                eta: EtaVector {
                    h: h.0[0] - geom.d_s.powi(n as i32),
                    dh: h.0[1],
                    ddh: h.0[2],
                    dddh: h.0[3],
                },
                drift: h.0[4],
                grad,
            }
        }
    }
}

/// Barrier value `h_ij`.
pub fn barrier_value(qi: &IntegratorState, qj: &IntegratorState, geom: &SafetyGeometry) -> f64 {
    let d = (qi.r - qj.r).component_mul(&Vec3::new(1.0, 1.0, 1.0 / geom.c));
    match geom.shape {
        Shape::Rectangle => d.x.powi(4) + d.y.powi(4) + d.z.powi(4) - geom.d_s.powi(4),
        Shape::Cylinder { n } => {
            let n = n as i32;
            (d.x * d.x + d.y * d.y).powi(n / 2) + d.z.powi(n) - geom.d_s.powi(n)
        }
    }
}

/// `(h, L_f h, L_f^2 h, L_f^3 h)` in closed form.
pub fn eta(qi: &IntegratorState, qj: &IntegratorState, geom: &SafetyGeometry) -> EtaVector {
    expand(qi, qj, geom).eta
}

/// `h''''` for relative snaps `v_i`, `v_j`.
pub fn fourth_derivative(
    qi: &IntegratorState,
    qj: &IntegratorState,
    vi: &Vec3,
    vj: &Vec3,
    geom: &SafetyGeometry,
) -> f64 {
    let e = expand(qi, qj, geom);
    e.drift + e.grad.dot(&(vi - vj))
}

/// Certificate row for the pair `(i, j)` in an `m`-vehicle team.
pub fn constraint_row(
    states: &[IntegratorState],
    i: usize,
    j: usize,
    geom: &SafetyGeometry,
    gains: &GainRow,
) -> Result<BarrierConstraint> {
    let m = states.len();
    if i == j || i >= m || j >= m {
        return Err(Error::Dimension(format!(
            "pair ({i}, {j}) invalid for {m} vehicles"
        )));
    }
    let (qi, qj) = (&states[i], &states[j]);
    if qi.r == qj.r {
        return Err(Error::DegenerateGeometry { i, j });
    }
    let e = expand(qi, qj, geom);
    if e.grad == Vec3::zeros() {
        return Err(Error::DegenerateGeometry { i, j });
    }
    let mut row = vec![0.0; 3 * m];
    for k in 0..3 {
        row[3 * i + k] = -e.grad[k];
        row[3 * j + k] = e.grad[k];
    }
    Ok(BarrierConstraint {
        i,
        j,
        row,
        bound: gains.dot(e.eta.to_array()) + e.drift,
        eta: e.eta,
    })
}

/// All `m (m - 1) / 2` rows, ordered lexicographically in `(i, j)`.
pub fn assemble_certificates(
    states: &[IntegratorState],
    geom: &SafetyGeometry,
    gains: &GainRow,
) -> Result<Vec<BarrierConstraint>> {
    let m = states.len();
    let mut out = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            out.push(constraint_row(states, i, j, geom, gains)?);
        }
    }
    Ok(out)
}

/// Outputs `y_0..y_3` of one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairOutputs {
    pub i: usize,
    pub j: usize,
    pub y: [f64; 4],
}

impl PairOutputs {
    pub fn ok(&self) -> bool {
        self.y.iter().all(|y| *y >= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialConditionReport {
    pub pairs: Vec<PairOutputs>,
    pub pass: bool,
}

impl InitialConditionReport {
    pub fn failing(&self) -> impl Iterator<Item = &PairOutputs> {
        self.pairs.iter().filter(|p| !p.ok())
    }
}

/// `y_i = (d/dt + p_1) .. (d/dt + p_i) h` evaluated from `eta`.
pub fn pair_outputs(eta: &EtaVector, poles: &[f64; 4]) -> [f64; 4] {
    let e = eta.to_array();
    // Ascending coefficients of prod_{k<=i} (s + p_k).
    let mut poly = [1.0, 0.0, 0.0, 0.0];
    let mut y = [0.0; 4];
    y[0] = e[0];
    for (i, p) in poles.iter().take(3).enumerate() {
        for j in (0..=i + 1).rev() {
            let lower = if j > 0 { poly[j - 1] } else { 0.0 };
            poly[j] = poly[j] * p + lower;
        }
        y[i + 1] = (0..=i + 1).map(|j| poly[j] * e[j]).sum();
    }
    y
}

/// Checks `q_0 in C_0 .. C_3` for every pair.
pub fn check_initial_conditions(
    states: &[IntegratorState],
    geom: &SafetyGeometry,
    gains: &GainRow,
) -> InitialConditionReport {
    let m = states.len();
    let mut pairs = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            let e = eta(&states[i], &states[j], geom);
            pairs.push(PairOutputs {
                i,
                j,
                y: pair_outputs(&e, &gains.poles),
            });
        }
    }
    let pass = pairs.iter().all(PairOutputs::ok);
    InitialConditionReport { pairs, pass }
}
