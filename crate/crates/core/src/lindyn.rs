//! Quadruple-integrator chain dynamics and pole placement.
//!
//! Each vehicle is modelled as `r'''' = v` with state `q = (r, r', r'', r''')`.
//! The chain matrices are applied per axis, so the Kronecker lift to 12
//! states is implicit.
//!
//! Gain convention: a [`GainRow`] `k = (k0, k1, k2, k3)` always multiplies
//! `(h, h', h'', h''')` (or `(e, e', e'', e''')` for tracking) in that order.

use nalgebra::{Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub type Vec3 = Vector3<f64>;

/// Default closed-loop poles, `p_i > 0` places the eigenvalue at `-p_i`.
pub const DEFAULT_POLES: [f64; 4] = [2.0, 2.2, 2.4, 2.6];

/// Default control period (50 Hz).
pub const DEFAULT_DT: f64 = 0.02;

/// Flat state of one vehicle: position and its first three derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorState {
    pub r: Vec3,
    pub dr: Vec3,
    pub ddr: Vec3,
    pub dddr: Vec3,
}

impl Default for IntegratorState {
    fn default() -> Self {
        Self::at_rest(Vec3::zeros())
    }
}

impl IntegratorState {
    pub fn new(r: Vec3, dr: Vec3, ddr: Vec3, dddr: Vec3) -> Self {
        Self { r, dr, ddr, dddr }
    }

    pub fn at_rest(r: Vec3) -> Self {
        Self {
            r,
            dr: Vec3::zeros(),
            ddr: Vec3::zeros(),
            dddr: Vec3::zeros(),
        }
    }

    /// Derivative of order `k` (0..=3).
    pub fn order(&self, k: usize) -> &Vec3 {
        match k {
            0 => &self.r,
            1 => &self.dr,
            2 => &self.ddr,
            3 => &self.dddr,
            _ => panic!("integrator state has orders 0..=3, got {k}"),
        }
    }

    /// The 4-vector `(r, r', r'', r''')` along one axis.
    pub fn axis(&self, axis: usize) -> Vector4<f64> {
        Vector4::new(self.r[axis], self.dr[axis], self.ddr[axis], self.dddr[axis])
    }

    pub fn to_array(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for k in 0..4 {
            out[3 * k..3 * k + 3].copy_from_slice(self.order(k).as_slice());
        }
        out
    }

    pub fn from_array(q: &[f64; 12]) -> Self {
        let v = |k: usize| Vec3::new(q[3 * k], q[3 * k + 1], q[3 * k + 2]);
        Self::new(v(0), v(1), v(2), v(3))
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("r", self.r.as_slice())?;
        ensure_finite("dr", self.dr.as_slice())?;
        ensure_finite("ddr", self.ddr.as_slice())?;
        ensure_finite("dddr", self.dddr.as_slice())
    }

    pub fn is_finite(&self) -> bool {
        self.validate().is_ok()
    }
}

/// Per-axis chain matrices `F` (nilpotent upper shift) and `G = e4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainMatrices {
    pub f: Matrix4<f64>,
    pub g: Vector4<f64>,
}

impl Default for ChainMatrices {
    fn default() -> Self {
        Self::new()
    }
}

impl ChainMatrices {
    pub fn new() -> Self {
        let mut f = Matrix4::zeros();
        f[(0, 1)] = 1.0;
        f[(1, 2)] = 1.0;
        f[(2, 3)] = 1.0;
        Self {
            f,
            g: Vector4::new(0.0, 0.0, 0.0, 1.0),
        }
    }

    /// `F - G k`.
    pub fn closed_loop(&self, gains: &GainRow) -> Matrix4<f64> {
        self.f - self.g * Vector4::from(gains.k).transpose()
    }
}

/// Gain row `k` and the poles it was placed at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub k: [f64; 4],
    pub poles: [f64; 4],
}

impl Default for GainRow {
    fn default() -> Self {
        place_poles(DEFAULT_POLES).expect("default poles are valid")
    }
}

impl GainRow {
    /// `k . (x0, x1, x2, x3)`.
    pub fn dot(&self, x: [f64; 4]) -> f64 {
        self.k[0] * x[0] + self.k[1] * x[1] + self.k[2] * x[2] + self.k[3] * x[3]
    }
}

/// Gains whose closed loop `F - G k` has eigenvalues `-poles`.
///
/// The returned `k` are the ascending coefficients of `prod (s + p_i)`.
pub fn place_poles(poles: [f64; 4]) -> Result<GainRow> {
    for (i, p) in poles.iter().enumerate() {
        if !p.is_finite() || *p <= 0.0 {
            return Err(Error::InvalidParameter {
                field: format!("poles[{i}]"),
                reason: format!("pole must be finite and strictly positive, got {p}"),
            });
        }
    }
    // Ascending coefficients; start from the constant polynomial 1.
    let mut coeffs = [1.0, 0.0, 0.0, 0.0, 0.0];
    for (deg, p) in poles.iter().enumerate() {
        for j in (0..=deg + 1).rev() {
            let lower = if j > 0 { coeffs[j - 1] } else { 0.0 };
            coeffs[j] = coeffs[j] * p + lower;
        }
    }
    Ok(GainRow {
        k: [coeffs[0], coeffs[1], coeffs[2], coeffs[3]],
        poles,
    })
}

/// One forward-Euler step of the chain under snap command `v`.
pub fn euler_step(q: &IntegratorState, v: &Vec3, dt: f64) -> Result<IntegratorState> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidParameter {
            field: "dt".into(),
            reason: format!("time step must be finite and positive, got {dt}"),
        });
    }
    q.validate()?;
    ensure_finite("v", v.as_slice())?;
    Ok(IntegratorState {
        r: q.r + q.dr * dt,
        dr: q.dr + q.ddr * dt,
        ddr: q.ddr + q.dddr * dt,
        dddr: q.dddr + v * dt,
    })
}

/// Snap that drives `q` toward `target` with the placed closed loop.
///
/// `target[k]` is the reference derivative of order `k`, `0..=4`.
pub fn tracking_snap(q: &IntegratorState, target: &[Vec3; 5], gains: &GainRow) -> Vec3 {
    let mut v = target[4];
    for k in 0..4 {
        v -= (q.order(k) - target[k]) * gains.k[k];
    }
    v
}
