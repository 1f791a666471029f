//! Endogenous transformation from flat outputs to quadrotor state and input.
//!
//! The flat output is `(x, y, z, yaw)` with yaw pinned to zero. The world
//! frame is NED-like by default (`z_w` points down, gravity enters as
//! `+g z_w`). Attitude is built from the mass-normalized thrust vector
//! `t = r'' - g z_w`:
//!
//! * `f_z = m |t|`, thrust axis `z_b = t / |t|`, so `m r'' = m g z_w + f_z z_b`;
//! * `y_b = z_b x x_c / |.|` with `x_c` the world x axis (zero yaw);
//! * `x_b = y_b x z_b`.
//!
//! Body rates and angular accelerations come from differentiating this
//! construction analytically with jerk and snap. Euler angles (Z-Y-X) are
//! reported relative to the z-up frame obtained by rotating the world frame
//! by pi about its x axis, so hover is `phi = theta = psi = 0`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::lindyn::{IntegratorState, Vec3};

/// Pitch magnitude above which a sample is flagged as near gimbal lock.
pub const GIMBAL_WARNING: f64 = 85.0 * std::f64::consts::PI / 180.0;

/// Flat output `r` with derivatives of order 0..=4. Yaw is always zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatSample {
    pub r: Vec3,
    pub dr: Vec3,
    pub ddr: Vec3,
    pub dddr: Vec3,
    pub ddddr: Vec3,
}

impl FlatSample {
    pub fn from_derivatives(d: [Vec3; 5]) -> Self {
        Self {
            r: d[0],
            dr: d[1],
            ddr: d[2],
            dddr: d[3],
            ddddr: d[4],
        }
    }

    /// Flat sample of an integrator state driven by snap `v`.
    pub fn from_state(q: &IntegratorState, v: &Vec3) -> Self {
        Self {
            r: q.r,
            dr: q.dr,
            ddr: q.ddr,
            dddr: q.dddr,
            ddddr: *v,
        }
    }

    pub fn hover(r: Vec3) -> Self {
        Self::from_derivatives([r, Vec3::zeros(), Vec3::zeros(), Vec3::zeros(), Vec3::zeros()])
    }

    pub fn derivatives(&self) -> [Vec3; 5] {
        [self.r, self.dr, self.ddr, self.dddr, self.ddddr]
    }

    pub fn yaw(&self) -> f64 {
        0.0
    }

    fn validate(&self) -> Result<()> {
        ensure_finite("r", self.r.as_slice())?;
        ensure_finite("dr", self.dr.as_slice())?;
        ensure_finite("ddr", self.ddr.as_slice())?;
        ensure_finite("dddr", self.dddr.as_slice())?;
        ensure_finite("ddddr", self.ddddr.as_slice())
    }
}

/// Rigid-body parameters. Defaults are Crazyflie-2.0-like.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    pub mass: f64,
    /// Row-major 3x3 inertia, kg m^2.
    pub inertia: [[f64; 3]; 3],
    pub gravity: f64,
    /// `false`: world z points down (gravity `+g z_w`). `true`: z points up.
    pub z_up: bool,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 0.033,
            inertia: [[1.4e-5, 0.0, 0.0], [0.0, 1.4e-5, 0.0], [0.0, 0.0, 2.2e-5]],
            gravity: 9.81,
            z_up: false,
        }
    }
}

impl VehicleParams {
    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.inertia[i][j])
    }

    /// Unit vector of the world z axis in world coordinates, with gravity
    /// acting along `+gravity_direction()`.
    pub fn gravity_direction(&self) -> Vec3 {
        if self.z_up {
            Vec3::new(0.0, 0.0, -1.0)
        } else {
            Vec3::new(0.0, 0.0, 1.0)
        }
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::InvalidParameter {
                field: format!("vehicle.{field}"),
                reason,
            })
        };
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return bad("mass", format!("must be positive, got {}", self.mass));
        }
        if !(self.gravity.is_finite() && self.gravity > 0.0) {
            return bad("gravity", format!("must be positive, got {}", self.gravity));
        }
        let j = self.inertia_matrix();
        if j.iter().any(|v| !v.is_finite()) {
            return bad("inertia", "entries must be finite".into());
        }
        if (j - j.transpose()).abs().max() > 1e-12 * j.abs().max() {
            return bad("inertia", "must be symmetric".into());
        }
        if j.cholesky().is_none() {
            return bad("inertia", "must be positive definite".into());
        }
        Ok(())
    }

    /// Maps world coordinates into the internal z-up frame (and back; the
    /// map is an involution).
    fn to_internal(&self, w: &Vec3) -> Vec3 {
        if self.z_up {
            *w
        } else {
            Vec3::new(w.x, -w.y, -w.z)
        }
    }
}

/// Recovered state. Angles in radians, body rates in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub body_rates: Vec3,
    /// Columns `x_b, y_b, z_b` expressed in the internal z-up frame.
    pub rotation: Matrix3<f64>,
    /// Angle between the thrust axis and the vertical.
    pub tilt: f64,
    pub gimbal_warning: bool,
}

impl FullState {
    /// Body thrust axis expressed in world coordinates.
    pub fn thrust_axis_world(&self, params: &VehicleParams) -> Vec3 {
        params.to_internal(&self.rotation.column(2).into_owned())
    }
}

/// Collective thrust (N) and body torque (N m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub thrust: f64,
    pub torque: Vec3,
}

/// Unit vector of `w` with its first two time derivatives.
fn normalize_d2(w: Vec3, dw: Vec3, ddw: Vec3) -> (Vec3, Vec3, Vec3) {
    let s = w.norm();
    let n = w / s;
    let ds = n.dot(&dw);
    let dn = (dw - n * ds) / s;
    let dds = dn.dot(&dw) + n.dot(&ddw);
    let ddn = (ddw - dn * (2.0 * ds) - n * dds) / s;
    (n, dn, ddn)
}

/// Attitude frame, body rates and angular acceleration in one pass.
struct Kinematics {
    rotation: Matrix3<f64>,
    thrust_norm: f64,
    omega: Vec3,
    omega_dot: Vec3,
}

fn kinematics(s: &FlatSample, params: &VehicleParams) -> Result<Kinematics> {
    s.validate()?;
    // Internal z-up frame: t = a + g e3.
    let g = params.gravity;
    let t = params.to_internal(&s.ddr) + Vec3::new(0.0, 0.0, g);
    let dt = params.to_internal(&s.dddr);
    let ddt = params.to_internal(&s.ddddr);
    let threshold = 1e-3 * g;
    let norm = t.norm();
    if norm <= threshold {
        return Err(Error::FreeFall { norm, threshold });
    }
    let (zb, dzb, ddzb) = normalize_d2(t, dt, ddt);

    let xc = Vec3::new(1.0, 0.0, 0.0);
    let u = zb.cross(&xc);
    if u.norm() < 1e-9 {
        return Err(Error::HeadingSingularity);
    }
    let (yb, dyb, ddyb) = normalize_d2(u, dzb.cross(&xc), ddzb.cross(&xc));

    let xb = yb.cross(&zb);
    let dxb = dyb.cross(&zb) + yb.cross(&dzb);
    let ddxb = ddyb.cross(&zb) + dyb.cross(&dzb) * 2.0 + yb.cross(&ddzb);

    // [w]x = R^T R_dot with R = [xb yb zb].
    let omega = Vec3::new(zb.dot(&dyb), xb.dot(&dzb), yb.dot(&dxb));
    let omega_dot = Vec3::new(
        dzb.dot(&dyb) + zb.dot(&ddyb),
        dxb.dot(&dzb) + xb.dot(&ddzb),
        dyb.dot(&dxb) + yb.dot(&ddxb),
    );
    Ok(Kinematics {
        rotation: Matrix3::from_columns(&[xb, yb, zb]),
        thrust_norm: norm,
        omega,
        omega_dot,
    })
}

/// Recovers position, velocity, Z-Y-X Euler angles and body rates.
pub fn flat_to_state(s: &FlatSample, params: &VehicleParams) -> Result<FullState> {
    let k = kinematics(s, params)?;
    let r = &k.rotation;
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    let tilt = r[(2, 2)].clamp(-1.0, 1.0).acos();
    Ok(FullState {
        position: s.r,
        velocity: s.dr,
        roll,
        pitch,
        yaw,
        body_rates: k.omega,
        rotation: k.rotation,
        tilt,
        gimbal_warning: pitch.abs() > GIMBAL_WARNING,
    })
}

/// Recovers collective thrust and body torque.
pub fn flat_to_input(s: &FlatSample, params: &VehicleParams) -> Result<ControlInput> {
    let k = kinematics(s, params)?;
    let j = params.inertia_matrix();
    let torque = j * k.omega_dot + k.omega.cross(&(j * k.omega));
    Ok(ControlInput {
        thrust: params.mass * k.thrust_norm,
        torque,
    })
}

/// Body angular acceleration implied by the flat sample (uses snap).
pub fn angular_acceleration(s: &FlatSample, params: &VehicleParams) -> Result<Vector3<f64>> {
    Ok(kinematics(s, params)?.omega_dot)
}

/// Actuator envelope used by the audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActuatorLimits {
    /// Maximum tilt of the thrust axis from vertical, degrees.
    pub max_tilt_deg: f64,
    /// Maximum `f_z / (m g)`.
    pub max_thrust_ratio: f64,
}

impl Default for ActuatorLimits {
    fn default() -> Self {
        Self {
            max_tilt_deg: 40.0,
            max_thrust_ratio: 1.8,
        }
    }
}

impl ActuatorLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_tilt_deg.is_finite() && self.max_tilt_deg > 0.0) {
            return Err(Error::InvalidParameter {
                field: "limits.max_tilt_deg".into(),
                reason: format!("must be positive, got {}", self.max_tilt_deg),
            });
        }
        if !(self.max_thrust_ratio.is_finite() && self.max_thrust_ratio > 0.0) {
            return Err(Error::InvalidParameter {
                field: "limits.max_thrust_ratio".into(),
                reason: format!("must be positive, got {}", self.max_thrust_ratio),
            });
        }
        Ok(())
    }
}

/// Extremes of one or more audited traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    #[serde(with = "crate::serde_float")]
    pub max_tilt_deg: f64,
    pub max_tilt_time: f64,
    pub max_tilt_vehicle: usize,
    #[serde(with = "crate::serde_float")]
    pub max_thrust_ratio: f64,
    pub max_thrust_time: f64,
    pub max_thrust_vehicle: usize,
    pub gimbal_warnings: usize,
    /// First sample the transformation could not invert.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub singularity: Option<SingularSample>,
    pub limits: ActuatorLimits,
    pub tilt_ok: bool,
    pub thrust_ok: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularSample {
    pub vehicle: usize,
    pub index: usize,
    pub time: f64,
    pub reason: String,
}

impl AuditReport {
    /// Failing report for a trace containing a singular sample.
    pub fn singular(limits: &ActuatorLimits, error: &Error, dt: f64) -> Self {
        let (vehicle, index, reason) = match error {
            Error::AuditSample { vehicle, index, source } => (*vehicle, *index, source.to_string()),
            other => (0, 0, other.to_string()),
        };
        Self {
            max_tilt_deg: f64::INFINITY,
            max_tilt_time: index as f64 * dt,
            max_tilt_vehicle: vehicle,
            max_thrust_ratio: f64::INFINITY,
            max_thrust_time: index as f64 * dt,
            max_thrust_vehicle: vehicle,
            gimbal_warnings: 0,
            singularity: Some(SingularSample {
                vehicle,
                index,
                time: index as f64 * dt,
                reason,
            }),
            limits: *limits,
            tilt_ok: false,
            thrust_ok: false,
            pass: false,
        }
    }

    /// Names of the metrics that exceeded their limit.
    pub fn failing_metrics(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.tilt_ok {
            out.push("max_tilt_deg");
        }
        if !self.thrust_ok {
            out.push("max_thrust_ratio");
        }
        out
    }

    fn finish(mut self) -> Self {
        self.tilt_ok = self.max_tilt_deg <= self.limits.max_tilt_deg;
        self.thrust_ok = self.max_thrust_ratio <= self.limits.max_thrust_ratio;
        self.pass = self.tilt_ok && self.thrust_ok;
        self
    }
}

/// Audits one uniformly sampled trace (sample `k` is at time `k * dt`).
pub fn actuator_audit(
    trace: &[FlatSample],
    dt: f64,
    params: &VehicleParams,
    limits: &ActuatorLimits,
) -> Result<AuditReport> {
    audit_fleet(std::slice::from_ref(&trace), dt, params, limits)
}

/// Audits several vehicles' traces and reports the fleet-wide extremes.
pub fn audit_fleet<T: AsRef<[FlatSample]>>(
    traces: &[T],
    dt: f64,
    params: &VehicleParams,
    limits: &ActuatorLimits,
) -> Result<AuditReport> {
    if traces.iter().all(|t| t.as_ref().is_empty()) {
        return Err(Error::InvalidParameter {
            field: "trace".into(),
            reason: "audit needs at least one sample".into(),
        });
    }
    let mut report = AuditReport {
        max_tilt_deg: 0.0,
        max_tilt_time: 0.0,
        max_tilt_vehicle: 0,
        max_thrust_ratio: 0.0,
        max_thrust_time: 0.0,
        max_thrust_vehicle: 0,
        gimbal_warnings: 0,
        singularity: None,
        limits: *limits,
        tilt_ok: true,
        thrust_ok: true,
        pass: true,
    };
    let hover = params.hover_thrust();
    for (vehicle, trace) in traces.iter().enumerate() {
        for (index, sample) in trace.as_ref().iter().enumerate() {
            let wrap = |e: Error| Error::AuditSample {
                vehicle,
                index,
                source: Box::new(e),
            };
            let state = flat_to_state(sample, params).map_err(wrap)?;
            let input = flat_to_input(sample, params).map_err(wrap)?;
            let t = index as f64 * dt;
            let tilt = state.tilt.to_degrees();
            if tilt > report.max_tilt_deg {
                report.max_tilt_deg = tilt;
                report.max_tilt_time = t;
                report.max_tilt_vehicle = vehicle;
            }
            let ratio = input.thrust / hover;
            if ratio > report.max_thrust_ratio {
                report.max_thrust_ratio = ratio;
                report.max_thrust_time = t;
                report.max_thrust_vehicle = vehicle;
            }
            if state.gimbal_warning {
                report.gimbal_warnings += 1;
            }
        }
    }
    Ok(report.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn hover_equilibrium() {
        let p = params();
        let s = FlatSample::hover(Vec3::new(0.1, -0.2, -0.8));
        let st = flat_to_state(&s, &p).unwrap();
        assert_eq!((st.roll, st.pitch, st.yaw), (0.0, 0.0, 0.0));
        assert_eq!(st.body_rates, Vec3::zeros());
        assert_eq!(st.tilt, 0.0);
        let u = flat_to_input(&s, &p).unwrap();
        assert_eq!(u.thrust, p.mass * p.gravity);
        assert_eq!(u.torque, Vec3::zeros());
    }

    #[test]
    fn forty_five_degree_tilt() {
        let p = params();
        let mut s = FlatSample::hover(Vec3::zeros());
        s.ddr = Vec3::new(p.gravity, 0.0, 0.0);
        let st = flat_to_state(&s, &p).unwrap();
        assert!((st.tilt.to_degrees() - 45.0).abs() < 1e-12);
        let u = flat_to_input(&s, &p).unwrap();
        assert!((u.thrust - p.mass * p.gravity * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn newton_residual_in_world_frame() {
        for z_up in [false, true] {
            let p = VehicleParams { z_up, ..params() };
            let mut s = FlatSample::hover(Vec3::zeros());
            s.ddr = Vec3::new(3.0, -1.5, 2.0);
            s.dddr = Vec3::new(0.4, 1.0, -2.0);
            let st = flat_to_state(&s, &p).unwrap();
            let u = flat_to_input(&s, &p).unwrap();
            let zb = st.thrust_axis_world(&p);
            let resid = s.ddr * p.mass - p.gravity_direction() * (p.mass * p.gravity) - zb * u.thrust;
            assert!(resid.norm() < 1e-15, "{resid:?}");
            let rtr = st.rotation.transpose() * st.rotation - Matrix3::identity();
            assert!(rtr.abs().max() < 1e-12);
        }
    }

    #[test]
    fn free_fall_is_singular() {
        let p = params();
        let mut s = FlatSample::hover(Vec3::zeros());
        // NED: accelerating down at g leaves no thrust.
        s.ddr = Vec3::new(0.0, 0.0, p.gravity);
        assert!(matches!(flat_to_state(&s, &p), Err(Error::FreeFall { .. })));
        assert!(matches!(flat_to_input(&s, &p), Err(Error::FreeFall { .. })));
    }

    #[test]
    fn audit_hover_and_failure() {
        let p = params();
        let hover = vec![FlatSample::hover(Vec3::zeros()); 10];
        let rep = actuator_audit(&hover, 0.02, &p, &ActuatorLimits::default()).unwrap();
        assert_eq!(rep.max_tilt_deg, 0.0);
        assert!((rep.max_thrust_ratio - 1.0).abs() < 1e-15);
        assert!(rep.pass);

        let mut trace = hover.clone();
        trace[4].ddr = Vec3::new(p.gravity, 0.0, 0.0);
        let limits = ActuatorLimits {
            max_tilt_deg: 30.0,
            max_thrust_ratio: 1.2,
        };
        let rep = actuator_audit(&trace, 0.02, &p, &limits).unwrap();
        assert!(!rep.pass);
        assert!((rep.max_tilt_deg - 45.0).abs() < 1e-9);
        assert!((rep.max_tilt_time - 0.08).abs() < 1e-12);
        assert!((rep.max_thrust_ratio - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(rep.failing_metrics(), vec!["max_tilt_deg", "max_thrust_ratio"]);
    }

    #[test]
    fn audit_reports_singular_sample_index() {
        let p = params();
        let mut trace = vec![FlatSample::hover(Vec3::zeros()); 5];
        trace[3].ddr = Vec3::new(0.0, 0.0, p.gravity);
        match actuator_audit(&trace, 0.02, &p, &ActuatorLimits::default()) {
            Err(Error::AuditSample { vehicle, index, .. }) => assert_eq!((vehicle, index), (0, 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn params_validation() {
        assert!(params().validate().is_ok());
        let mut p = params();
        p.mass = -1.0;
        assert!(p.validate().is_err());
        let mut p = params();
        p.inertia[0][1] = 1.0;
        assert!(p.validate().is_err());
    }
}
