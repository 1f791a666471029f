//! Reference trajectories and the virtual-vehicle clock.

use serde::{Deserialize, Serialize};

use crate::flatness::FlatSample;
use crate::lindyn::Vec3;

/// Bezier curve on `[0, duration]`, held at its end points outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BezierCurve {
    pub control_points: Vec<Vec3>,
    pub duration: f64,
}

impl BezierCurve {
    fn degree(&self) -> usize {
        self.control_points.len() - 1
    }

    /// De Casteljau evaluation of a control polygon at `u`.
    fn casteljau(points: &[Vec3], u: f64) -> Vec3 {
        let mut work = points.to_vec();
        for level in (1..work.len()).rev() {
            for k in 0..level {
                work[k] = work[k] * (1.0 - u) + work[k + 1] * u;
            }
        }
        work.first().copied().unwrap_or_else(Vec3::zeros)
    }

    /// Derivatives of order 0..=4 with respect to time.
    fn eval(&self, t: f64) -> [Vec3; 5] {
        let mut out = [Vec3::zeros(); 5];
        if t <= 0.0 {
            out[0] = self.control_points[0];
            self.fill_derivatives(0.0, &mut out);
            return out;
        }
        if t >= self.duration {
            out[0] = *self.control_points.last().expect("non-empty polygon");
            self.fill_derivatives(1.0, &mut out);
            return out;
        }
        let u = t / self.duration;
        out[0] = Self::casteljau(&self.control_points, u);
        self.fill_derivatives(u, &mut out);
        out
    }

    /// Hodograph derivatives at `u` scaled by `1 / duration^k`.
    fn fill_derivatives(&self, u: f64, out: &mut [Vec3; 5]) {
        let mut poly = self.control_points.clone();
        let mut degree = self.degree() as f64;
        let mut scale = 1.0;
        for slot in out.iter_mut().skip(1) {
            if poly.len() < 2 {
                *slot = Vec3::zeros();
                continue;
            }
            poly = poly.windows(2).map(|w| (w[1] - w[0]) * degree).collect();
            degree -= 1.0;
            scale /= self.duration;
            *slot = Self::casteljau(&poly, u) * scale;
        }
    }
}

/// Smooth (C^4) nominal trajectory of one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceTrajectory {
    Hover {
        position: Vec3,
    },
    /// `center + radius (cos(w t + phase), sin(w t + phase), 0) + (0, 0, z)`.
    Circle {
        radius: f64,
        angular_rate: f64,
        phase: f64,
        z: f64,
        center: Vec3,
    },
    Bezier(BezierCurve),
}

impl ReferenceTrajectory {
    /// Position and derivatives of order 1..=4 at time `t`.
    pub fn eval(&self, t: f64) -> [Vec3; 5] {
        match self {
            Self::Hover { position } => {
                let mut out = [Vec3::zeros(); 5];
                out[0] = *position;
                out
            }
            Self::Circle {
                radius,
                angular_rate: w,
                phase,
                z,
                center,
            } => {
                let a = w * t + phase;
                let (s, c) = a.sin_cos();
                let mut out = [Vec3::zeros(); 5];
                // d^k/dt^k (cos a, sin a) cycles with factor w^k.
                let cycle = [(c, s), (-s, c), (-c, -s), (s, -c), (c, s)];
                for (k, (cx, cy)) in cycle.iter().enumerate() {
                    let f = radius * w.powi(k as i32);
                    out[k] = Vec3::new(f * cx, f * cy, 0.0);
                }
                out[0] += center + Vec3::new(0.0, 0.0, *z);
                out
            }
            Self::Bezier(curve) => curve.eval(t),
        }
    }

    /// Time after which the reference is held; infinite for periodic ones.
    pub fn duration(&self) -> f64 {
        match self {
            Self::Bezier(curve) => curve.duration,
            _ => f64::INFINITY,
        }
    }

    pub fn sample(&self, t: f64) -> FlatSample {
        FlatSample::from_derivatives(self.eval(t))
    }
}

/// Rest-to-rest degree-9 Bezier from `p0` to `p1` over `duration` seconds.
///
/// Five coincident control points at each end make derivatives 1..=4
/// vanish at both end points.
pub fn bezier_interp(p0: Vec3, p1: Vec3, duration: f64) -> ReferenceTrajectory {
    assert!(duration > 0.0 && duration.is_finite(), "duration must be positive");
    let mut control_points = vec![p0; 5];
    control_points.extend(std::iter::repeat(p1).take(5));
    ReferenceTrajectory::Bezier(BezierCurve {
        control_points,
        duration,
    })
}

pub fn circle_ref(radius: f64, angular_rate: f64, phase: f64, z: f64, center: Vec3) -> ReferenceTrajectory {
    assert!(radius >= 0.0, "radius must be non-negative");
    ReferenceTrajectory::Circle {
        radius,
        angular_rate,
        phase,
        z,
        center,
    }
}

/// Virtual time `s` advancing at `exp(-k_s |e_r|^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualClock {
    pub s: f64,
    pub k_s: f64,
    pub s_dot: f64,
}

impl VirtualClock {
    pub fn new(k_s: f64) -> Self {
        Self {
            s: 0.0,
            k_s,
            s_dot: 1.0,
        }
    }

    pub fn rate(&self, e_r: &Vec3) -> f64 {
        (-self.k_s * e_r.norm_squared()).exp()
    }
}

/// Forward-Euler clock update driven by the tracking error `e_r`.
pub fn clock_step(clock: &VirtualClock, e_r: &Vec3, dt: f64) -> VirtualClock {
    assert!(dt > 0.0, "dt must be positive");
    let s_dot = clock.rate(e_r);
    VirtualClock {
        s: clock.s + dt * s_dot,
        k_s: clock.k_s,
        s_dot,
    }
}

/// Reference at virtual time `s`, derivatives scaled by `s_dot^k`.
pub fn eval_parameterized(traj: &ReferenceTrajectory, clock: &VirtualClock) -> FlatSample {
    let mut d = traj.eval(clock.s);
    let mut scale = 1.0;
    for slot in d.iter_mut().skip(1) {
        scale *= clock.s_dot;
        *slot *= scale;
    }
    FlatSample::from_derivatives(d)
}
