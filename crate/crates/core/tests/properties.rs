use nalgebra::{DMatrix, Matrix3};
use proptest::prelude::*;

use sbcert::barrier::{self, SafetyGeometry, Shape};
use sbcert::flatness::{self, FlatSample, VehicleParams};
use sbcert::lindyn::{self, ChainMatrices, IntegratorState, Vec3};
use sbcert::oracle;
use sbcert::pipeline;
use sbcert::qp::{self, Halfspace};
use sbcert::reference::{self, ReferenceTrajectory, VirtualClock};
use sbcert::scenario;

fn vec3(range: std::ops::Range<f64>) -> impl Strategy<Value = Vec3> {
    (range.clone(), range.clone(), range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn state(spread: f64) -> impl Strategy<Value = IntegratorState> {
    (vec3(-spread..spread), vec3(-2.0..2.0), vec3(-4.0..4.0), vec3(-8.0..8.0))
        .prop_map(|(r, dr, ddr, dddr)| IntegratorState::new(r, dr, ddr, dddr))
}

fn int_vec3() -> impl Strategy<Value = Vec3> {
    (-100i32..100, -100i32..100, -100i32..100).prop_map(|(x, y, z)| Vec3::new(x as f64, y as f64, z as f64))
}

fn int_state() -> impl Strategy<Value = IntegratorState> {
    (int_vec3(), int_vec3(), int_vec3(), int_vec3()).prop_map(|(a, b, c, d)| IntegratorState::new(a, b, c, d))
}

fn poles() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(0.5f64..8.0)
}

fn geometry() -> impl Strategy<Value = SafetyGeometry> {
    (0.1f64..0.4, 1.0f64..3.0, prop_oneof![Just(Shape::Rectangle), Just(Shape::Cylinder { n: 4 }), Just(Shape::Cylinder { n: 6 })])
        .prop_map(|(d_s, c, shape)| SafetyGeometry { d_s, c, shape })
}

fn scaled(q: &IntegratorState, a: f64) -> IntegratorState {
    IntegratorState::new(q.r * a, q.dr * a, q.ddr * a, q.dddr * a)
}

fn added(p: &IntegratorState, q: &IntegratorState) -> IntegratorState {
    IntegratorState::new(p.r + q.r, p.dr + q.dr, p.ddr + q.ddr, p.dddr + q.dddr)
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Random polynomial trajectory `sum c_k t^k / k!`, `k <= 7`, per axis.
#[derive(Debug, Clone)]
struct Poly {
    coeffs: Vec<Vec3>,
}

impl Poly {
    fn derivative(&self, order: usize, t: f64) -> Vec3 {
        let mut out = Vec3::zeros();
        let mut fact = 1.0;
        for (k, c) in self.coeffs.iter().enumerate().skip(order) {
            let p = k - order;
            if p > 0 {
                fact *= p as f64;
            }
            out += c * (t.powi(p as i32) / fact);
        }
        out
    }

    fn sample(&self, t: f64) -> FlatSample {
        FlatSample::from_derivatives([0, 1, 2, 3, 4].map(|k| self.derivative(k, t)))
    }
}

fn poly() -> impl Strategy<Value = Poly> {
    prop::collection::vec(vec3(-1.0..1.0), 8).prop_map(|coeffs| Poly { coeffs })
}

fn skew(w: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn euler_step_is_linear(q1 in int_state(), q2 in int_state(), v1 in int_vec3(), v2 in int_vec3(), a in -4i32..4, b in -4i32..4) {
        // Dyadic step and small integers keep every operation exact.
        let (a, b, dt) = (a as f64, b as f64, 1.0 / 64.0);
        let lhs = lindyn::euler_step(&added(&scaled(&q1, a), &scaled(&q2, b)), &(v1 * a + v2 * b), dt).unwrap();
        let s1 = lindyn::euler_step(&q1, &v1, dt).unwrap();
        let s2 = lindyn::euler_step(&q2, &v2, dt).unwrap();
        prop_assert_eq!(lhs, added(&scaled(&s1, a), &scaled(&s2, b)));
    }

    #[test]
    fn euler_step_is_linear_at_default_dt(q1 in state(1.0), q2 in state(1.0), v1 in vec3(-5.0..5.0), v2 in vec3(-5.0..5.0), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let dt = lindyn::DEFAULT_DT;
        let lhs = lindyn::euler_step(&added(&scaled(&q1, a), &scaled(&q2, b)), &(v1 * a + v2 * b), dt).unwrap();
        let rhs = added(&scaled(&lindyn::euler_step(&q1, &v1, dt).unwrap(), a), &scaled(&lindyn::euler_step(&q2, &v2, dt).unwrap(), b));
        for (x, y) in lhs.to_array().iter().zip(rhs.to_array()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn pole_order_does_not_matter(p in poles(), perm in Just([0usize, 1, 2, 3]).prop_shuffle()) {
        let k = lindyn::place_poles(p).unwrap().k;
        let k2 = lindyn::place_poles(perm.map(|i| p[i])).unwrap().k;
        for (a, b) in k.iter().zip(k2) {
            prop_assert!(rel(*a, b, 1e-300) < 1e-13);
        }
    }

    #[test]
    fn integer_poles_permute_exactly(p in prop::array::uniform4(1u32..20), perm in Just([0usize, 1, 2, 3]).prop_shuffle()) {
        let p = p.map(f64::from);
        prop_assert_eq!(lindyn::place_poles(p).unwrap().k, lindyn::place_poles(perm.map(|i| p[i])).unwrap().k);
    }

    #[test]
    fn closed_loop_decays(p in prop::array::uniform4(0.5f64..6.0), q in state(1.0)) {
        let gains = lindyn::place_poles(p).unwrap();
        let horizon = 10.0 / p.iter().copied().fold(f64::INFINITY, f64::min);
        let dt = lindyn::DEFAULT_DT;
        let target = [Vec3::zeros(); 5];
        let mut x = q;
        for _ in 0..(horizon / dt).ceil() as usize {
            let v = lindyn::tracking_snap(&x, &target, &gains);
            x = lindyn::euler_step(&x, &v, dt).unwrap();
        }
        let norm = |s: &IntegratorState| s.to_array().iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm(&x) < norm(&q), "{} !< {}", norm(&x), norm(&q));
    }

    #[test]
    fn closed_loop_eigenvalues(p in poles()) {
        let gains = lindyn::place_poles(p).unwrap();
        let a = ChainMatrices::new().closed_loop(&gains);
        let eig_c = oracle::companion_eigenvalues(&a);
        prop_assert!(eig_c.iter().all(|z| z.im.abs() < 1e-9));
        let mut eig: Vec<f64> = eig_c.iter().map(|z| z.re).collect();
        let mut want: Vec<f64> = p.iter().map(|x| -x).collect();
        eig.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        // Distinct poles keep the eigenproblem well conditioned.
        let gap = want.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        prop_assume!(gap > 0.1);
        for (e, w) in eig.iter().zip(&want) {
            prop_assert!((e - w).abs() < 1e-9, "{eig:?} vs {want:?}");
        }
    }

    #[test]
    fn barrier_is_symmetric(qi in state(1.0), qj in state(1.0), geom in geometry(), p in poles()) {
        prop_assume!(qi.r != qj.r);
        let gains = lindyn::place_poles(p).unwrap();
        prop_assert_eq!(barrier::barrier_value(&qi, &qj, &geom), barrier::barrier_value(&qj, &qi, &geom));
        let states = [qi, qj];
        let ij = barrier::constraint_row(&states, 0, 1, &geom, &gains).unwrap();
        let ji = barrier::constraint_row(&states, 1, 0, &geom, &gains).unwrap();
        // Each vehicle's block flips sign with its role, so the constraint
        // itself is unchanged.
        for k in 0..3 {
            prop_assert_eq!(ij.row[k], -ij.row[3 + k]);
            prop_assert_eq!(ji.row[3 + k], -ji.row[k]);
        }
        for (a, b) in ij.row.iter().zip(&ji.row) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        prop_assert!(rel(ij.bound, ji.bound, 1.0) < 1e-12);
    }

    #[test]
    fn barrier_is_translation_invariant(qi in state(1.0), qj in state(1.0), shift in vec3(-5.0..5.0), geom in geometry(), p in poles()) {
        prop_assume!(qi.r != qj.r);
        let gains = lindyn::place_poles(p).unwrap();
        let moved = |q: &IntegratorState| IntegratorState::new(q.r + shift, q.dr, q.ddr, q.dddr);
        let a = barrier::constraint_row(&[qi, qj], 0, 1, &geom, &gains).unwrap();
        let b = barrier::constraint_row(&[moved(&qi), moved(&qj)], 0, 1, &geom, &gains).unwrap();
        // Shifting rounds the offsets, so compare at the scale of the terms.
        let scale = 1.0 + a.bound.abs() + a.row.iter().map(|x| x.abs()).sum::<f64>();
        for (x, y) in a.eta.to_array().iter().zip(b.eta.to_array()) {
            prop_assert!((x - y).abs() <= 1e-9 * scale);
        }
        for (x, y) in a.row.iter().zip(&b.row) {
            prop_assert!((x - y).abs() <= 1e-9 * scale);
        }
        prop_assert!((a.bound - b.bound).abs() <= 1e-9 * scale);
    }

    #[test]
    fn row_is_snap_gradient(qi in state(1.0), qj in state(1.0), vi in vec3(-5.0..5.0), vj in vec3(-5.0..5.0), geom in geometry()) {
        prop_assume!(qi.r != qj.r);
        let row = barrier::constraint_row(&[qi, qj], 0, 1, &geom, &Default::default()).unwrap();
        let eps = 1e-3;
        let h4 = barrier::fourth_derivative(&qi, &qj, &vi, &vj, &geom);
        let row_max = row.row.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        // Relative to the row, plus the rounding of differencing h'''' itself.
        let tol = 1e-6 * row_max + 1e-12 * (h4.abs() + row_max * 10.0) / eps;
        for k in 0..3 {
            let e = Vec3::from_fn(|r, _| if r == k { eps } else { 0.0 });
            // h'''' is affine in the snaps, so central differences are exact
            // up to rounding.
            let di = (barrier::fourth_derivative(&qi, &qj, &(vi + e), &vj, &geom)
                - barrier::fourth_derivative(&qi, &qj, &(vi - e), &vj, &geom)) / (2.0 * eps);
            let dj = (barrier::fourth_derivative(&qi, &qj, &vi, &(vj + e), &geom)
                - barrier::fourth_derivative(&qi, &qj, &vi, &(vj - e), &geom)) / (2.0 * eps);
            prop_assert!((-row.row[k] - di).abs() <= tol, "{} vs {}", -row.row[k], di);
            prop_assert!((-row.row[3 + k] - dj).abs() <= tol, "{} vs {}", -row.row[3 + k], dj);
        }
    }

    #[test]
    fn row_blocks_are_opposite(states in prop::collection::vec(state(2.0), 3..6), geom in geometry()) {
        let m = states.len();
        prop_assume!((0..m).all(|i| (i + 1..m).all(|j| states[i].r != states[j].r)));
        let rows = barrier::assemble_certificates(&states, &geom, &Default::default()).unwrap();
        prop_assert_eq!(rows.len(), m * (m - 1) / 2);
        for c in &rows {
            for (k, a) in c.row.iter().enumerate() {
                let owner = k / 3;
                if owner != c.i && owner != c.j {
                    prop_assert_eq!(*a, 0.0);
                }
            }
            for k in 0..3 {
                prop_assert_eq!(c.row[3 * c.i + k], -c.row[3 * c.j + k]);
            }
        }
    }

    #[test]
    fn cylinder_bounds_rectangle_in_plane(d in vec3(-1.0..1.0), d_s in 0.1f64..0.4, c in 1.0f64..3.0) {
        let qi = IntegratorState::at_rest(Vec3::new(d.x, d.y, 0.0));
        let qj = IntegratorState::at_rest(Vec3::zeros());
        let rect = barrier::barrier_value(&qi, &qj, &SafetyGeometry { d_s, c, shape: Shape::Rectangle });
        let cyl = barrier::barrier_value(&qi, &qj, &SafetyGeometry { d_s, c, shape: Shape::Cylinder { n: 4 } });
        prop_assert!(rect <= cyl + 1e-15);
    }

    #[test]
    fn outputs_follow_the_recursion(states in prop::collection::vec(state(1.0), 2..5), geom in geometry(), p in poles()) {
        let m = states.len();
        prop_assume!((0..m).all(|i| (i + 1..m).all(|j| states[i].r != states[j].r)));
        let gains = lindyn::place_poles(p).unwrap();
        let report = barrier::check_initial_conditions(&states, &geom, &gains);
        prop_assert_eq!(report.pass, report.pairs.iter().all(|o| o.y.iter().all(|y| *y >= 0.0)));
        let (qi, qj) = (states[0], states[1]);
        let y_at = |t: f64| {
            let a = oracle::propagate_exact(&qi, &Vec3::zeros(), t);
            let b = oracle::propagate_exact(&qj, &Vec3::zeros(), t);
            barrier::pair_outputs(&barrier::eta(&a, &b, &geom), &p)
        };
        let y = y_at(0.0);
        prop_assert_eq!(y, report.pairs[0].y);
        for k in 1..4 {
            let dy = oracle::first_derivative_fd(|t| y_at(t)[k - 1], 1e-4);
            let expected = dy + p[k - 1] * y[k - 1];
            let scale = 1.0 + dy.abs() + (p[k - 1] * y[k - 1]).abs();
            prop_assert!((y[k] - expected).abs() <= 1e-6 * scale, "y{k}: {} vs {expected}", y[k]);
        }
    }

    #[test]
    fn projection_satisfies_kkt(problem in qp_problem()) {
        let (x0, rows) = problem;
        let p = match qp::project(&x0, &rows) {
            Ok(p) => p,
            Err(_) => {
                let pairs: Vec<(Vec<f64>, f64)> = rows.iter().map(|r| (r.a.clone(), r.b)).collect();
                prop_assert!(oracle::brute_force_projection(&x0, &pairs, 1e-9).is_none());
                return Ok(());
            }
        };
        let pairs: Vec<(Vec<f64>, f64)> = rows.iter().map(|r| (r.a.clone(), r.b)).collect();
        let reference = oracle::brute_force_projection(&x0, &pairs, 1e-10);
        prop_assume!(reference.as_ref().map_or(false, |r| well_conditioned(&rows, &r.active)));
        let reference = reference.unwrap();
        prop_assert!(qp::kkt_residual(&x0, &rows, &p) < qp::KKT_TOL);
        for (&k, &u) in p.active.iter().zip(&p.multipliers) {
            prop_assert!(u >= 0.0);
            prop_assert!((2.0 * u * rows[k].slack(&p.x)).abs() < 1e-8);
        }
        for row in &rows {
            prop_assert!(row.slack(&p.x) >= -qp::FEASIBILITY_TOL);
        }
        // Nothing feasible is closer to the nominal than the solver's answer.
        let dist = |x: &[f64]| x.iter().zip(&x0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        prop_assert!(dist(&p.x) <= reference.objective * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn projection_is_deterministic_and_lipschitz(problem in qp_problem(), dir in prop::collection::vec(-1.0f64..1.0, 9)) {
        let (x0, rows) = problem;
        let Ok(p) = qp::project(&x0, &rows) else { return Ok(()) };
        prop_assume!(well_conditioned(&rows, &p.active));
        prop_assert_eq!(&qp::project(&x0, &rows).unwrap(), &p);
        let eps = 1e-6;
        let x1: Vec<f64> = x0.iter().zip(&dir).map(|(x, d)| x + eps * d).collect();
        let p1 = qp::project(&x1, &rows).unwrap();
        let moved = p.x.iter().zip(&p1.x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let pushed = x0.iter().zip(&x1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        // Euclidean projection onto a convex set is non-expansive.
        prop_assert!(moved <= pushed * (1.0 + 1e-6) + 1e-12, "{moved} > {pushed}");
    }

    #[test]
    fn flatness_rotation_matches_body_rates(traj in poly(), t in 0.0f64..1.0) {
        let params = VehicleParams::default();
        let h = 1e-5;
        let rot = |t: f64| flatness::flat_to_state(&traj.sample(t), &params).unwrap().rotation;
        let st = flatness::flat_to_state(&traj.sample(t), &params).unwrap();
        let r_dot = (rot(t + h) - rot(t - h)) / (2.0 * h);
        let err = (r_dot - st.rotation * skew(&st.body_rates)).norm();
        prop_assert!(err < 1e-4, "{err}");
        let orth = (st.rotation.transpose() * st.rotation - Matrix3::identity()).abs().max();
        prop_assert!(orth < 1e-10);
    }

    #[test]
    fn flatness_angular_acceleration_matches_rates(traj in poly(), t in 0.0f64..1.0) {
        let params = VehicleParams::default();
        let h = 1e-5;
        let w = |t: f64| flatness::flat_to_state(&traj.sample(t), &params).unwrap().body_rates;
        let fd = (w(t + h) - w(t - h)) / (2.0 * h);
        let an = flatness::angular_acceleration(&traj.sample(t), &params).unwrap();
        prop_assert!((fd - an).norm() < 1e-4 * (1.0 + an.norm()), "{fd:?} vs {an:?}");
    }

    #[test]
    fn newton_residual_vanishes(traj in poly(), t in 0.0f64..1.0, z_up in any::<bool>()) {
        let params = VehicleParams { z_up, ..Default::default() };
        let s = traj.sample(t);
        let st = flatness::flat_to_state(&s, &params).unwrap();
        let u = flatness::flat_to_input(&s, &params).unwrap();
        let resid = s.ddr * params.mass - params.gravity_direction() * params.hover_thrust() - st.thrust_axis_world(&params) * u.thrust;
        prop_assert!(resid.norm() < 1e-14, "{resid:?}");
    }

    #[test]
    fn flatness_commutes_with_time_shift(traj in poly(), t in 0.0f64..0.5, tau in 0.0f64..0.5) {
        let params = VehicleParams::default();
        // Re-expand the polynomial about tau.
        let shifted = Poly { coeffs: (0..traj.coeffs.len()).map(|k| traj.derivative(k, tau)).collect() };
        let a = flatness::flat_to_state(&traj.sample(t + tau), &params).unwrap();
        let b = flatness::flat_to_state(&shifted.sample(t), &params).unwrap();
        prop_assert!((a.rotation - b.rotation).abs().max() < 1e-9);
        prop_assert!((a.body_rates - b.body_rates).norm() < 1e-9);
    }

    #[test]
    fn bezier_is_c4(p0 in vec3(-2.0..2.0), p1 in vec3(-2.0..2.0), duration in 0.5f64..6.0, u in 0.001f64..0.999) {
        let traj = reference::bezier_interp(p0, p1, duration);
        check_c4(&traj, u * duration)?;
        // Orders 0..=4 are continuous across the endpoint holds.
        for t in [0.0, duration] {
            let (lo, hi) = (traj.eval(t - 1e-14), traj.eval(t + 1e-14));
            for k in 0..5 {
                prop_assert!((lo[k] - hi[k]).norm() < 1e-6, "order {k} jumps at t = {t}");
            }
        }
    }

    #[test]
    fn circle_is_c4(radius in 0.0f64..1.0, w in -2.0f64..2.0, phase in -3.2f64..3.2, t in 0.0f64..10.0) {
        check_c4(&reference::circle_ref(radius, w, phase, -0.8, Vec3::zeros()), t)?;
    }

    #[test]
    fn bezier_translation_invariance(p0 in vec3(-2.0..2.0), p1 in vec3(-2.0..2.0), shift in vec3(-5.0..5.0), duration in 0.5f64..6.0) {
        let a = reference::bezier_interp(p0, p1, duration);
        let b = reference::bezier_interp(p0 + shift, p1 + shift, duration);
        let length = |traj: &ReferenceTrajectory| {
            let n = 400;
            (0..n).map(|k| traj.eval(duration * (k as f64 + 0.5) / n as f64)[1].norm() * duration / n as f64).sum::<f64>()
        };
        let (la, lb) = (length(&a), length(&b));
        prop_assert!((la - lb).abs() <= 1e-12 * (1.0 + la));
        prop_assert!((la - (p1 - p0).norm()).abs() <= 1e-3 * (1.0 + la));
    }

    #[test]
    fn virtual_clock_never_outruns_time(k_s in 0.0f64..200.0, errors in prop::collection::vec(vec3(-0.5..0.5), 1..300)) {
        let dt = lindyn::DEFAULT_DT;
        let mut clock = VirtualClock::new(k_s);
        for (n, e) in errors.iter().enumerate() {
            let next = reference::clock_step(&clock, e, dt);
            prop_assert!(next.s >= clock.s);
            prop_assert!(next.s_dot > 0.0 || k_s * e.norm_squared() > 700.0);
            prop_assert!(next.s_dot <= 1.0);
            prop_assert!(next.s <= (n + 1) as f64 * dt * (1.0 + 1e-12));
            clock = next;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn random_scenarios_stay_safe(seed in 0u64..10_000, m in 2usize..5, k_s in prop_oneof![Just(0.0), Just(100.0)]) {
        let mut config = scenario::random_scenario(seed, m);
        config.duration = 3.0;
        config.k_s = k_s;
        let trace = pipeline::simulate(&config, k_s).unwrap();
        let safety = trace.safety(&config.geometry);
        prop_assert!(safety.min_h >= -pipeline::SAFETY_TOL, "min h {}", safety.min_h);
        prop_assert!(pipeline::certificates_respected(&trace));
        prop_assert_eq!(pipeline::untouched_violation(&trace, qp::FEASIBILITY_TOL), 0.0);
        for k in 0..m {
            let s: Vec<f64> = trace.steps.iter().map(|st| st.vehicles[k].s).collect();
            prop_assert!(s.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(trace.steps.iter().all(|st| st.vehicles[k].s <= st.t + 1e-9));
        }
        let again = pipeline::simulate(&config, k_s).unwrap();
        prop_assert!(again == trace);
    }
}

fn check_c4(traj: &ReferenceTrajectory, t: f64) -> Result<(), TestCaseError> {
    let central = |h: f64, k: usize| (traj.eval(t + h)[k] - traj.eval(t - h)[k]) / (2.0 * h);
    let h = 1e-4;
    let d = traj.eval(t);
    for k in 0..4 {
        let fd = (central(h / 2.0, k) * 4.0 - central(h, k)) / 3.0;
        let scale = d[k + 1].norm().max(d[k].norm()).max(1.0);
        prop_assert!((fd - d[k + 1]).norm() <= 1e-6 * scale, "order {}: {fd:?} vs {:?}", k + 1, d[k + 1]);
    }
    Ok(())
}

fn qp_problem() -> impl Strategy<Value = (Vec<f64>, Vec<Halfspace>)> {
    (1usize..=9, 1usize..=5).prop_flat_map(|(n, k)| {
        (
            prop::collection::vec(-4.0f64..4.0, n),
            prop::collection::vec(
                (prop::collection::vec(-2.0f64..2.0, n), -2.0f64..2.0).prop_map(|(a, b)| Halfspace { a, b }),
                k,
            ),
        )
    })
}

fn well_conditioned(rows: &[Halfspace], active: &[usize]) -> bool {
    if active.is_empty() {
        return true;
    }
    let n = rows[active[0]].a.len();
    let cols = DMatrix::from_fn(n, active.len(), |r, c| rows[active[c]].a[r]);
    let sv = (cols.transpose() * &cols).singular_values();
    sv.min() > 0.0 && sv.max() / sv.min() < sbcert::verify::MAX_CONDITION
}
