//! Slow, independent reference implementations used to cross-check the
//! solver and the certificate algebra. Nothing here shares code with the
//! production paths beyond the plain data types.

use nalgebra::{Complex, Matrix4, Vector4};

use crate::lindyn::{IntegratorState, Vec3};

/// Gaussian elimination with partial pivoting; `None` if singular.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Optimum found by enumerating active sets.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub x: Vec<f64>,
    pub active: Vec<usize>,
    pub objective: f64,
}

/// Minimizes `|x - x0|^2` subject to `a_k . x <= b_k` by trying every
/// subset of rows as the active set. Exponential; meant for a handful of
/// rows. Returns `None` when no subset yields a feasible KKT point.
pub fn brute_force_projection(x0: &[f64], rows: &[(Vec<f64>, f64)], tol: f64) -> Option<OracleSolution> {
    let m = rows.len();
    assert!(m <= 16, "brute force limited to 16 rows");
    let mut best: Option<OracleSolution> = None;
    for mask in 0u32..(1 << m) {
        let set: Vec<usize> = (0..m).filter(|k| mask & (1 << k) != 0).collect();
        // Stationarity x = x0 - sum u_k a_k with a_k . x = b_k on the set:
        // G u = A x0 - b, G = A A^T.
        let gram: Vec<Vec<f64>> = set
            .iter()
            .map(|&p| set.iter().map(|&q| dot(&rows[p].0, &rows[q].0)).collect())
            .collect();
        let rhs: Vec<f64> = set.iter().map(|&p| dot(&rows[p].0, x0) - rows[p].1).collect();
        let u = if set.is_empty() {
            Vec::new()
        } else {
            match solve_linear(gram, rhs) {
                Some(u) => u,
                None => continue,
            }
        };
        let u_scale = u.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if u.iter().any(|&v| v < -tol * u_scale) {
            continue;
        }
        let mut x = x0.to_vec();
        for (c, &k) in set.iter().enumerate() {
            for (xi, ai) in x.iter_mut().zip(&rows[k].0) {
                *xi -= u[c] * ai;
            }
        }
        let feasible = rows.iter().all(|(a, b)| {
            let scale = 1.0 + b.abs() + a.iter().zip(&x).map(|(ai, xi)| (ai * xi).abs()).sum::<f64>();
            dot(a, &x) - b <= tol * scale
        });
        if !feasible {
            continue;
        }
        let objective: f64 = x.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().map_or(true, |s| objective < s.objective) {
            best = Some(OracleSolution {
                x,
                active: set,
                objective,
            });
        }
    }
    best
}

/// Eigenvalues of a 4x4 companion-form matrix after an exact power-of-two
/// diagonal balancing `D^-1 A D`, `D = diag(1, s, s^2, s^3)`.
///
/// The unbalanced closed loop has entries spanning several decades, which
/// costs the Hessenberg QR iteration about two digits.
pub fn companion_eigenvalues(a: &Matrix4<f64>) -> Vec<Complex<f64>> {
    let scale = a[(3, 0)].abs().powf(0.25);
    let s = if scale > 0.0 && scale.is_finite() {
        2f64.powi(scale.log2().round() as i32)
    } else {
        1.0
    };
    let d = Vector4::new(1.0, s, s * s, s * s * s);
    let balanced = Matrix4::from_fn(|r, c| a[(r, c)] * d[c] / d[r]);
    balanced.complex_eigenvalues().iter().copied().collect()
}

/// State after `t` seconds of constant snap `v`, by exact Taylor expansion.
pub fn propagate_exact(q: &IntegratorState, v: &Vec3, t: f64) -> IntegratorState {
    let (t2, t3, t4) = (t * t, t * t * t, t * t * t * t);
    IntegratorState {
        r: q.r + q.dr * t + q.ddr * (t2 / 2.0) + q.dddr * (t3 / 6.0) + v * (t4 / 24.0),
        dr: q.dr + q.ddr * t + q.dddr * (t2 / 2.0) + v * (t3 / 6.0),
        ddr: q.ddr + q.dddr * t + v * (t2 / 2.0),
        dddr: q.dddr + v * t,
    }
}

/// Fourth derivative at 0 from the seven-point central stencil, error
/// `O(step^4)`.
pub fn fourth_derivative_fd(f: impl Fn(f64) -> f64, step: f64) -> f64 {
    const W: [f64; 7] = [-1.0, 12.0, -39.0, 56.0, -39.0, 12.0, -1.0];
    let sum: f64 = W
        .iter()
        .enumerate()
        .map(|(k, w)| w * f((k as f64 - 3.0) * step))
        .sum();
    sum / (6.0 * step.powi(4))
}

/// Two levels of Richardson extrapolation of [`fourth_derivative_fd`] over
/// `step`, `step / 2` and `step / 4`, error `O(step^8)`.
pub fn fourth_derivative_richardson(f: impl Fn(f64) -> f64, step: f64) -> f64 {
    let d = [1.0, 2.0, 4.0].map(|k| fourth_derivative_fd(&f, step / k));
    let r1 = (16.0 * d[1] - d[0]) / 15.0;
    let r2 = (16.0 * d[2] - d[1]) / 15.0;
    (64.0 * r2 - r1) / 63.0
}

/// First derivative at 0 from the four-point central stencil.
pub fn first_derivative_fd(f: impl Fn(f64) -> f64, step: f64) -> f64 {
    (f(-2.0 * step) - 8.0 * f(-step) + 8.0 * f(step) - f(2.0 * step)) / (12.0 * step)
}
