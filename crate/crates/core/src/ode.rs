//! Adaptive one-step integrators for small autonomous-or-not ODE systems.
//!
//! Two embedded pairs are provided: the explicit Dormand–Prince 5(4) pair and
//! a four-stage Rosenbrock 4(3) pair for stiff stretches. Both step exactly
//! onto each requested output abscissa, so no dense output is needed.

use crate::error::{Error, Result};

/// A first-order system `y' = f(s, y)` of fixed dimension.
///
/// The Rosenbrock stepper ignores `∂f/∂s`; use it only for autonomous systems.
pub trait OdeSystem<const N: usize> {
    fn rhs(&self, s: f64, y: &[f64; N]) -> [f64; N];

    /// Jacobian `∂f/∂y`, row-major. Only the Rosenbrock stepper calls it.
    fn jacobian(&self, s: f64, y: &[f64; N]) -> [[f64; N]; N];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Dopri5,
    Rosenbrock4,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Integrator {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    /// Total accepted plus rejected steps before giving up.
    pub max_steps: usize,
}

impl Integrator {
    pub fn new(method: Method, tol: f64) -> Self {
        Self {
            method,
            rtol: tol,
            atol: tol,
            max_steps: 20_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

// Shampine's parameter set for the 4(3) Rosenbrock pair (autonomous form).
const R_GAM: f64 = 0.5;
const R_A21: f64 = 2.0;
const R_A31: f64 = 48.0 / 25.0;
const R_A32: f64 = 6.0 / 25.0;
const R_C21: f64 = -8.0;
const R_C31: f64 = 372.0 / 25.0;
const R_C32: f64 = 12.0 / 5.0;
const R_C41: f64 = -112.0 / 125.0;
const R_C42: f64 = -54.0 / 125.0;
const R_C43: f64 = -2.0 / 5.0;
const R_B: [f64; 4] = [19.0 / 9.0, 0.5, 25.0 / 108.0, 125.0 / 108.0];
const R_E: [f64; 4] = [17.0 / 54.0, 7.0 / 36.0, 0.0, 125.0 / 108.0];

fn axpy<const N: usize>(y: &[f64; N], terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        if *c != 0.0 {
            for i in 0..N {
                out[i] += c * k[i];
            }
        }
    }
    out
}

fn error_norm<const N: usize>(err: &[f64; N], y0: &[f64; N], y1: &[f64; N], it: &Integrator) -> f64 {
    let sum: f64 = (0..N)
        .map(|i| {
            let sc = it.atol + it.rtol * y0[i].abs().max(y1[i].abs());
            (err[i] / sc).powi(2)
        })
        .sum();
    (sum / N as f64).sqrt()
}

/// Solves `M x = b` for small dense `M` by Gaussian elimination with partial pivoting.
fn solve_dense<const N: usize>(mut m: [[f64; N]; N], mut b: [f64; N]) -> Option<[f64; N]> {
    for col in 0..N {
        let piv = (col..N).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col] == 0.0 || !m[piv][col].is_finite() {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..N {
            let f = m[row][col] / m[col][col];
            for k in col..N {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let tail: f64 = (row + 1..N).map(|k| m[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / m[row][row];
    }
    Some(x)
}

struct Trial<const N: usize> {
    y: [f64; N],
    err: f64,
}

fn dopri_step<const N: usize, S: OdeSystem<N>>(
    sys: &S,
    s: f64,
    y: &[f64; N],
    k1: &[f64; N],
    h: f64,
    it: &Integrator,
) -> Trial<N> {
    let mut k = [[0.0; N]; 7];
    k[0] = *k1;
    for stage in 1..7 {
        let terms: Vec<(f64, &[f64; N])> =
            (0..stage).map(|j| (h * A[stage][j], &k[j])).collect();
        let ys = axpy(y, &terms);
        k[stage] = sys.rhs(s + C[stage] * h, &ys);
    }
    let terms: Vec<(f64, &[f64; N])> = (0..6).map(|j| (h * A[6][j], &k[j])).collect();
    let y_new = axpy(y, &terms);
    let mut err = [0.0; N];
    for i in 0..N {
        err[i] = h * (0..7).map(|j| E[j] * k[j][i]).sum::<f64>();
    }
    let e = error_norm(&err, y, &y_new, it);
    Trial { y: y_new, err: e }
}

fn rosenbrock_step<const N: usize, S: OdeSystem<N>>(
    sys: &S,
    s: f64,
    y: &[f64; N],
    f0: &[f64; N],
    h: f64,
    it: &Integrator,
) -> Option<Trial<N>> {
    let jac = sys.jacobian(s, y);
    let mut m = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..N {
            m[i][j] = -jac[i][j];
        }
        m[i][i] += 1.0 / (R_GAM * h);
    }
    let g1 = solve_dense(m, *f0)?;
    let f2 = sys.rhs(s + h, &axpy(y, &[(R_A21, &g1)]));
    let g2 = solve_dense(m, axpy(&f2, &[(R_C21 / h, &g1)]))?;
    let f3 = sys.rhs(s + 0.6 * h, &axpy(y, &[(R_A31, &g1), (R_A32, &g2)]));
    let g3 = solve_dense(m, axpy(&f3, &[(R_C31 / h, &g1), (R_C32 / h, &g2)]))?;
    let g4 = solve_dense(
        m,
        axpy(&f3, &[(R_C41 / h, &g1), (R_C42 / h, &g2), (R_C43 / h, &g3)]),
    )?;
    let gs = [&g1, &g2, &g3, &g4];
    let y_new = axpy(y, &[(R_B[0], gs[0]), (R_B[1], gs[1]), (R_B[2], gs[2]), (R_B[3], gs[3])]);
    let mut err = [0.0; N];
    for i in 0..N {
        err[i] = (0..4).map(|j| R_E[j] * gs[j][i]).sum();
    }
    Some(Trial {
        y: y_new,
        err: error_norm(&err, y, &y_new, it),
    })
}

/// Integrates from `(s0, y0)` and returns the state at each abscissa of `targets`,
/// which must be nondecreasing and not below `s0`.
///
/// `check` runs after every accepted step and may abort the integration.
pub fn integrate<const N: usize, S, F>(
    sys: &S,
    it: &Integrator,
    s0: f64,
    y0: [f64; N],
    targets: &[f64],
    mut check: F,
) -> Result<(Vec<[f64; N]>, Stats)>
where
    S: OdeSystem<N>,
    F: FnMut(f64, &[f64; N]) -> Result<()>,
{
    let mut out = Vec::with_capacity(targets.len());
    let mut stats = Stats::default();
    let mut s = s0;
    let mut y = y0;
    let mut f = sys.rhs(s, &y);
    let span = targets.last().map_or(0.0, |&t| t - s0).abs().max(1e-3);
    let mut h = initial_step(&f, &y, it, span);
    let order_exp = match it.method {
        Method::Dopri5 => 0.2,
        Method::Rosenbrock4 => 0.25,
    };

    for &target in targets {
        if target < s - 1e-14 * s.abs().max(1.0) {
            return Err(Error::IntegrationFailure {
                s,
                reason: format!("output abscissa {target} precedes current position"),
            });
        }
        while s < target {
            if stats.accepted + stats.rejected >= it.max_steps {
                return Err(Error::IntegrationFailure {
                    s,
                    reason: format!("step budget of {} exhausted", it.max_steps),
                });
            }
            let remaining = target - s;
            let last = h >= remaining;
            let step = if last { remaining } else { h };
            let trial = match it.method {
                Method::Dopri5 => Some(dopri_step(sys, s, &y, &f, step, it)),
                Method::Rosenbrock4 => rosenbrock_step(sys, s, &y, &f, step, it),
            };
            let (err, y_new) = match trial {
                Some(t) if t.err.is_finite() && t.y.iter().all(|v| v.is_finite()) => (t.err, t.y),
                _ => (f64::INFINITY, y),
            };
            if err <= 1.0 {
                stats.accepted += 1;
                s = if last { target } else { s + step };
                y = y_new;
                f = sys.rhs(s, &y);
                check(s, &y)?;
                let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-order_exp)).clamp(0.2, 5.0) };
                // a step shortened to land on the target says nothing about h
                if !last || step >= h {
                    h = step * grow;
                } else {
                    h = h.max(step * grow);
                }
            } else {
                stats.rejected += 1;
                let shrink = if err.is_finite() { (0.9 * err.powf(-order_exp)).clamp(0.1, 0.9) } else { 0.1 };
                h = step * shrink;
                if h < 1e-14 * s.abs().max(1.0) {
                    return Err(Error::IntegrationFailure {
                        s,
                        reason: format!("step size collapsed to {h:.3e}"),
                    });
                }
            }
        }
        out.push(y);
    }
    Ok((out, stats))
}

fn initial_step<const N: usize>(f: &[f64; N], y: &[f64; N], it: &Integrator, span: f64) -> f64 {
    let d0 = (0..N)
        .map(|i| (y[i] / (it.atol + it.rtol * y[i].abs())).powi(2))
        .sum::<f64>()
        .sqrt();
    let d1 = (0..N)
        .map(|i| (f[i] / (it.atol + it.rtol * y[i].abs())).powi(2))
        .sum::<f64>()
        .sqrt();
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h.min(span)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// y' = -y², y(0) = 1 → y = 1/(1+s); z' = -k (z - cos t) - sin t relaxes
    /// stiffly onto z = cos t; t' = 1 carries time so the system is autonomous.
    struct TestSys {
        k: f64,
    }

    impl OdeSystem<3> for TestSys {
        fn rhs(&self, _s: f64, y: &[f64; 3]) -> [f64; 3] {
            [-y[0] * y[0], -self.k * (y[1] - y[2].cos()) - y[2].sin(), 1.0]
        }
        fn jacobian(&self, _s: f64, y: &[f64; 3]) -> [[f64; 3]; 3] {
            [
                [-2.0 * y[0], 0.0, 0.0],
                [0.0, -self.k, -self.k * y[2].sin() - y[2].cos()],
                [0.0, 0.0, 0.0],
            ]
        }
    }

    fn run(method: Method, k: f64, tol: f64) -> ([f64; 3], Stats) {
        let it = Integrator::new(method, tol);
        let (ys, stats) =
            integrate(&TestSys { k }, &it, 0.0, [1.0, 1.0, 0.0], &[1.0, 3.0], |_, _| Ok(())).unwrap();
        (ys[1], stats)
    }

    #[test]
    fn dopri_meets_tolerance() {
        let (y, _) = run(Method::Dopri5, 1.0, 1e-10);
        assert!((y[0] - 0.25).abs() < 1e-8, "{}", y[0]);
        assert!((y[1] - 3f64.cos()).abs() < 1e-8);
    }

    #[test]
    fn rosenbrock_meets_tolerance() {
        let (y, _) = run(Method::Rosenbrock4, 1.0, 1e-10);
        assert!((y[0] - 0.25).abs() < 1e-8, "{}", y[0]);
        assert!((y[1] - 3f64.cos()).abs() < 1e-8);
    }

    #[test]
    fn rosenbrock_is_fourth_order() {
        let sys = TestSys { k: 1.0 };
        let it = Integrator::new(Method::Rosenbrock4, 1.0);
        let err_at = |h: f64| {
            let mut y = [1.0, 1.0, 0.0];
            let mut s = 0.0;
            while s < 1.0 - 1e-12 {
                let f = sys.rhs(s, &y);
                y = rosenbrock_step(&sys, s, &y, &f, h, &it).unwrap().y;
                s += h;
            }
            (y[0] - 0.5).abs() + (y[1] - 1f64.cos()).abs()
        };
        let ratio = err_at(0.02) / err_at(0.01);
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn dopri_is_fifth_order() {
        let sys = TestSys { k: 1.0 };
        let it = Integrator::new(Method::Dopri5, 1.0);
        let err_at = |h: f64| {
            let mut y = [1.0, 1.0, 0.0];
            let mut s = 0.0;
            while s < 1.0 - 1e-12 {
                let f = sys.rhs(s, &y);
                y = dopri_step(&sys, s, &y, &f, h, &it).y;
                s += h;
            }
            (y[0] - 0.5).abs() + (y[1] - 1f64.cos()).abs()
        };
        let ratio = err_at(0.02) / err_at(0.01);
        assert!(ratio > 26.0 && ratio < 40.0, "ratio {ratio}");
    }

    #[test]
    fn stiff_problem_is_cheap_for_rosenbrock() {
        let (y, stats) = run(Method::Rosenbrock4, 1e7, 1e-8);
        assert!((y[1] - 3f64.cos()).abs() < 1e-6);
        let (_, explicit) = run(Method::Dopri5, 1e7, 1e-8);
        assert!(stats.accepted * 100 < explicit.accepted, "{stats:?} vs {explicit:?}");
    }

    #[test]
    fn reports_step_collapse() {
        struct Blowup;
        impl OdeSystem<1> for Blowup {
            fn rhs(&self, _s: f64, y: &[f64; 1]) -> [f64; 1] {
                [y[0] * y[0]]
            }
            fn jacobian(&self, _s: f64, y: &[f64; 1]) -> [[f64; 1]; 1] {
                [[2.0 * y[0]]]
            }
        }
        let it = Integrator::new(Method::Dopri5, 1e-10);
        // y = 1/(1-s) blows up at s = 1
        let err = integrate(&Blowup, &it, 0.0, [1.0], &[2.0], |_, _| Ok(())).unwrap_err();
        assert!(matches!(err, Error::IntegrationFailure { .. }));
    }
}
