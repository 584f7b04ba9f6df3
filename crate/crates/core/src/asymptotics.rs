//! Tail analysis in `s = log r`: deviation from the cylinder, the nonlinear
//! `w`-equation, and the second-order constants `(γ₁, B)`.
//!
//! With `q = (r^{2/(1−m)} v)^m / C*^{m/(1−m)}`, `w = q − 1` and
//! `F = (r²/C*)^{1/(1−m)} v − 1` we have `(1+F)^m = 1+w`. The normal forms are
//! `F ≈ −B e^{−γ₁s}` for regular profiles and `F ≈ +B e^{−γ₁s}` for singular
//! ones, `B > 0`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fd;
use crate::params::{DerivedConstants, ValidParams};
use crate::profiles::{Equation, ProfileKind, ProfileMeta, RadialProfile, SGrid};

/// Fewest nodes accepted in a fit window.
pub const MIN_WINDOW_NODES: usize = 10;

/// Fraction of the resolved range used by the default tail window.
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.4;

const FD_WIDTH: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogProfile {
    pub kind: ProfileKind,
    pub params: ValidParams,
    pub s: Vec<f64>,
    pub q: Vec<f64>,
    pub w: Vec<f64>,
    #[serde(rename = "F")]
    pub f: Vec<f64>,
    /// `log v` at each node.
    pub log_v: Vec<f64>,
}

impl LogProfile {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn step(&self) -> f64 {
        (self.s[self.len() - 1] - self.s[0]) / (self.len() - 1) as f64
    }

    /// `r² v^{1−m}` at each node.
    pub fn cylinder_ratio(&self) -> Vec<f64> {
        let m = self.params.m;
        self.s
            .iter()
            .zip(&self.log_v)
            .map(|(s, lv)| (2.0 * s + (1.0 - m) * lv).exp())
            .collect()
    }

    /// Whether `w` and `F` carry the sign of the profile kind at every node
    /// (negative for regular, positive for singular, zero for the cylinder).
    pub fn signs_hold(&self) -> bool {
        let ok = |x: f64| match self.kind {
            ProfileKind::Regular => x < 0.0,
            ProfileKind::Singular => x > 0.0,
            ProfileKind::Cylinder => x == 0.0,
        };
        self.w.iter().all(|&x| ok(x)) && self.f.iter().all(|&x| ok(x))
    }

    /// Largest `|(1+F)^m − 1 − w|` relative to `1 + |w|`.
    pub fn power_relation_defect(&self) -> f64 {
        let m = self.params.m;
        self.f
            .iter()
            .zip(&self.w)
            .map(|(f, w)| ((m * f.ln_1p()).exp_m1() - w).abs() / (1.0 + w.abs()))
            .fold(0.0, f64::max)
    }

    /// CSV with columns `s, q, w, F, F·e^{γ₁s}`.
    pub fn to_csv(&self, gamma1: f64) -> String {
        let mut out = String::from("s,q,w,F,F_exp_gamma1_s\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                self.s[i],
                self.q[i],
                self.w[i],
                self.f[i],
                self.f[i] * (gamma1 * self.s[i]).exp()
            ));
        }
        out
    }
}

pub fn to_log_profile(profile: &RadialProfile) -> LogProfile {
    let params = profile.params;
    let m = params.m;
    let log_cstar = params.cstar().ln();
    let log_v: Vec<f64> = profile.v.iter().map(|v| v.ln()).collect();
    let (q, w, f) = if profile.kind == ProfileKind::Cylinder {
        let n = profile.len();
        (vec![1.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        // log(1+F) = log v + (2s − log C*)/(1−m)
        let log1f: Vec<f64> = profile
            .s
            .iter()
            .zip(&log_v)
            .map(|(s, lv)| lv + (2.0 * s - log_cstar) / (1.0 - m))
            .collect();
        (
            log1f.iter().map(|l| (m * l).exp()).collect(),
            log1f.iter().map(|l| (m * l).exp_m1()).collect(),
            log1f.iter().map(|l| l.exp_m1()).collect(),
        )
    };
    LogProfile {
        kind: profile.kind,
        params,
        s: profile.s.clone(),
        q,
        w,
        f,
        log_v,
    }
}

/// Node-wise residual of
/// `w'' + (K₁ + (βC*/m)(1+w)^{1/m−1}) w' + K₂((1+w)^{1/m} − 1 − w) = 0`,
/// `K₁ = (n−2−(n+2)m)/(1−m)`, `K₂ = 2m(n−2−nm)/(1−m)²`, with seven-point
/// differences in `s`, divided by the sum of the term magnitudes.
pub fn w_equation_residual(logp: &LogProfile, params: &ValidParams) -> Vec<f64> {
    let n = logp.len();
    assert!(n >= 5, "w_equation_residual needs at least five nodes");
    let nf = params.n as f64;
    let m = params.m;
    let k1 = (nf - 2.0 - (nf + 2.0) * m) / (1.0 - m);
    let k2 = 2.0 * m * (nf - 2.0 - nf * m) / (1.0 - m).powi(2);
    let drift = params.beta * params.cstar() / m;
    let h = logp.step();
    let ws = fd::uniform_derivative(&logp.w, h, 1, FD_WIDTH);
    let wss = fd::uniform_derivative(&logp.w, h, 2, FD_WIDTH);
    (0..n)
        .map(|i| {
            let w = logp.w[i];
            let l = w.ln_1p();
            let t1 = wss[i];
            let t2 = (k1 + drift * ((1.0 / m - 1.0) * l).exp()) * ws[i];
            let t3 = k2 * ((l / m).exp_m1() - w);
            let scale = t1.abs() + t2.abs() + t3.abs();
            if scale == 0.0 {
                0.0
            } else {
                (t1 + t2 + t3) / scale
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitWindow {
    pub s_lo: f64,
    pub s_hi: f64,
}

impl FitWindow {
    pub fn new(s_lo: f64, s_hi: f64) -> Self {
        Self { s_lo, s_hi }
    }

    fn contains(&self, s: f64) -> bool {
        s >= self.s_lo && s <= self.s_hi
    }

    /// Two disjoint halves.
    pub fn halves(&self) -> [FitWindow; 2] {
        let mid = 0.5 * (self.s_lo + self.s_hi);
        [FitWindow::new(self.s_lo, mid), FitWindow::new(mid + f64::EPSILON * mid.abs().max(1.0), self.s_hi)]
    }
}

/// The last [`DEFAULT_WINDOW_FRACTION`] of the resolved range.
pub fn default_window(logp: &LogProfile) -> FitWindow {
    let hi = logp.s[logp.len() - 1];
    let lo = logp.s[0];
    FitWindow::new(hi - DEFAULT_WINDOW_FRACTION * (hi - lo), hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartialFit {
    pub window: FitWindow,
    pub gamma_hat: f64,
    pub b_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticFit {
    pub kind: ProfileKind,
    #[serde(rename = "Cstar_hat")]
    pub cstar_hat: f64,
    pub gamma_hat: f64,
    #[serde(rename = "B_hat")]
    pub b_hat: f64,
    pub window: FitWindow,
    /// Largest `|F − model| / |model|` over the window.
    pub residual: f64,
    pub nodes: usize,
    /// Whether `F` has the sign of the kind's normal form throughout.
    pub sign_ok: bool,
    /// Mean of `|w| e^{γ₁s}`, reported for comparison only.
    #[serde(rename = "B_w_diagnostic")]
    pub b_w: f64,
    /// Fits on the two disjoint halves of the window.
    pub halves: Option<[PartialFit; 2]>,
}

impl AsymptoticFit {
    /// Relative disagreement of the half-window `B` estimates.
    pub fn half_b_spread(&self) -> Option<f64> {
        self.halves
            .map(|[a, b]| (a.b_hat - b.b_hat).abs() / (0.5 * (a.b_hat + b.b_hat)))
    }

    /// Relative disagreement of the half-window decay exponents.
    pub fn half_gamma_spread(&self) -> Option<f64> {
        self.halves
            .map(|[a, b]| (a.gamma_hat - b.gamma_hat).abs() / (0.5 * (a.gamma_hat + b.gamma_hat)))
    }
}

fn window_nodes(logp: &LogProfile, window: &FitWindow) -> Vec<usize> {
    (0..logp.len()).filter(|&i| window.contains(logp.s[i])).collect()
}

fn partial_fit(logp: &LogProfile, idx: &[usize], gamma1: f64) -> Result<(f64, f64)> {
    if idx.len() < MIN_WINDOW_NODES {
        return Err(Error::WindowTooShort {
            found: idx.len(),
            needed: MIN_WINDOW_NODES,
        });
    }
    let f: Vec<f64> = idx.iter().map(|&i| logp.f[i]).collect();
    if f.contains(&0.0) {
        return Err(Error::NoDecay("F vanishes in the window".into()));
    }
    if !(f.iter().all(|x| *x > 0.0) || f.iter().all(|x| *x < 0.0)) {
        return Err(Error::NoDecay("F changes sign in the window".into()));
    }
    let s: Vec<f64> = idx.iter().map(|&i| logp.s[i]).collect();
    let log_f: Vec<f64> = f.iter().map(|x| x.abs().ln()).collect();
    let (_, slope) = fd::linear_fit(&s, &log_f);
    if !(slope < 0.0) {
        return Err(Error::NoDecay(format!("log|F| slope {slope:.3e} is not negative")));
    }
    let b = s
        .iter()
        .zip(&f)
        .map(|(s, f)| f.abs() * (gamma1 * s).exp())
        .sum::<f64>()
        / s.len() as f64;
    Ok((-slope, b))
}

/// Fits the tail normal form on `window` (default: the last 40% of the range).
///
/// `gamma_hat` is the least-squares decay rate of `|F|`; `B_hat` averages
/// `|F|e^{γ₁s}` with the exact `γ₁`; `Cstar_hat` is the constant term of a
/// least-squares fit of `r²v^{1−m}` on `1, e^{−γ₁s}, e^{−2γ₁s}`.
pub fn fit_tail(logp: &LogProfile, constants: &DerivedConstants, window: Option<FitWindow>) -> Result<AsymptoticFit> {
    let gamma1 = constants.gamma1()?;
    let window = window.unwrap_or_else(|| default_window(logp));
    let idx = window_nodes(logp, &window);
    if logp.kind == ProfileKind::Cylinder {
        return Err(Error::NoDecay("the cylinder has F = 0".into()));
    }
    let (gamma_hat, b_hat) = partial_fit(logp, &idx, gamma1)?;
    let sign = match logp.kind {
        ProfileKind::Regular => -1.0,
        _ => 1.0,
    };
    let sign_ok = idx.iter().all(|&i| logp.f[i] * sign > 0.0);
    let residual = idx
        .iter()
        .map(|&i| {
            let model = sign * b_hat * (-gamma1 * logp.s[i]).exp();
            ((logp.f[i] - model) / model).abs()
        })
        .fold(0.0, f64::max);
    let ratio = logp.cylinder_ratio();
    let y: Vec<f64> = idx.iter().map(|&i| ratio[i]).collect();
    let e1: Vec<f64> = idx.iter().map(|&i| (-gamma1 * logp.s[i]).exp()).collect();
    let e2: Vec<f64> = e1.iter().map(|x| x * x).collect();
    let cstar_hat = fd::least_squares(&[vec![1.0; idx.len()], e1, e2], &y)[0];
    let b_w = idx
        .iter()
        .map(|&i| logp.w[i].abs() * (gamma1 * logp.s[i]).exp())
        .sum::<f64>()
        / idx.len() as f64;
    let halves = if idx.len() >= 2 * MIN_WINDOW_NODES {
        let [a, b] = window.halves();
        let fa = partial_fit(logp, &window_nodes(logp, &a), gamma1)?;
        let fb = partial_fit(logp, &window_nodes(logp, &b), gamma1)?;
        Some([
            PartialFit {
                window: a,
                gamma_hat: fa.0,
                b_hat: fa.1,
            },
            PartialFit {
                window: b,
                gamma_hat: fb.0,
                b_hat: fb.1,
            },
        ])
    } else {
        None
    };
    Ok(AsymptoticFit {
        kind: logp.kind,
        cstar_hat,
        gamma_hat,
        b_hat,
        window,
        residual,
        nodes: idx.len(),
        sign_ok,
        b_w,
        halves,
    })
}

/// Exponent `e` in `B_{λ₂} = (λ₁/λ₂)^e B_{λ₁}`.
///
/// Regular profiles rescale their argument by `(λ₂/λ₁)^{(1−m)/2}`, giving
/// `e = (1−m)γ₁/2`; singular profiles rescale it by `λ₂/λ₁`, giving `e = γ₁`.
pub fn b_scaling_exponent(kind: ProfileKind, m: f64, gamma1: f64) -> Result<f64> {
    match kind {
        ProfileKind::Regular => Ok((1.0 - m) * gamma1 / 2.0),
        ProfileKind::Singular => Ok(gamma1),
        ProfileKind::Cylinder => Err(Error::WrongKind("cylinder".into())),
    }
}

/// `|B₂ / (B₁ (λ₁/λ₂)^e) − 1|` with `e` from [`b_scaling_exponent`].
pub fn check_b_scaling(
    fit1: &AsymptoticFit,
    fit2: &AsymptoticFit,
    lambda1: f64,
    lambda2: f64,
    constants: &DerivedConstants,
    m: f64,
) -> Result<f64> {
    if fit1.kind != fit2.kind {
        return Err(Error::KindMismatch(fit1.kind.to_string(), fit2.kind.to_string()));
    }
    let e = b_scaling_exponent(fit1.kind, m, constants.gamma1()?)?;
    Ok((fit2.b_hat / (fit1.b_hat * (lambda1 / lambda2).powf(e)) - 1.0).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlowupCheck {
    /// `λ^{−ρ₁/((1−m)β)}`.
    pub expected: f64,
    /// Extrapolated `lim_{r→0} r^{α/β} v`.
    pub limit: f64,
    /// `|limit/expected − 1|`.
    pub deviation: f64,
    /// `r^{α/β} v` at the first node and its relative deviation.
    pub at_first_node: f64,
    pub first_node_deviation: f64,
}

/// The blow-up extrapolation uses nodes with `ε ≤ BLOWUP_SPAN·ε(ξ₀)`.
const BLOWUP_SPAN: f64 = 5.0;
/// Degree of the blow-up extrapolation polynomial in `ε`.
const BLOWUP_DEGREE: usize = 3;

/// Estimates `lim_{r→0} r^{α/β} g(r)` by fitting `log(r^{α/β} g)` on the
/// smallest radii with a cubic in `ε = (λr)^{ρ₁/β}`, the variable of the
/// near-origin expansion, and compares it with `λ^{−ρ₁/((1−m)β)}`.
///
/// The extrapolation error scales like `ε(ξ₀)⁴`; profiles started with
/// [`crate::profiles::head_xi0`] at `ε = 10⁻³` resolve the limit to ~1e−13.
pub fn blowup_limit_check(logp: &LogProfile, params: &ValidParams) -> Result<BlowupCheck> {
    if logp.kind != ProfileKind::Singular {
        return Err(Error::WrongKind(logp.kind.to_string()));
    }
    let ratio = params.alpha() / params.beta;
    let kappa = params.rho1 / params.beta;
    let expected = params.blowup_coefficient();
    let eps_of = |s: f64| (kappa * (s + params.lambda.ln())).exp();
    let cut = BLOWUP_SPAN * eps_of(logp.s[0]);
    let n = logp.s.iter().take_while(|s| eps_of(**s) <= cut).count();
    if n < MIN_WINDOW_NODES {
        return Err(Error::WindowTooShort {
            found: n,
            needed: MIN_WINDOW_NODES,
        });
    }
    let y: Vec<f64> = (0..n).map(|i| logp.log_v[i] + ratio * logp.s[i]).collect();
    let eps: Vec<f64> = (0..n).map(|i| eps_of(logp.s[i])).collect();
    let basis: Vec<Vec<f64>> = (0..=BLOWUP_DEGREE)
        .map(|k| eps.iter().map(|e| e.powi(k as i32)).collect())
        .collect();
    let limit = fd::least_squares(&basis, &y)[0].exp();
    let first = y[0].exp();
    Ok(BlowupCheck {
        expected,
        limit,
        deviation: (limit / expected - 1.0).abs(),
        at_first_node: first,
        first_node_deviation: (first / expected - 1.0).abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeadExponent {
    pub window: FitWindow,
    pub slope: f64,
    /// `−mρ₁/((1−m)β)`.
    pub expected: f64,
    pub relative_deviation: f64,
}

/// Slope of `log w` against `s` over `window` (default: the first unit of `s`)
/// for a singular profile, compared with `−mρ₁/((1−m)β)`.
pub fn head_exponent(logp: &LogProfile, params: &ValidParams, window: Option<FitWindow>) -> Result<HeadExponent> {
    if logp.kind != ProfileKind::Singular {
        return Err(Error::WrongKind(logp.kind.to_string()));
    }
    let window = window.unwrap_or_else(|| FitWindow::new(logp.s[0], logp.s[0] + 1.0));
    let idx = window_nodes(logp, &window);
    if idx.len() < MIN_WINDOW_NODES {
        return Err(Error::WindowTooShort {
            found: idx.len(),
            needed: MIN_WINDOW_NODES,
        });
    }
    let s: Vec<f64> = idx.iter().map(|&i| logp.s[i]).collect();
    let lw: Vec<f64> = idx.iter().map(|&i| logp.w[i].ln()).collect();
    let (_, slope) = fd::linear_fit(&s, &lw);
    let expected = -params.m * params.rho1 / ((1.0 - params.m) * params.beta);
    Ok(HeadExponent {
        window,
        slope,
        expected,
        relative_deviation: ((slope - expected) / expected).abs(),
    })
}

/// Profile `v = (C*/r²)^{1/(1−m)}(1 + σ B r^{−γ})` on `grid`, with `σ = −1`
/// for the regular kind and `+1` for the singular kind. Used to exercise the
/// fitting machinery on an exactly known normal form.
pub fn normal_form_profile(params: &ValidParams, grid: &SGrid, kind: ProfileKind, b: f64, gamma: f64) -> Result<RadialProfile> {
    let sign = match kind {
        ProfileKind::Regular => -1.0,
        ProfileKind::Singular => 1.0,
        ProfileKind::Cylinder => return Err(Error::WrongKind("cylinder".into())),
    };
    let m = params.m;
    let log_cstar = params.cstar().ln();
    let s = grid.nodes();
    let mut v = Vec::with_capacity(s.len());
    let mut dv = Vec::with_capacity(s.len());
    for &si in &s {
        let base = ((log_cstar - 2.0 * si) / (1.0 - m)).exp();
        let corr = sign * b * (-gamma * si).exp();
        let value = base * (1.0 + corr);
        if !(value > 0.0) {
            return Err(Error::NonPositive { s: si });
        }
        // r v' = v·(−2/(1−m)) − γ base corr
        let r_dv = -2.0 / (1.0 - m) * value - gamma * base * corr;
        v.push(value);
        dv.push(r_dv / si.exp());
    }
    Ok(RadialProfile {
        kind,
        params: *params,
        equation: Equation::from_params(params),
        s,
        v,
        dv,
        meta: ProfileMeta::synthetic(),
    })
}
