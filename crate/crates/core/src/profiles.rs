//! Radial profiles of `Δv^m + αv + βx·∇v = 0`: the regular profile `v_λ`, the
//! singular profile `g_λ` and the exact cylinder `(C*/r²)^{1/(1−m)}`.
//!
//! All solves run in `s = log r` on the autonomous first-order system
//!
//! ```text
//! z = log(r² v^{1−m}),   p = r v'/v
//! z' = (1−m) p + 2
//! p' = −m p² − (n−2) p − (α + β p) eᶻ / m
//! ```
//!
//! which keeps both variables O(1) over the tail (`z → log C*`) and turns the
//! `λ`-rescalings into shifts in `s`.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::fd;
use crate::ode::{self, Integrator, Method, OdeSystem};
use crate::params::{ValidParams, BETA1_REL_TOL};

/// Default node spacing in `s` for profile grids.
pub const DEFAULT_DS: f64 = 0.01;

/// Default singular start radius in units of the characteristic radius `1/λ`.
pub const DEFAULT_XI0_FACTOR: f64 = 1e-6;

/// Truncation order of the singular start expansion.
pub const SINGULAR_SERIES_ORDER: usize = 12;

/// Above this initial stiffness `βeᶻ/m` the automatic method choice is Rosenbrock.
const STIFF_THRESHOLD: f64 = 1e4;

/// Stencil width for numerical derivatives of stored profiles.
const FD_WIDTH: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Regular,
    Singular,
    Cylinder,
}

impl fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProfileKind::Regular => "regular",
            ProfileKind::Singular => "singular",
            ProfileKind::Cylinder => "cylinder",
        };
        f.write_str(s)
    }
}

/// Coefficients of the radial equation `(r^{n−1}(v^m)')' + α r^{n−1} v + β r^n v' = 0`.
///
/// Usually `α = (2β+ρ₁)/(1−m)`; inverted profiles carry `(α', β')` instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equation {
    pub n: u32,
    pub m: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Equation {
    pub fn from_params(params: &ValidParams) -> Self {
        Self {
            n: params.n,
            m: params.m,
            alpha: params.alpha(),
            beta: params.beta,
        }
    }
}

/// Uniform grid in `s = log r`. Nodes are `start + k·step`, evaluated the same
/// way everywhere so grids with equal `(start, step)` share bit-identical nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl SGrid {
    pub fn new(start: f64, step: f64, len: usize) -> Self {
        assert!(step > 0.0 && len >= 1, "grid needs positive step and a node");
        Self { start, step, len }
    }

    /// Grid from `start` covering at least `end` with spacing `step`.
    pub fn spanning(start: f64, end: f64, step: f64) -> Self {
        let len = ((end - start) / step).ceil().max(0.0) as usize + 1;
        Self::new(start, step, len)
    }

    pub fn node(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len).map(|k| self.node(k)).collect()
    }

    pub fn end(&self) -> f64 {
        self.node(self.len - 1)
    }
}

/// How the singular shooting is started at `ξ₀`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingularStart {
    /// Exact leading power law `g(ξ₀) = cξ₀^{−α/β}`, `ξ₀g'/g = −α/β`. Its
    /// error in the profile is `O((λξ₀)^{ρ₁/β})`.
    PowerLaw,
    /// Leading power law times the asymptotic correction series in
    /// `(λξ₀)^{ρ₁/β}`; the start error drops below the integrator tolerance.
    #[default]
    Series,
}

/// Integrator settings for a profile solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    /// `None` picks Rosenbrock when the start is stiff, Dormand–Prince otherwise.
    pub method: Option<Method>,
    #[serde(default)]
    pub start: SingularStart,
}

impl SolverConfig {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            method: None,
            start: SingularStart::default(),
        }
    }

    pub fn with_start(self, start: SingularStart) -> Self {
        Self { start, ..self }
    }

    pub fn with_method(self, method: Method) -> Self {
        Self {
            method: Some(method),
            ..self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileMeta {
    pub tol: Option<f64>,
    pub method: Option<Method>,
    pub xi0: Option<f64>,
    pub start: Option<SingularStart>,
    /// Start radius of the series seed (regular profiles).
    pub seed_radius: Option<f64>,
    pub inverted: bool,
    pub steps: usize,
}

impl ProfileMeta {
    /// Metadata of a profile given in closed form.
    pub fn synthetic() -> Self {
        Self::exact()
    }

    fn exact() -> Self {
        Self {
            tol: None,
            method: None,
            xi0: None,
            start: None,
            seed_radius: None,
            inverted: false,
            steps: 0,
        }
    }
}

/// A positive radial function sampled on a uniform `s`-grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub kind: ProfileKind,
    pub params: ValidParams,
    pub equation: Equation,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    pub dv: Vec<f64>,
    pub meta: ProfileMeta,
}

impl RadialProfile {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn r(&self, i: usize) -> f64 {
        self.s[i].exp()
    }

    pub fn radii(&self) -> Vec<f64> {
        self.s.iter().map(|s| s.exp()).collect()
    }

    pub fn step(&self) -> f64 {
        if self.len() < 2 {
            return 0.0;
        }
        (self.s[self.len() - 1] - self.s[0]) / (self.len() - 1) as f64
    }

    /// Logarithmic slope `r v'/v` at each node.
    pub fn log_slope(&self) -> Vec<f64> {
        self.s
            .iter()
            .zip(self.v.iter().zip(&self.dv))
            .map(|(s, (v, dv))| s.exp() * dv / v)
            .collect()
    }

    /// `r^k v(r)` at each node, evaluated in log form.
    pub fn r_pow_v(&self, k: f64) -> Vec<f64> {
        self.s
            .iter()
            .zip(&self.v)
            .map(|(s, v)| (k * s + v.ln()).exp())
            .collect()
    }

    /// `r² v^{1−m}` at each node.
    pub fn cylinder_ratio(&self) -> Vec<f64> {
        let m = self.equation.m;
        self.s
            .iter()
            .zip(&self.v)
            .map(|(s, v)| (2.0 * s + (1.0 - m) * v.ln()).exp())
            .collect()
    }

    /// Value at an arbitrary radius: cubic Hermite interpolation of `log v`
    /// in `s` inside the grid, kind-specific asymptotics outside.
    pub fn eval(&self, r: f64) -> f64 {
        let n = self.len();
        if r <= 0.0 {
            return match self.kind {
                ProfileKind::Regular if !self.meta.inverted => self.params.lambda,
                _ => f64::INFINITY,
            };
        }
        let s = r.ln();
        let h = self.step();
        if s < self.s[0] {
            return match (self.kind, self.meta.inverted) {
                (ProfileKind::Regular, false) => regular_series(&self.params, r).0,
                (ProfileKind::Cylinder, _) => cylinder_value(self.params.cstar(), self.equation.m, s),
                _ => {
                    let p0 = self.s[0].exp() * self.dv[0] / self.v[0];
                    (self.v[0].ln() + p0 * (s - self.s[0])).exp()
                }
            };
        }
        if s >= self.s[n - 1] || n < 2 {
            if self.kind == ProfileKind::Cylinder {
                return cylinder_value(self.params.cstar(), self.equation.m, s);
            }
            let last = n - 1;
            let p = self.s[last].exp() * self.dv[last] / self.v[last];
            return (self.v[last].ln() + p * (s - self.s[last])).exp();
        }
        let k = (((s - self.s[0]) / h).floor() as usize).min(n - 2);
        let t = (s - self.s[k]) / h;
        let (y0, y1) = (self.v[k].ln(), self.v[k + 1].ln());
        let m0 = h * self.s[k].exp() * self.dv[k] / self.v[k];
        let m1 = h * self.s[k + 1].exp() * self.dv[k + 1] / self.v[k + 1];
        let t2 = t * t;
        let t3 = t2 * t;
        let y = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1;
        y.exp()
    }
}

impl RadialProfile {
    /// CSV with columns `r, s, v, dv, r^{α/β}v, r²v^{1−m}` and an optional
    /// residual column, in round-trip precision.
    pub fn to_csv(&self, residual: Option<&[f64]>) -> String {
        let eq = &self.equation;
        let weighted = self.r_pow_v(eq.alpha / eq.beta);
        let ratio = self.cylinder_ratio();
        let mut out = String::from("r,s,v,dv,r_pow_alpha_over_beta_v,r2_v_pow_1_minus_m");
        if residual.is_some() {
            out.push_str(",residual");
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.r(i),
                self.s[i],
                self.v[i],
                self.dv[i],
                weighted[i],
                ratio[i]
            ));
            if let Some(res) = residual {
                out.push_str(&format!(",{:.16e}", res[i]));
            }
            out.push('\n');
        }
        out
    }
}

fn cylinder_value(cstar: f64, m: f64, s: f64) -> f64 {
    ((cstar.ln() - 2.0 * s) / (1.0 - m)).exp()
}

/// The `(z, p)` system of the module docs.
struct ProfileOde {
    n: f64,
    m: f64,
    alpha: f64,
    beta: f64,
}

impl ProfileOde {
    fn new(eq: &Equation) -> Self {
        Self {
            n: eq.n as f64,
            m: eq.m,
            alpha: eq.alpha,
            beta: eq.beta,
        }
    }
}

impl OdeSystem<2> for ProfileOde {
    fn rhs(&self, _s: f64, y: &[f64; 2]) -> [f64; 2] {
        let [z, p] = *y;
        let ez = z.exp();
        [
            (1.0 - self.m) * p + 2.0,
            -self.m * p * p - (self.n - 2.0) * p - (self.alpha + self.beta * p) * ez / self.m,
        ]
    }

    fn jacobian(&self, _s: f64, y: &[f64; 2]) -> [[f64; 2]; 2] {
        let [z, p] = *y;
        let ez = z.exp();
        [
            [0.0, 1.0 - self.m],
            [
                -(self.alpha + self.beta * p) * ez / self.m,
                -2.0 * self.m * p - (self.n - 2.0) - self.beta * ez / self.m,
            ],
        ]
    }
}

/// Converts `(s, z, p)` back to `(v, v')`.
fn unpack(m: f64, s: f64, z: f64, p: f64) -> (f64, f64) {
    let v = ((z - 2.0 * s) / (1.0 - m)).exp();
    (v, p * v / s.exp())
}

/// Second-order series of the regular profile at the origin:
/// `v = λ(1 + a r² + b r⁴) + O(r⁶)`; returns `(v, v')`.
pub fn regular_series(params: &ValidParams, r: f64) -> (f64, f64) {
    let (a, b) = regular_series_coefficients(params);
    let lam = params.lambda;
    let r2 = r * r;
    (
        lam * (1.0 + a * r2 + b * r2 * r2),
        lam * (2.0 * a * r + 4.0 * b * r2 * r),
    )
}

/// Coefficients `(a, b)` of the origin series, from balancing powers of `r`
/// in the radial equation.
pub fn regular_series_coefficients(params: &ValidParams) -> (f64, f64) {
    let n = params.n as f64;
    let m = params.m;
    let alpha = params.alpha();
    let beta = params.beta;
    let lm = params.lambda.powf(1.0 - m);
    let a = -alpha * lm / (2.0 * n * m);
    let b = (-(alpha + 2.0 * beta) * lm * a / (4.0 * (n + 2.0)) - m * (m - 1.0) * a * a / 2.0) / m;
    (a, b)
}

/// Start radius for the regular shooting: `|a| r² = √tol`, so the neglected
/// series terms perturb the slope `r v'/v` by about `tol`.
pub fn regular_seed_radius(params: &ValidParams, tol: f64) -> f64 {
    let (a, _) = regular_series_coefficients(params);
    (tol.sqrt() / a.abs()).sqrt()
}

fn choose_method(cfg: &SolverConfig, eq: &Equation, z0: f64) -> Method {
    cfg.method.unwrap_or_else(|| {
        if eq.beta.abs() * z0.exp() / eq.m > STIFF_THRESHOLD {
            Method::Rosenbrock4
        } else {
            Method::Dopri5
        }
    })
}

/// Exact cylinder solution `(C*/r²)^{1/(1−m)}` on the grid.
pub fn cylinder(params: &ValidParams, grid: &SGrid) -> RadialProfile {
    let m = params.m;
    let cstar = params.cstar();
    let s = grid.nodes();
    let v: Vec<f64> = s.iter().map(|&s| cylinder_value(cstar, m, s)).collect();
    let dv = s
        .iter()
        .zip(&v)
        .map(|(s, v)| -2.0 / (1.0 - m) * v / s.exp())
        .collect();
    RadialProfile {
        kind: ProfileKind::Cylinder,
        params: *params,
        equation: Equation::from_params(params),
        s,
        v,
        dv,
        meta: ProfileMeta::exact(),
    }
}

/// Regular profile `v_λ` on `[seed, r_max]` with the default node spacing.
pub fn solve_regular(params: &ValidParams, r_max: f64, tol: f64) -> Result<RadialProfile> {
    if !(r_max > 0.0) {
        return Err(Error::Range(format!("r_max = {r_max} must be positive")));
    }
    let seed = regular_seed_radius(params, tol);
    let grid = SGrid::spanning(seed.ln(), r_max.ln().max(seed.ln()), DEFAULT_DS);
    solve_regular_on(params, &grid, &SolverConfig::new(tol))
}

/// Regular profile `v_λ` sampled on `grid`. Nodes below the series seed
/// radius are filled from the series itself.
pub fn solve_regular_on(params: &ValidParams, grid: &SGrid, cfg: &SolverConfig) -> Result<RadialProfile> {
    let eq = Equation::from_params(params);
    let m = params.m;
    let seed = regular_seed_radius(params, cfg.tol).min(grid.node(0).exp());
    let s_seed = seed.ln();
    let (v0, dv0) = regular_series(params, seed);
    let z0 = (1.0 - m) * v0.ln() + 2.0 * s_seed;
    let p0 = seed * dv0 / v0;
    let method = choose_method(cfg, &eq, z0);
    let integrator = Integrator::new(method, cfg.tol);

    let nodes = grid.nodes();
    let targets: Vec<f64> = nodes.iter().copied().filter(|&s| s >= s_seed).collect();
    let head = nodes.len() - targets.len();
    let (states, stats) = ode::integrate(&ProfileOde::new(&eq), &integrator, s_seed, [z0, p0], &targets, |s, y| {
        if y[0] - 2.0 * s < (1.0 - m) * f64::MIN_POSITIVE.ln() {
            return Err(Error::NonPositive { s });
        }
        Ok(())
    })?;

    let mut v = Vec::with_capacity(nodes.len());
    let mut dv = Vec::with_capacity(nodes.len());
    for &s in &nodes[..head] {
        let (a, b) = regular_series(params, s.exp());
        v.push(a);
        dv.push(b);
    }
    for (s, [z, p]) in targets.iter().zip(states) {
        let (a, b) = unpack(m, *s, z, p);
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::NonPositive { s: *s });
        }
        v.push(a);
        dv.push(b);
    }
    Ok(RadialProfile {
        kind: ProfileKind::Regular,
        params: *params,
        equation: eq,
        s: nodes,
        v,
        dv,
        meta: ProfileMeta {
            tol: Some(cfg.tol),
            method: Some(method),
            xi0: None,
            start: None,
            seed_radius: Some(seed),
            inverted: false,
            steps: stats.accepted,
        },
    })
}

/// Default singular start radius `10⁻⁸/λ`.
pub fn default_xi0(params: &ValidParams) -> f64 {
    DEFAULT_XI0_FACTOR / params.lambda
}

/// Start radius at which the near-origin variable `(λξ₀)^{ρ₁/β}` equals `eps`;
/// used where the blow-up limit itself is measured.
pub fn head_xi0(params: &ValidParams, eps: f64) -> f64 {
    eps.powf(params.beta / params.rho1) / params.lambda
}

/// Singular profile `g_λ` on `[ξ₀, r_max]` with the default node spacing.
pub fn solve_singular(params: &ValidParams, xi0: f64, r_max: f64, tol: f64) -> Result<RadialProfile> {
    if !(xi0 > 0.0 && xi0 < r_max) {
        return Err(Error::Range(format!("need 0 < xi0 = {xi0} < r_max = {r_max}")));
    }
    let grid = SGrid::spanning(xi0.ln(), r_max.ln(), DEFAULT_DS);
    solve_singular_on(params, xi0, &grid, &SolverConfig::new(tol))
}

/// Shooting solution started at `ξ₀` from the exact power law
/// `g(ξ₀) = c ξ₀^{−α/β}`, `g'(ξ₀) = −(α/β) c ξ₀^{−α/β−1}`, `c = λ^{−ρ₁/((1−m)β)}`,
/// sampled on `grid` (whose first node must not precede `log ξ₀`).
pub fn solve_singular_on(params: &ValidParams, xi0: f64, grid: &SGrid, cfg: &SolverConfig) -> Result<RadialProfile> {
    if !(xi0 > 0.0) {
        return Err(Error::Range(format!("xi0 = {xi0} must be positive")));
    }
    let s0 = xi0.ln();
    if grid.node(0) < s0 - 1e-12 * s0.abs().max(1.0) {
        return Err(Error::Range(format!(
            "grid starts at s = {} below log(xi0) = {s0}",
            grid.node(0)
        )));
    }
    let eq = Equation::from_params(params);
    let m = params.m;
    let ratio = eq.alpha / eq.beta;
    let [z0, p0] = match cfg.start {
        SingularStart::PowerLaw => {
            let c = params.blowup_coefficient();
            [(1.0 - m) * (c.ln() - ratio * s0) + 2.0 * s0, -ratio]
        }
        SingularStart::Series => SingularSeries::new(params, SINGULAR_SERIES_ORDER).state(s0),
    };
    let method = choose_method(cfg, &eq, z0);
    let integrator = Integrator::new(method, cfg.tol);
    let slack = (1e3 * cfg.tol).max(1e-8) * ratio.max(1.0);

    let mut targets = grid.nodes();
    // the first node may sit a rounding error below log ξ₀
    if targets[0] < s0 {
        targets[0] = s0;
    }
    let (states, stats) = ode::integrate(&ProfileOde::new(&eq), &integrator, s0, [z0, p0], &targets, |s, y| {
        let p = y[1];
        if p > slack {
            return Err(Error::InvariantViolation(format!(
                "g' > 0 at s = {s:.6} (r g'/g = {p:.3e})"
            )));
        }
        if p < -ratio - slack {
            return Err(Error::InvariantViolation(format!(
                "r^(alpha/beta) g decreasing at s = {s:.6} (r g'/g = {p:.6})"
            )));
        }
        Ok(())
    })?;
    let nodes = grid.nodes();
    let mut v = Vec::with_capacity(nodes.len());
    let mut dv = Vec::with_capacity(nodes.len());
    for (s, [z, p]) in nodes.iter().zip(states) {
        let (a, b) = unpack(m, *s, z, p);
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::NonPositive { s: *s });
        }
        v.push(a);
        dv.push(b);
    }
    Ok(RadialProfile {
        kind: ProfileKind::Singular,
        params: *params,
        equation: eq,
        s: nodes,
        v,
        dv,
        meta: ProfileMeta {
            tol: Some(cfg.tol),
            method: Some(method),
            xi0: Some(xi0),
            start: Some(cfg.start),
            seed_radius: None,
            inverted: false,
            steps: stats.accepted,
        },
    })
}

/// Formal expansion of the singular trajectory near the origin.
///
/// Along `g_λ` the slope is a function of `z` alone, `p = Σ aₖ e^{−kz}` with
/// `a₀ = −α/β`, and `ζ = (1−m) log(r^{α/β} g / c)` expands as
/// `ζ = Σ bₖ εᵏ` in `ε = (λr)^κ`, `κ = ρ₁/β`. Both series are asymptotic with
/// coefficients shrinking roughly like `k!(mρ₁/β²)ᵏ`.
#[derive(Debug, Clone)]
pub struct SingularSeries {
    /// Slope coefficients `aₖ`.
    pub slope: Vec<f64>,
    /// Coefficients `bₖ` of `ζ`, with `b₀ = 0`.
    pub zeta: Vec<f64>,
    kappa: f64,
    m: f64,
    log_c: f64,
}

impl SingularSeries {
    pub fn new(params: &ValidParams, order: usize) -> Self {
        let m = params.m;
        let beta = params.beta;
        let n2 = params.n as f64 - 2.0;
        let kappa = params.rho1 / beta;
        let mut a = vec![-params.alpha() / beta];
        for k in 1..=order {
            let (mut quad, mut cross) = (0.0, 0.0);
            for i in 0..k {
                let j = k - 1 - i;
                quad += a[i] * a[j];
                cross += j as f64 * a[j] * a[i];
            }
            let prev = a[k - 1];
            a.push(m / beta * (-m * quad - n2 * prev + 2.0 * (k - 1) as f64 * prev + (1.0 - m) * cross));
        }
        // ζ' = κ Σ k bₖ εᵏ must equal (1−m) Σ aⱼ εʲ e^{−jζ}
        let mut b = vec![0.0; order + 1];
        for k in 1..=order {
            let neg: Vec<f64> = b.iter().map(|x| -x).collect();
            let e = series_exp(&neg, k);
            let mut power = e.clone();
            let mut rhs = 0.0;
            for j in 1..=k {
                rhs += a[j] * power[k - j];
                power = series_mul(&power, &e, k);
            }
            b[k] = (1.0 - m) * rhs / (kappa * k as f64);
        }
        Self {
            slope: a,
            zeta: b,
            kappa,
            m,
            log_c: params.blowup_coefficient().ln(),
        }
    }

    /// `(λr)^κ` at `s = log r`.
    pub fn epsilon(&self, s: f64) -> f64 {
        (self.kappa * s - (1.0 - self.m) * self.log_c).exp()
    }

    /// `r^{α/β} g / c` at `s`.
    pub fn weight(&self, s: f64) -> f64 {
        (horner(&self.zeta, self.epsilon(s)) / (1.0 - self.m)).exp()
    }

    /// Start state `(z, p)` at `s`.
    pub fn state(&self, s: f64) -> [f64; 2] {
        let zeta = horner(&self.zeta, self.epsilon(s));
        let z = (1.0 - self.m) * self.log_c + zeta - self.kappa * s;
        [z, horner(&self.slope, (-z).exp())]
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn series_mul(a: &[f64], b: &[f64], order: usize) -> Vec<f64> {
    (0..=order)
        .map(|k| (0..=k).map(|i| a.get(i).unwrap_or(&0.0) * b.get(k - i).unwrap_or(&0.0)).sum())
        .collect()
}

/// `exp(f)` for a series with `f₀ = 0`, truncated at `order`.
fn series_exp(f: &[f64], order: usize) -> Vec<f64> {
    let mut g = vec![1.0];
    for k in 1..=order {
        let sum: f64 = (1..=k).map(|i| i as f64 * f.get(i).unwrap_or(&0.0) * g[k - i]).sum();
        g.push(sum / k as f64);
    }
    g
}

/// Maximum relative change on `[2ξ₀, r_max]` when the singular start radius is
/// halved: an estimate of the error committed by starting at `ξ₀ > 0`.
pub fn xi0_halving_change(params: &ValidParams, xi0: f64, r_max: f64, cfg: &SolverConfig) -> Result<f64> {
    let grid = SGrid::spanning(xi0.ln(), r_max.ln(), DEFAULT_DS);
    let coarse = solve_singular_on(params, xi0, &grid, cfg)?;
    let fine = solve_singular_on(params, 0.5 * xi0, &grid, cfg)?;
    let cut = (2.0 * xi0).ln();
    Ok(coarse
        .s
        .iter()
        .zip(coarse.v.iter().zip(&fine.v))
        .filter(|(s, _)| **s >= cut)
        .map(|(_, (a, b))| ((a - b) / b).abs())
        .fold(0.0, f64::max))
}

/// Flux `r^{n−1}(v^m)'` divided by `r^{n−1}`, i.e. `m v^{m−1} v'`.
fn reduced_flux(eq: &Equation, v: f64, dv: f64) -> f64 {
    eq.m * v.powf(eq.m - 1.0) * dv
}

/// Scaled node-wise residual of `(r^{n−1}(v^m)')' + α r^{n−1} v + β r^n v' = 0`.
///
/// The flux derivative is taken numerically from the stored `(v, v')` as
/// `J · d(log|J|)/ds / r`, which is exact for power laws. Each residual is
/// divided by the sum of the magnitudes of the three terms.
///
/// Rounding in the stored `v'` limits the attainable residual wherever the
/// flux is nearly constant in `s` (for example an inverted regular profile far
/// from its image of the origin).
pub fn ode_residual(profile: &RadialProfile) -> Vec<f64> {
    let n = profile.len();
    assert!(n >= 3, "ode_residual needs at least three nodes");
    let eq = &profile.equation;
    let nf = eq.n as f64;
    let h = profile.step();
    // log|J| with J = r^{n−1} m v^{m−1} v'
    let flux: Vec<f64> = profile
        .v
        .iter()
        .zip(&profile.dv)
        .map(|(v, dv)| reduced_flux(eq, *v, *dv))
        .collect();
    let same_sign = flux.iter().all(|f| *f < 0.0) || flux.iter().all(|f| *f > 0.0);
    let dflux_ds: Vec<f64> = if same_sign {
        let logj: Vec<f64> = profile
            .s
            .iter()
            .zip(&flux)
            .map(|(s, f)| (nf - 1.0) * s + f.abs().ln())
            .collect();
        fd::uniform_derivative(&logj, h, 1, FD_WIDTH)
            .into_iter()
            .zip(&flux)
            .map(|(d, f)| d * f)
            .collect()
    } else {
        // J/r^{n−1} on its own: d/ds (r^{n−1} f) / r^{n−1} = f' + (n−1) f
        let d = fd::uniform_derivative(&flux, h, 1, FD_WIDTH);
        d.iter().zip(&flux).map(|(d, f)| d + (nf - 1.0) * f).collect()
    };
    (0..n)
        .map(|i| {
            let r = profile.r(i);
            let t1 = dflux_ds[i] / r;
            let t2 = eq.alpha * profile.v[i];
            let t3 = eq.beta * r * profile.dv[i];
            let scale = t1.abs() + t2.abs() + t3.abs();
            if scale == 0.0 {
                0.0
            } else {
                (t1 + t2 + t3) / scale
            }
        })
        .collect()
}

/// Scaled node-wise residual of the integrated equation
/// `r^{n−1}(v^m)' + βr^n v = (nβ−α) ∫₀^r v ρ^{n−1} dρ`
/// (or `= βλ^{−ρ₁/((1−m)β)}` for singular profiles at `β = β₁`).
///
/// The integral is accumulated on the grid in `s` with the weight `e^{ns}`;
/// the part below the first node is completed from the leading behaviour.
pub fn integral_identity_residual(profile: &RadialProfile) -> Result<Vec<f64>> {
    if profile.meta.inverted {
        return Err(Error::WrongKind("inverted profile".into()));
    }
    let params = &profile.params;
    let eq = &profile.equation;
    let nf = eq.n as f64;
    let beta1 = params.beta1();
    let on_beta1 = (params.beta - beta1).abs() <= BETA1_REL_TOL * beta1;
    if profile.kind == ProfileKind::Singular && params.beta < beta1 && !on_beta1 {
        return Err(Error::WrongRegime {
            beta: params.beta,
            beta1,
        });
    }
    let n = profile.len();
    let h = profile.step();
    let s0 = profile.s[0];
    let r0 = s0.exp();

    let rhs_scaled: Vec<f64> = if profile.kind == ProfileKind::Singular && on_beta1 {
        let c = params.blowup_coefficient();
        // everything is divided by r^n below
        profile.s.iter().map(|s| eq.beta * c * (-nf * s).exp()).collect()
    } else {
        // ∫ v ρ^{n−1} dρ = ∫ v e^{ns} ds; integrate v e^{n(s−s0)} to keep magnitudes tame
        let f: Vec<f64> = profile
            .s
            .iter()
            .zip(&profile.v)
            .map(|(s, v)| v * (nf * (s - s0)).exp())
            .collect();
        let df: Vec<f64> = profile
            .s
            .iter()
            .zip(profile.v.iter().zip(&profile.dv))
            .map(|(s, (v, dv))| (s.exp() * dv + nf * v) * (nf * (s - s0)).exp())
            .collect();
        let cumulative = fd::cumulative_hermite(&f, &df, h);
        let v0 = profile.v[0];
        // head ∫₀^{r0} v ρ^{n−1} dρ divided by r0^n
        let head = match profile.kind {
            ProfileKind::Cylinder => v0 / (nf - 2.0 / (1.0 - eq.m)),
            ProfileKind::Singular => singular_head(profile, r0),
            ProfileKind::Regular => {
                let (a, b) = regular_series_coefficients(params);
                let r2 = r0 * r0;
                params.lambda * (1.0 / nf + a * r2 / (nf + 2.0) + b * r2 * r2 / (nf + 4.0))
            }
        };
        let factor = nf * eq.beta - eq.alpha;
        profile
            .s
            .iter()
            .zip(cumulative)
            .map(|(s, c)| factor * (head + c) * (-nf * (s - s0)).exp())
            .collect()
    };
    Ok((0..n)
        .map(|i| {
            let r = profile.r(i);
            // terms divided by r^n
            let flux = reduced_flux(eq, profile.v[i], profile.dv[i]) / r;
            let drift = eq.beta * profile.v[i];
            let scale = flux.abs() + drift.abs();
            (flux + drift - rhs_scaled[i]) / scale
        })
        .collect())
}

/// `∫₀^{r₀} g ρ^{n−1} dρ / r₀ⁿ` for a singular profile, using the same
/// expansion that started it.
fn singular_head(profile: &RadialProfile, r0: f64) -> f64 {
    let params = &profile.params;
    let exponent = profile.equation.n as f64 - profile.equation.alpha / profile.equation.beta;
    let c = params.blowup_coefficient();
    let lead = c * r0.powf(-profile.equation.alpha / profile.equation.beta);
    match profile.meta.start {
        Some(SingularStart::Series) => {
            let ser = SingularSeries::new(params, SINGULAR_SERIES_ORDER);
            let scaled: Vec<f64> = ser.zeta.iter().map(|b| b / (1.0 - params.m)).collect();
            let weight = series_exp(&scaled, SINGULAR_SERIES_ORDER);
            let eps = ser.epsilon(r0.ln());
            let kappa = params.rho1 / params.beta;
            let sum: f64 = weight
                .iter()
                .enumerate()
                .map(|(k, d)| d * eps.powi(k as i32) / (exponent + kappa * k as f64))
                .sum();
            lead * sum
        }
        _ => lead / exponent,
    }
}

/// Inversion `ṽ(ρ) = ρ^{−(n−2)/m} v(1/ρ)` for `m = (n−2)/(n+2)`; the result
/// solves the equation with `α' = α − ((n−2)/m)β`, `β' = −β`.
pub fn invert(profile: &RadialProfile) -> Result<RadialProfile> {
    let eq = profile.equation;
    let nf = eq.n as f64;
    let expected = (nf - 2.0) / (nf + 2.0);
    if (eq.m - expected).abs() > 1e-14 {
        return Err(Error::WrongExponent {
            expected,
            got: eq.m,
        });
    }
    if eq.beta == 0.0 {
        return Err(Error::Range("inversion needs beta != 0".into()));
    }
    let k = (nf - 2.0) / eq.m;
    let mut s = Vec::with_capacity(profile.len());
    let mut v = Vec::with_capacity(profile.len());
    let mut dv = Vec::with_capacity(profile.len());
    for i in (0..profile.len()).rev() {
        let si = profile.s[i];
        let p = si.exp() * profile.dv[i] / profile.v[i];
        let vi = (k * si).exp() * profile.v[i];
        let s_new = -si;
        s.push(s_new);
        v.push(vi);
        dv.push(vi * (-k - p) / s_new.exp());
    }
    let mut meta = profile.meta.clone();
    meta.inverted = !meta.inverted;
    Ok(RadialProfile {
        kind: profile.kind,
        params: profile.params,
        equation: Equation {
            alpha: eq.alpha - k * eq.beta,
            beta: -eq.beta,
            ..eq
        },
        s,
        v,
        dv,
        meta,
    })
}

/// The `λ₂` profile obtained by exact rescaling of a stored `λ₁` profile.
///
/// Singular: `g_{λ₂}(x) = μ^{2/(1−m)} g_{λ₁}(μx)`; regular:
/// `v_{λ₂}(x) = μ v_{λ₁}(μ^{(1−m)/2} x)`, with `μ = λ₂/λ₁`. The output grid is
/// the input grid shifted by the argument factor.
pub fn rescale_lambda(profile: &RadialProfile, lambda2: f64) -> Result<RadialProfile> {
    if profile.meta.inverted {
        return Err(Error::WrongKind("inverted profile".into()));
    }
    let params = &profile.params;
    let beta1 = params.beta1();
    if params.beta < beta1 && (params.beta - beta1).abs() > BETA1_REL_TOL * beta1 {
        return Err(Error::WrongRegime {
            beta: params.beta,
            beta1,
        });
    }
    let m = params.m;
    let mu = lambda2 / params.lambda;
    let (amplitude, argument) = match profile.kind {
        ProfileKind::Singular => (mu.powf(2.0 / (1.0 - m)), mu),
        ProfileKind::Regular => (mu, mu.powf((1.0 - m) / 2.0)),
        ProfileKind::Cylinder => return Err(Error::WrongKind("cylinder".into())),
    };
    let new_params = params.with_lambda(lambda2)?;
    let shift = argument.ln();
    let mut meta = profile.meta.clone();
    meta.xi0 = meta.xi0.map(|x| x / argument);
    meta.seed_radius = meta.seed_radius.map(|x| x / argument);
    Ok(RadialProfile {
        kind: profile.kind,
        params: new_params,
        equation: profile.equation,
        s: profile.s.iter().map(|s| s - shift).collect(),
        v: profile.v.iter().map(|v| amplitude * v).collect(),
        dv: profile.dv.iter().map(|d| amplitude * argument * d).collect(),
        meta,
    })
}

/// Outcome of checking the pointwise invariants of a singular profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularChecks {
    pub max_log_slope: f64,
    pub monotone_decreasing: bool,
    pub weighted_nondecreasing: bool,
    pub lower_bound_holds: bool,
    /// `sup log(λ^{ρ₁/((1−m)β)} r^{α/β} g) / r^{ρ₁/β}` over the grid; finite
    /// exactly when the exponential envelope holds with some constant.
    pub envelope_sup: f64,
}

pub fn check_singular(profile: &RadialProfile, slack: f64) -> SingularChecks {
    let params = &profile.params;
    let eq = &profile.equation;
    let ratio = eq.alpha / eq.beta;
    let c = params.blowup_coefficient();
    let slopes = profile.log_slope();
    let weighted = profile.r_pow_v(ratio);
    let max_log_slope = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weighted_nondecreasing = weighted.windows(2).all(|w| w[1] >= w[0] * (1.0 - slack));
    let lower_bound_holds = weighted.iter().all(|w| *w >= c * (1.0 - slack));
    let rho_over_beta = params.rho1 / params.beta;
    let envelope_sup = profile
        .s
        .iter()
        .zip(&weighted)
        .map(|(s, w)| (w / c).ln() / (rho_over_beta * s).exp())
        .fold(f64::NEG_INFINITY, f64::max);
    SingularChecks {
        max_log_slope,
        monotone_decreasing: max_log_slope <= slack,
        weighted_nondecreasing,
        lower_bound_holds,
        envelope_sup,
    }
}

/// Largest `min_i (upper_i − lower_i)/upper_i` margin for the strict sandwich
/// `lower < middle < upper` on common nodes; positive when it holds everywhere.
pub fn sandwich_margin(lower: &RadialProfile, middle: &RadialProfile, upper: &RadialProfile) -> Result<f64> {
    for other in [middle, upper] {
        if other.s != lower.s {
            return Err(Error::GridMismatch("sandwich needs identical s-grids".into()));
        }
    }
    Ok((0..lower.len())
        .map(|i| {
            let a = (middle.v[i] - lower.v[i]) / middle.v[i];
            let b = (upper.v[i] - middle.v[i]) / middle.v[i];
            a.min(b)
        })
        .fold(f64::INFINITY, f64::min))
}
