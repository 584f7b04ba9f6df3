//! Radial fast diffusion `u_t = r^{1−n}(r^{n−1}(u^m)_r)_r` near extinction.
//!
//! Node-centred finite volumes with exact shell volumes, backward Euler in
//! time, and damped Newton on `W = u^m`. The Jacobian is a tridiagonal
//! M-matrix, so the scheme is monotone: ordered data stay ordered and the
//! weighted L¹ distance between two runs sharing boundary data cannot grow.
//!
//! Runs are anchored on the self-similar solutions
//! `ψ_λ(x,t) = (T−t)^α v_λ((T−t)^β x)` (ball grids) and
//! `V_λ(x,t) = (T−t)^α g_λ((T−t)^β x)` (punctured grids), and are observed
//! in the rescaled variables `ũ(y,s) = (T−t)^{−α} u((T−t)^{−β} y, t)`,
//! `s = −log(T−t)`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fd;
use crate::params::ValidParams;
use crate::profiles::{self, ProfileKind, RadialProfile, SGrid, SolverConfig, DEFAULT_DS};

/// Surface area of the unit sphere in `ℝⁿ`.
pub fn sphere_area(n: u32) -> f64 {
    // ω_{n−1} = 2π^{n/2}/Γ(n/2), by recursion ω_{k+1} = 2π ω_{k−1}/k
    let (mut w, mut k) = if n.is_multiple_of(2) { (2.0 * PI, 2u32) } else { (2.0, 1u32) };
    while k < n {
        w *= 2.0 * PI / k as f64;
        k += 2;
    }
    w
}

/// Radial nodes with their control volumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    pub n: u32,
    pub nodes: Vec<f64>,
    /// Control-volume measures `ω_{n−1}/n (r₊ⁿ − r₋ⁿ)`, half cells at the ends.
    pub weights: Vec<f64>,
    /// Cell faces `r_{i+1/2}` between consecutive nodes.
    pub faces: Vec<f64>,
}

impl RadialGrid {
    pub fn from_nodes(n: u32, nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::Range("a radial grid needs at least three nodes".into()));
        }
        if nodes[0] < 0.0 || nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Range("grid nodes must be nonnegative and strictly increasing".into()));
        }
        let omega = sphere_area(n);
        let nf = n as f64;
        let faces: Vec<f64> = nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let last = nodes.len() - 1;
        let weights = (0..nodes.len())
            .map(|i| {
                let lo = if i == 0 { nodes[0] } else { faces[i - 1] };
                let hi = if i == last { nodes[last] } else { faces[i] };
                omega / nf * (hi.powi(n as i32) - lo.powi(n as i32))
            })
            .collect();
        Ok(Self {
            n,
            nodes,
            weights,
            faces,
        })
    }

    /// Ball grid on `[0, r_max]` whose spacing starts at `h0` and grows by a
    /// constant factor: uniform near the centre, geometric in the far field.
    pub fn ball(n: u32, r_max: f64, cells: usize, h0: f64) -> Result<Self> {
        if !(r_max > 0.0 && h0 > 0.0) || cells < 2 {
            return Err(Error::Range("ball grid needs r_max, h0 > 0 and two cells".into()));
        }
        let nc = cells as f64;
        if h0 * nc > r_max {
            return Err(Error::Range(format!("h0 = {h0} too large for {cells} cells on [0, {r_max}]")));
        }
        // solve h0 (q^N − 1)/(q − 1) = r_max for q ≥ 1 in log q
        let span = |lq: f64| if lq == 0.0 { h0 * nc } else { h0 * (nc * lq).exp_m1() / lq.exp_m1() };
        let (mut lo, mut hi) = (0.0, 1.0);
        while span(hi) < r_max {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if span(mid) < r_max {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let q = (0.5 * (lo + hi)).exp();
        let mut nodes = Vec::with_capacity(cells + 1);
        let mut r = 0.0;
        let mut h = h0;
        nodes.push(0.0);
        for _ in 0..cells {
            r += h;
            h *= q;
            nodes.push(r);
        }
        nodes[cells] = r_max;
        Self::from_nodes(n, nodes)
    }

    /// Punctured grid on `[r_min, r_max]`, geometric.
    pub fn punctured(n: u32, r_min: f64, r_max: f64, cells: usize) -> Result<Self> {
        if !(r_min > 0.0 && r_max > r_min) || cells < 2 {
            return Err(Error::Range("punctured grid needs 0 < r_min < r_max and two cells".into()));
        }
        let ratio = (r_max / r_min).ln() / cells as f64;
        let mut nodes: Vec<f64> = (0..=cells).map(|i| r_min * (ratio * i as f64).exp()).collect();
        nodes[cells] = r_max;
        Self::from_nodes(n, nodes)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_ball(&self) -> bool {
        self.nodes[0] == 0.0
    }

    pub fn r_max(&self) -> f64 {
        self.nodes[self.len() - 1]
    }

    /// `ω_{n−1} r^{n−1}` at each face.
    fn face_areas(&self) -> Vec<f64> {
        let omega = sphere_area(self.n);
        self.faces.iter().map(|r| omega * r.powi(self.n as i32 - 1)).collect()
    }

    /// Transmissibilities `ω r_{i+1/2}^{n−1} / (r_{i+1} − r_i)`.
    fn conductances(&self) -> Vec<f64> {
        self.face_areas()
            .iter()
            .zip(self.nodes.windows(2))
            .map(|(a, w)| a / (w[1] - w[0]))
            .collect()
    }

    /// Piecewise-linear interpolation of nodal values at radius `r`.
    pub fn interpolate(&self, values: &[f64], r: f64) -> Result<f64> {
        let last = self.len() - 1;
        if r < self.nodes[0] || r > self.nodes[last] {
            return Err(Error::Range(format!(
                "radius {r:.6e} outside the grid [{:.6e}, {:.6e}]",
                self.nodes[0], self.nodes[last]
            )));
        }
        let k = self.nodes.partition_point(|x| *x <= r).clamp(1, last);
        let (r0, r1) = (self.nodes[k - 1], self.nodes[k]);
        let t = (r - r0) / (r1 - r0);
        Ok(values[k - 1] + t * (values[k] - values[k - 1]))
    }
}

/// `Σ weights·|a − b|`.
pub fn l1_distance(a: &[f64], b: &[f64], grid: &RadialGrid) -> Result<f64> {
    if a.len() != grid.len() || b.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "values of length {} and {} on a grid of {} nodes",
            a.len(),
            b.len(),
            grid.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .zip(&grid.weights)
        .map(|((x, y), w)| w * (x - y).abs())
        .sum())
}

/// `Σ weights·u`.
pub fn mass(u: &[f64], grid: &RadialGrid) -> f64 {
    u.iter().zip(&grid.weights).map(|(a, w)| a * w).sum()
}

/// An exact self-similar solution `(T−t)^α P((T−t)^β x)` built on a stored
/// profile `P` (regular for `ψ_λ`, singular for `V_λ`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfSimilar {
    pub profile: RadialProfile,
    pub big_t: f64,
}

impl SelfSimilar {
    pub fn new(profile: RadialProfile, big_t: f64) -> Result<Self> {
        if profile.kind == ProfileKind::Cylinder {
            return Err(Error::WrongKind("cylinder".into()));
        }
        require_rho1(&profile.params)?;
        if !(big_t > 0.0) {
            return Err(Error::Range(format!("extinction time T = {big_t} must be positive")));
        }
        Ok(Self { profile, big_t })
    }

    /// Solves the profile over the radii the run on `grid` up to slow time
    /// `s_end` will sample.
    pub fn for_run(params: &ValidParams, kind: ProfileKind, big_t: f64, grid: &RadialGrid, s_end: f64, tol: f64) -> Result<Self> {
        require_rho1(params)?;
        let beta = params.beta;
        let hi = (1.1 * grid.r_max() * big_t.powf(beta)).ln();
        let cfg = SolverConfig::new(tol);
        let profile = match kind {
            ProfileKind::Regular => {
                let seed = profiles::regular_seed_radius(params, tol).ln();
                profiles::solve_regular_on(params, &SGrid::spanning(seed, hi.max(seed + 1.0), DEFAULT_DS), &cfg)?
            }
            ProfileKind::Singular => {
                let lo = grid.nodes[0] * (-beta * s_end).exp() / 2.0;
                let xi0 = profiles::default_xi0(params).min(lo);
                profiles::solve_singular_on(params, xi0, &SGrid::spanning(xi0.ln(), hi, DEFAULT_DS), &cfg)?
            }
            ProfileKind::Cylinder => return Err(Error::WrongKind("cylinder".into())),
        };
        Self::new(profile, big_t)
    }

    pub fn params(&self) -> &ValidParams {
        &self.profile.params
    }

    pub fn value(&self, r: f64, t: f64) -> f64 {
        let tau = self.big_t - t;
        let p = self.params();
        tau.powf(p.alpha()) * self.profile.eval(tau.powf(p.beta) * r)
    }

    pub fn sample(&self, grid: &RadialGrid, t: f64) -> Vec<f64> {
        grid.nodes.iter().map(|&r| self.value(r, t)).collect()
    }

    /// The same construction at another `λ` by exact rescaling.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(profiles::rescale_lambda(&self.profile, lambda)?, self.big_t)
    }
}

fn require_rho1(params: &ValidParams) -> Result<()> {
    if params.rho1 != 1.0 {
        return Err(Error::Range(format!(
            "self-similar solutions need rho1 = 1, got {}",
            params.rho1
        )));
    }
    Ok(())
}

/// Outer boundary treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    /// Dirichlet data from the reference self-similar solution (both ends on
    /// punctured grids).
    Exact,
    /// Zero flux at the outer radius (ball grids only).
    NoFlux,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    /// Convergence threshold on `max |δW/W|`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 40,
        }
    }
}

/// Grid, boundary data and solver settings shared by all steps of a run.
#[derive(Debug, Clone)]
pub struct PdeProblem {
    pub grid: RadialGrid,
    pub m: f64,
    pub boundary: BoundaryMode,
    pub reference: Option<SelfSimilar>,
    pub newton: NewtonConfig,
    conductance: Vec<f64>,
}

impl PdeProblem {
    pub fn new(grid: RadialGrid, m: f64, boundary: BoundaryMode, reference: Option<SelfSimilar>) -> Result<Self> {
        match (boundary, &reference) {
            (BoundaryMode::Exact, None) => {
                return Err(Error::Range("exact boundary data need a reference solution".into()))
            }
            (BoundaryMode::NoFlux, _) if !grid.is_ball() => {
                return Err(Error::Range("no-flux runs need a ball grid".into()))
            }
            _ => {}
        }
        if !(m > 0.0 && m < 1.0) {
            return Err(Error::Range(format!("m = {m} must lie in (0, 1)")));
        }
        let conductance = grid.conductances();
        Ok(Self {
            grid,
            m,
            boundary,
            reference,
            newton: NewtonConfig::default(),
            conductance,
        })
    }

    /// `Σ weights·u` over the nodes without Dirichlet data.
    pub fn interior_mass(&self, u: &[f64]) -> f64 {
        let (first, last) = self.dirichlet_nodes();
        let n = self.grid.len();
        let lo = usize::from(first);
        let hi = n - usize::from(last);
        u[lo..hi].iter().zip(&self.grid.weights[lo..hi]).map(|(a, w)| a * w).sum()
    }

    /// Whether the first and last nodes carry Dirichlet data.
    fn dirichlet_nodes(&self) -> (bool, bool) {
        match self.boundary {
            BoundaryMode::NoFlux => (false, false),
            BoundaryMode::Exact => (!self.grid.is_ball(), true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdeState {
    pub t: f64,
    pub u: Vec<f64>,
    pub big_t: f64,
    /// Accumulated `∫ (flux into the domain) dt` through Dirichlet nodes.
    pub boundary_inflow: f64,
    pub newton_iterations: usize,
}

impl PdeState {
    pub fn new(t: f64, u: Vec<f64>, big_t: f64) -> Self {
        Self {
            t,
            u,
            big_t,
            boundary_inflow: 0.0,
            newton_iterations: 0,
        }
    }

    pub fn slow_time(&self) -> Result<f64> {
        if self.t >= self.big_t {
            return Err(Error::PastExtinction {
                t: self.t,
                big_t: self.big_t,
            });
        }
        Ok(-(self.big_t - self.t).ln())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Psi,
    V,
    PerturbedPsi,
    PerturbedV,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BumpShape {
    /// `1` on the support.
    Indicator,
    /// `sin²` hump vanishing at the support ends.
    Smooth,
}

/// Multiplicative bump `u₀ = P(·,0)(1 + a·b(r))` supported in `[r_lo, r_hi]`,
/// required to stay between the reference solutions at `lambda_lo` and
/// `lambda_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub amplitude: f64,
    pub r_lo: f64,
    pub r_hi: f64,
    pub shape: BumpShape,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
}

impl Perturbation {
    pub fn bump(&self, r: f64) -> f64 {
        if r < self.r_lo || r > self.r_hi {
            return 0.0;
        }
        match self.shape {
            BumpShape::Indicator => 1.0,
            BumpShape::Smooth => (PI * (r - self.r_lo) / (self.r_hi - self.r_lo)).sin().powi(2),
        }
    }
}

/// Initial data at `t = 0` sampled from the reference solution, optionally
/// perturbed; perturbed data are checked against the sandwich bounds.
pub fn make_initial(
    kind: InitialKind,
    reference: &SelfSimilar,
    grid: &RadialGrid,
    perturbation: Option<&Perturbation>,
) -> Result<PdeState> {
    let want = match kind {
        InitialKind::Psi | InitialKind::PerturbedPsi => ProfileKind::Regular,
        InitialKind::V | InitialKind::PerturbedV => ProfileKind::Singular,
    };
    if reference.profile.kind != want {
        return Err(Error::KindMismatch(want.to_string(), reference.profile.kind.to_string()));
    }
    if want == ProfileKind::Singular && grid.is_ball() {
        return Err(Error::Range("singular initial data need a punctured grid".into()));
    }
    let mut u = reference.sample(grid, 0.0);
    let perturbed = matches!(kind, InitialKind::PerturbedPsi | InitialKind::PerturbedV);
    match (perturbed, perturbation) {
        (false, _) => {}
        (true, None) => return Err(Error::Range("perturbed initial data need a perturbation".into())),
        (true, Some(pert)) => {
            for (ui, r) in u.iter_mut().zip(&grid.nodes) {
                *ui *= 1.0 + pert.amplitude * pert.bump(*r);
            }
            let lo = reference.with_lambda(pert.lambda_lo)?.sample(grid, 0.0);
            let hi = reference.with_lambda(pert.lambda_hi)?.sample(grid, 0.0);
            for i in 0..grid.len() {
                let (a, b) = (lo[i].min(hi[i]), lo[i].max(hi[i]));
                if u[i] < a || u[i] > b {
                    return Err(Error::SandwichViolation {
                        r: grid.nodes[i],
                        detail: format!("u0 = {:.6e} outside [{a:.6e}, {b:.6e}]", u[i]),
                    });
                }
            }
        }
    }
    Ok(PdeState::new(0.0, u, reference.big_t))
}

/// Solves the tridiagonal system `sub·x_{i−1} + diag·x_i + sup·x_{i+1} = rhs`.
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// One backward-Euler step of length `dt`.
pub fn step(problem: &PdeProblem, state: &PdeState, dt: f64) -> Result<PdeState> {
    if !(dt > 0.0) {
        return Err(Error::Range(format!("dt = {dt} must be positive")));
    }
    let grid = &problem.grid;
    let n = grid.len();
    let m = problem.m;
    let inv_m = 1.0 / m;
    let t_new = state.t + dt;
    let c = &problem.conductance;
    let vol = &grid.weights;
    let (fix_first, fix_last) = problem.dirichlet_nodes();

    let mut w: Vec<f64> = state.u.iter().map(|u| u.powf(m)).collect();
    if fix_first || fix_last {
        if t_new >= state.big_t {
            return Err(Error::PastExtinction {
                t: t_new,
                big_t: state.big_t,
            });
        }
        let reference = problem.reference.as_ref().expect("checked at construction");
        if fix_first {
            w[0] = reference.value(grid.nodes[0], t_new).powf(m);
        }
        if fix_last {
            w[n - 1] = reference.value(grid.nodes[n - 1], t_new).powf(m);
        }
    }
    let lo = usize::from(fix_first);
    let hi = n - usize::from(fix_last);
    let k = hi - lo;

    let mut sub = vec![0.0; k];
    let mut diag = vec![0.0; k];
    let mut sup = vec![0.0; k];
    let mut res = vec![0.0; k];
    let mut iterations = 0;
    loop {
        if iterations == problem.newton.max_iter {
            return Err(Error::NewtonDivergence {
                t: state.t,
                dt,
                suggested_dt: dt / 4.0,
            });
        }
        iterations += 1;
        for j in 0..k {
            let i = lo + j;
            let u = w[i].powf(inv_m);
            let mut flux = 0.0;
            let mut d = vol[i] * u / (m * w[i] * dt);
            if i + 1 < n {
                flux += c[i] * (w[i + 1] - w[i]);
                d += c[i];
            }
            if i > 0 {
                flux -= c[i - 1] * (w[i] - w[i - 1]);
                d += c[i - 1];
            }
            res[j] = vol[i] * (u - state.u[i]) / dt - flux;
            diag[j] = d;
            sub[j] = if i > 0 && j > 0 { -c[i - 1] } else { 0.0 };
            sup[j] = if i + 1 < hi { -c[i] } else { 0.0 };
        }
        let delta = thomas(&sub, &diag, &sup, &res);
        // fraction-to-boundary damping keeps W positive
        let mut damp: f64 = 1.0;
        for j in 0..k {
            if delta[j] > 0.0 {
                damp = damp.min(0.9 * w[lo + j] / delta[j]);
            }
        }
        let mut change: f64 = 0.0;
        for j in 0..k {
            let i = lo + j;
            w[i] -= damp * delta[j];
            change = change.max((delta[j] / w[i]).abs());
        }
        if !change.is_finite() {
            return Err(Error::NewtonDivergence {
                t: state.t,
                dt,
                suggested_dt: dt / 4.0,
            });
        }
        if damp == 1.0 && change < problem.newton.tol {
            break;
        }
    }
    let u: Vec<f64> = w.iter().map(|w| w.powf(inv_m)).collect();
    if let Some(node) = u.iter().position(|u| !(*u > 0.0) || !u.is_finite()) {
        return Err(Error::PositivityLoss { node, t: t_new });
    }
    // inflow through Dirichlet nodes = their share of the discrete balance
    let mut inflow = 0.0;
    if fix_last {
        inflow += c[n - 2] * (w[n - 1] - w[n - 2]) * dt;
    }
    if fix_first {
        inflow += c[0] * (w[0] - w[1]) * dt;
    }
    Ok(PdeState {
        t: t_new,
        u,
        big_t: state.big_t,
        boundary_inflow: state.boundary_inflow + inflow,
        newton_iterations: state.newton_iterations + iterations,
    })
}

/// A rescaled snapshot `ũ(·, s)` on a fixed `y`-grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub s: f64,
    pub values: Vec<f64>,
}

/// `ũ(y, s) = (T−t)^{−α} u((T−t)^{−β} y, t)` interpolated onto `y_grid`.
pub fn rescale(state: &PdeState, grid: &RadialGrid, y_grid: &RadialGrid, params: &ValidParams) -> Result<Snapshot> {
    let s = state.slow_time()?;
    let tau = state.big_t - state.t;
    let amp = tau.powf(-params.alpha());
    let stretch = tau.powf(-params.beta);
    let values = y_grid
        .nodes
        .iter()
        .map(|y| grid.interpolate(&state.u, y * stretch).map(|u| amp * u))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Snapshot { s, values })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RescaledTrajectory {
    pub y_grid: RadialGrid,
    pub s_values: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
}

impl RescaledTrajectory {
    /// CSV with columns `s, y, u_tilde` for every snapshot.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,y,u_tilde\n");
        for (s, snap) in self.s_values.iter().zip(&self.snapshots) {
            for (y, u) in self.y_grid.nodes.iter().zip(snap) {
                out.push_str(&format!("{s:.16e},{y:.16e},{u:.16e}\n"));
            }
        }
        out
    }
}

/// Slow-time schedule: uniform steps `ds` from the state's `s` to `s_end`,
/// i.e. `dt = (T−t)(1 − e^{−ds})`, recording every `record_every` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub s_end: f64,
    pub ds: f64,
    pub record_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunLog {
    pub s_values: Vec<f64>,
    pub t_values: Vec<f64>,
    pub max_u: Vec<f64>,
    pub mass: Vec<f64>,
    /// Mass carried by the non-Dirichlet nodes; its change equals the
    /// accumulated boundary inflow.
    pub interior_mass: Vec<f64>,
    pub boundary_inflow: Vec<f64>,
    /// Physical states at the recorded times.
    pub states: Vec<Vec<f64>>,
    pub trajectory: RescaledTrajectory,
    pub steps: usize,
    pub newton_iterations: usize,
}

/// Advances `initial` along `schedule`, recording physical and rescaled data.
pub fn run(problem: &PdeProblem, initial: PdeState, schedule: &Schedule, y_grid: &RadialGrid, params: &ValidParams) -> Result<RunLog> {
    if !(schedule.ds > 0.0) || schedule.record_every == 0 {
        return Err(Error::Range("schedule needs ds > 0 and record_every ≥ 1".into()));
    }
    let s0 = initial.slow_time()?;
    let steps = ((schedule.s_end - s0) / schedule.ds).round().max(0.0) as usize;
    let mut log = RunLog {
        s_values: Vec::new(),
        t_values: Vec::new(),
        max_u: Vec::new(),
        mass: Vec::new(),
        interior_mass: Vec::new(),
        boundary_inflow: Vec::new(),
        states: Vec::new(),
        trajectory: RescaledTrajectory {
            y_grid: y_grid.clone(),
            s_values: Vec::new(),
            snapshots: Vec::new(),
        },
        steps,
        newton_iterations: 0,
    };
    let record = |state: &PdeState, log: &mut RunLog| -> Result<()> {
        let snap = rescale(state, &problem.grid, y_grid, params)?;
        log.s_values.push(snap.s);
        log.t_values.push(state.t);
        log.max_u.push(state.u.iter().copied().fold(0.0, f64::max));
        log.mass.push(mass(&state.u, &problem.grid));
        log.interior_mass.push(problem.interior_mass(&state.u));
        log.boundary_inflow.push(state.boundary_inflow);
        log.states.push(state.u.clone());
        log.trajectory.s_values.push(snap.s);
        log.trajectory.snapshots.push(snap.values);
        Ok(())
    };
    let mut state = initial;
    record(&state, &mut log)?;
    let big_t = state.big_t;
    for k in 1..=steps {
        // target times from the schedule, not by accumulation
        let t_next = big_t - (-(s0 + k as f64 * schedule.ds)).exp();
        state = step(problem, &state, t_next - state.t)?;
        state.t = t_next;
        if k % schedule.record_every == 0 || k == steps {
            record(&state, &mut log)?;
        }
    }
    log.newton_iterations = state.newton_iterations;
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub s_values: Vec<f64>,
    /// `sup_{[a,b]} |ũ − P|` per snapshot.
    pub sup_history: Vec<f64>,
    /// Weighted L¹ distance to `P` over the rescaled grid per snapshot.
    pub l1_history: Vec<f64>,
    pub compact: (f64, f64),
}

impl ConvergenceReport {
    pub fn max_sup(&self) -> f64 {
        self.sup_history.iter().copied().fold(0.0, f64::max)
    }
}

/// Distance of each rescaled snapshot to the target profile.
pub fn convergence_diagnostics(traj: &RescaledTrajectory, target: &RadialProfile, compact: (f64, f64)) -> ConvergenceReport {
    let p: Vec<f64> = traj.y_grid.nodes.iter().map(|r| target.eval(*r)).collect();
    histories(traj, |_| &p, compact)
}

/// Distance of each snapshot to the matching snapshot of a reference run on
/// the same schedule, typically the exact self-similar run at the same
/// resolution. Both runs share the discrete drift of the extinction time,
/// so this isolates the decay of the perturbation from the grid floor.
pub fn convergence_to_run(traj: &RescaledTrajectory, reference: &RescaledTrajectory, compact: (f64, f64)) -> Result<ConvergenceReport> {
    if traj.y_grid != reference.y_grid || traj.s_values.len() != reference.s_values.len() {
        return Err(Error::GridMismatch("trajectories differ in grid or sampling".into()));
    }
    Ok(histories(traj, |k| &reference.snapshots[k], compact))
}

fn histories<'a>(traj: &RescaledTrajectory, target: impl Fn(usize) -> &'a [f64], compact: (f64, f64)) -> ConvergenceReport {
    let y = &traj.y_grid;
    let inside: Vec<usize> = (0..y.len())
        .filter(|&i| y.nodes[i] >= compact.0 && y.nodes[i] <= compact.1)
        .collect();
    let mut sup_history = Vec::with_capacity(traj.snapshots.len());
    let mut l1_history = Vec::with_capacity(traj.snapshots.len());
    for (k, snap) in traj.snapshots.iter().enumerate() {
        let p = target(k);
        sup_history.push(inside.iter().map(|&i| (snap[i] - p[i]).abs()).fold(0.0, f64::max));
        l1_history.push(l1_distance(snap, p, y).expect("snapshots live on the trajectory grid"));
    }
    ConvergenceReport {
        s_values: traj.s_values.clone(),
        sup_history,
        l1_history,
        compact,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub s_values: Vec<f64>,
    pub physical_l1: Vec<f64>,
    pub rescaled_l1: Vec<f64>,
    /// Largest relative increase of the physical L¹ distance between records.
    pub max_relative_increase: f64,
    pub nonincreasing: bool,
    /// `−d log‖ũ₁ − ũ₂‖/ds` from a least-squares fit over the window.
    pub empirical_rate: f64,
    pub predicted_rate: f64,
    pub relative_error: f64,
    pub window: (f64, f64),
}

/// Compares two runs recorded on the same schedule: physical L¹ distance
/// (should not grow) and the decay rate of the rescaled L¹ distance against
/// `nβ − α`. `slack` is the relative tolerance for "nonincreasing" and
/// `window` restricts the rate fit (default: the whole run).
pub fn contraction_check(
    run1: &RunLog,
    run2: &RunLog,
    grid: &RadialGrid,
    params: &ValidParams,
    slack: f64,
    window: Option<(f64, f64)>,
) -> Result<ContractionReport> {
    if run1.s_values.len() != run2.s_values.len()
        || run1.s_values.iter().zip(&run2.s_values).any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0))
    {
        return Err(Error::GridMismatch("runs were recorded at different s".into()));
    }
    let physical_l1 = run1
        .states
        .iter()
        .zip(&run2.states)
        .map(|(a, b)| l1_distance(a, b, grid))
        .collect::<Result<Vec<f64>>>()?;
    let y = &run1.trajectory.y_grid;
    let rescaled_l1 = run1
        .trajectory
        .snapshots
        .iter()
        .zip(&run2.trajectory.snapshots)
        .map(|(a, b)| l1_distance(a, b, y))
        .collect::<Result<Vec<f64>>>()?;
    let max_relative_increase = physical_l1
        .windows(2)
        .map(|w| if w[0] > 0.0 { (w[1] - w[0]) / w[0] } else { 0.0 })
        .fold(0.0, f64::max);
    let s = &run1.s_values;
    let window = window.unwrap_or((s[0], s[s.len() - 1]));
    let idx: Vec<usize> = (0..s.len())
        .filter(|&i| s[i] >= window.0 - 1e-12 && s[i] <= window.1 + 1e-12 && rescaled_l1[i] > 0.0)
        .collect();
    let predicted_rate = params.n as f64 * params.beta - params.alpha();
    let empirical_rate = if idx.len() >= 2 {
        let xs: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| rescaled_l1[i].ln()).collect();
        -fd::linear_fit(&xs, &ys).1
    } else {
        f64::NAN
    };
    Ok(ContractionReport {
        s_values: s.clone(),
        physical_l1,
        rescaled_l1,
        max_relative_increase,
        nonincreasing: max_relative_increase <= slack,
        empirical_rate,
        predicted_rate,
        relative_error: ((empirical_rate - predicted_rate) / predicted_rate).abs(),
        window,
    })
}

/// Extinction time from `max u(·,t) ∝ (T−t)^α`: `(max u)^{1/α}` is linear in
/// `t` and vanishes at `T`.
pub fn extinction_time_estimate(t_values: &[f64], max_u: &[f64], alpha: f64) -> Result<f64> {
    if t_values.len() < 3 || t_values.len() != max_u.len() {
        return Err(Error::NotExtincting("need at least three (t, max u) samples".into()));
    }
    let first = max_u[0];
    let last = max_u[max_u.len() - 1];
    if !(last < first * (1.0 - 1e-9)) {
        return Err(Error::NotExtincting(format!(
            "max u went from {first:.6e} to {last:.6e}"
        )));
    }
    let y: Vec<f64> = max_u.iter().map(|u| u.powf(1.0 / alpha)).collect();
    let (a, b) = fd::linear_fit(t_values, &y);
    if !(b < 0.0) {
        return Err(Error::NotExtincting(format!("fitted slope {b:.3e} is not negative")));
    }
    Ok(-a / b)
}
