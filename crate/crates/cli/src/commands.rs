//! The four subcommands.

use anyhow::{bail, Context};
use fastdiff::asymptotics::{
    b_scaling_exponent, blowup_limit_check, check_b_scaling, fit_tail, normal_form_profile, to_log_profile,
    AsymptoticFit, BlowupCheck, FitWindow,
};
use fastdiff::params::{classify_beta, Classification, Regime};
use fastdiff::pde::{
    contraction_check, convergence_diagnostics, extinction_time_estimate, l1_distance, make_initial, run,
    BoundaryMode, ContractionReport, InitialKind, PdeProblem, Perturbation, RadialGrid, RunLog, Schedule,
    SelfSimilar,
};
use fastdiff::profiles::{
    self, check_singular, cylinder, head_xi0, integral_identity_residual, ode_residual, sandwich_margin,
    SingularChecks,
};
use fastdiff::{derive, validate, DerivedConstants, ProfileKind, RadialProfile, SGrid, SolverConfig, ValidParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{RunConfig, Scenario};
use crate::output::{parallel_map, OutDir};
use crate::Failure;

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

#[derive(Serialize)]
struct ConstantsReport {
    params: ValidParams,
    constants: DerivedConstants,
    classification: Classification,
}

pub fn constants(cfg: &RunConfig, out: &mut OutDir) -> anyhow::Result<serde_json::Value> {
    let params = validate(cfg.params)?;
    let report = ConstantsReport {
        params,
        constants: derive(&params),
        classification: classify_beta(&params),
    };
    out.write_json("constants.json", &report)?;
    Ok(serde_json::to_value(&report)?)
}

#[derive(Serialize)]
struct ProfileChecks {
    ode_residual_max: f64,
    /// Absent when the identity does not apply (singular profiles below `β₁`).
    integral_residual_max: Option<f64>,
    monotone_decreasing: bool,
    blowup_limit: Option<f64>,
    blowup: Option<BlowupCheck>,
    singular: Option<SingularChecks>,
    sandwich_margin: Option<f64>,
    xi0_halving_change: Option<f64>,
}

#[derive(Serialize)]
struct ProfileReport {
    params: ValidParams,
    kind: ProfileKind,
    tol: f64,
    xi0: Option<f64>,
    nodes: usize,
    checks: ProfileChecks,
    inverted: Option<InvertedReport>,
}

#[derive(Serialize)]
struct InvertedReport {
    alpha: f64,
    beta: f64,
    ode_residual_max: f64,
}

pub fn profile(cfg: &RunConfig, out: &mut OutDir) -> anyhow::Result<serde_json::Value> {
    let params = validate(cfg.params)?;
    let pc = &cfg.profile;
    let solver = SolverConfig::new(pc.tol).with_start(pc.start);
    let mut xi0 = None;
    let prof = match pc.kind {
        ProfileKind::Cylinder => {
            let lo = pc.r_min.unwrap_or(1e-3);
            cylinder(&params, &SGrid::spanning(lo.ln(), pc.r_max.ln(), pc.ds))
        }
        ProfileKind::Regular => {
            let lo = pc.r_min.unwrap_or(1e-3);
            profiles::solve_regular_on(&params, &SGrid::spanning(lo.ln(), pc.r_max.ln(), pc.ds), &solver)?
        }
        ProfileKind::Singular => {
            let x = pc.r_min.unwrap_or_else(|| profiles::default_xi0(&params));
            xi0 = Some(x);
            profiles::solve_singular_on(&params, x, &SGrid::spanning(x.ln(), pc.r_max.ln(), pc.ds), &solver)?
        }
    };
    let residual = ode_residual(&prof);
    let integral_residual_max = match integral_identity_residual(&prof) {
        Ok(r) => Some(max_abs(&r)),
        Err(fastdiff::Error::WrongRegime { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let monotone_decreasing = prof.dv.iter().all(|d| *d <= 0.0);
    let mut checks = ProfileChecks {
        ode_residual_max: max_abs(&residual),
        integral_residual_max,
        monotone_decreasing,
        blowup_limit: None,
        blowup: None,
        singular: None,
        sandwich_margin: None,
        xi0_halving_change: None,
    };
    if let (ProfileKind::Singular, Some(x)) = (pc.kind, xi0) {
        // the limit is extrapolated from a start deep in the head
        let deep = head_xi0(&params, 1e-3).min(x);
        let head = profiles::solve_singular_on(&params, deep, &SGrid::spanning(deep.ln(), x.ln().max(deep.ln() + 1.0) + 2.0, pc.ds), &solver)?;
        let blow = blowup_limit_check(&to_log_profile(&head), &params)?;
        checks.blowup_limit = Some(blow.limit);
        checks.blowup = Some(blow);
        checks.singular = Some(check_singular(&prof, 0.0));
        let grid = SGrid::new(prof.s[0], prof.step(), prof.len());
        let lower = profiles::solve_regular_on(&params, &grid, &solver)?;
        checks.sandwich_margin = Some(sandwich_margin(&lower, &cylinder(&params, &grid), &prof)?);
        checks.xi0_halving_change = Some(profiles::xi0_halving_change(&params, x, pc.r_max, &solver)?);
    }
    out.write("profile.csv", &prof.to_csv(Some(&residual)))?;
    let inverted = if pc.invert {
        let inv = profiles::invert(&prof)?;
        let res = ode_residual(&inv);
        out.write("inverted.csv", &inv.to_csv(Some(&res)))?;
        Some(InvertedReport {
            alpha: inv.equation.alpha,
            beta: inv.equation.beta,
            ode_residual_max: max_abs(&res),
        })
    } else {
        None
    };
    let report = ProfileReport {
        params,
        kind: pc.kind,
        tol: pc.tol,
        xi0,
        nodes: prof.len(),
        checks,
        inverted,
    };
    out.write_json("checks.json", &report)?;
    let c = &report.checks;
    let mut broken = Vec::new();
    if pc.kind != ProfileKind::Cylinder && !c.monotone_decreasing {
        broken.push("profile is not monotone decreasing".to_string());
    }
    if let Some(s) = &c.singular {
        if !s.weighted_nondecreasing || !s.lower_bound_holds {
            broken.push("r^(alpha/beta) g is not nondecreasing above its limit".into());
        }
    }
    if matches!(c.sandwich_margin, Some(m) if m <= 0.0) {
        broken.push("sandwich v < C < g fails".into());
    }
    if !broken.is_empty() {
        return Err(Failure::Invariant(broken.join("; ")).into());
    }
    Ok(serde_json::to_value(&report)?)
}

#[derive(Serialize)]
struct LambdaFit {
    lambda: f64,
    fit: AsymptoticFit,
}

#[derive(Serialize)]
struct BScaling {
    lambda1: f64,
    lambda2: f64,
    exponent: f64,
    deviation: f64,
}

#[derive(Serialize)]
struct AsymptReport {
    params: ValidParams,
    kind: ProfileKind,
    gamma1: f64,
    gamma2: f64,
    beta2: f64,
    regime: Regime,
    synthetic: bool,
    fits: Vec<LambdaFit>,
    b_scaling: Option<BScaling>,
}

pub fn asympt(cfg: &RunConfig, out: &mut OutDir) -> anyhow::Result<serde_json::Value> {
    let params = validate(cfg.params)?;
    let ac = &cfg.asympt;
    let constants = derive(&params);
    let class = classify_beta(&params);
    if ac.require_second_order && class.regime != Regime::SecondOrder {
        bail!(Failure::Usage(format!(
            "second-order asymptotics need beta > beta2 = {:.6}, got beta = {} ({:?} regime)",
            constants.beta2, params.beta, class.regime
        )));
    }
    let gamma1 = constants.gamma1()?;
    let gamma2 = constants.gamma2()?;
    let lambdas = if ac.lambdas.is_empty() { vec![params.lambda] } else { ac.lambdas.clone() };
    if lambdas.len() > 2 {
        bail!(Failure::Usage("asympt takes one or two lambda values".into()));
    }
    let window = ac.window.map(|[a, b]| FitWindow::new(a, b));
    let solver = SolverConfig::new(ac.tol);
    let solve = |lambda: &f64| -> anyhow::Result<RadialProfile> {
        let p = params.with_lambda(*lambda)?;
        if let Some(syn) = ac.synthetic {
            let grid = SGrid::spanning(ac.s_min, ac.s_max, ac.ds);
            return Ok(normal_form_profile(&p, &grid, ac.kind, syn.b, syn.gamma.unwrap_or(gamma1))?);
        }
        Ok(match ac.kind {
            ProfileKind::Regular => {
                profiles::solve_regular_on(&p, &SGrid::spanning(ac.s_min, ac.s_max, ac.ds), &solver)?
            }
            ProfileKind::Singular => {
                let xi0 = profiles::default_xi0(&p);
                profiles::solve_singular_on(&p, xi0, &SGrid::spanning(xi0.ln(), ac.s_max, ac.ds), &solver)?
            }
            ProfileKind::Cylinder => bail!(Failure::Usage("the cylinder has no tail to fit".into())),
        })
    };
    let solved = parallel_map(&lambdas, solve);
    let mut fits = Vec::new();
    for (k, (lambda, prof)) in lambdas.iter().zip(solved).enumerate() {
        let logp = to_log_profile(&prof?);
        out.write(&format!("tail_{}.csv", k + 1), &logp.to_csv(gamma1))?;
        fits.push(LambdaFit {
            lambda: *lambda,
            fit: fit_tail(&logp, &constants, window)?,
        });
    }
    let b_scaling = if fits.len() == 2 {
        Some(BScaling {
            lambda1: fits[0].lambda,
            lambda2: fits[1].lambda,
            exponent: b_scaling_exponent(ac.kind, params.m, gamma1)?,
            deviation: check_b_scaling(&fits[0].fit, &fits[1].fit, fits[0].lambda, fits[1].lambda, &constants, params.m)?,
        })
    } else {
        None
    };
    let report = AsymptReport {
        params,
        kind: ac.kind,
        gamma1,
        gamma2,
        beta2: constants.beta2,
        regime: class.regime,
        synthetic: ac.synthetic.is_some(),
        fits,
        b_scaling,
    };
    out.write_json("fit.json", &report)?;
    Ok(serde_json::to_value(&report)?)
}

#[derive(Serialize)]
struct RunSummary {
    t_hat: Option<f64>,
    max_sup_dist: f64,
    final_sup_dist: f64,
    final_l1_dist: f64,
    steps: usize,
    newton_iterations: usize,
    /// `|Δ(interior mass) − boundary inflow|` relative to the initial mass.
    mass_balance_defect: f64,
}

#[derive(Serialize)]
struct SimulateSummary {
    scenario: Scenario,
    params: ValidParams,
    predicted_rate: f64,
    stationary: Option<bool>,
    run: RunSummary,
    perturbation: Option<Perturbation>,
    contraction: Option<ContractionSummary>,
}

#[derive(Serialize)]
struct ContractionSummary {
    physical_l1_nonincreasing: bool,
    max_relative_increase: f64,
    empirical_rate: f64,
    rate_relative_error: f64,
    rate_within_tolerance: bool,
    initial_l1: f64,
}

fn history_csv(log: &RunLog, sup: &[f64], l1: &[f64], pair: Option<&ContractionReport>) -> String {
    let mut out = String::from("s,t,sup_dist,l1_dist,max_u,mass,boundary_inflow");
    if pair.is_some() {
        out.push_str(",physical_l1_to_exact,rescaled_l1_to_exact");
    }
    out.push('\n');
    for k in 0..log.s_values.len() {
        out.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            log.s_values[k], log.t_values[k], sup[k], l1[k], log.max_u[k], log.mass[k], log.boundary_inflow[k]
        ));
        if let Some(c) = pair {
            out.push_str(&format!(",{:.16e},{:.16e}", c.physical_l1[k], c.rescaled_l1[k]));
        }
        out.push('\n');
    }
    out
}

fn snapshot_csv(y: &RadialGrid, values: &[f64]) -> String {
    let mut out = String::from("r,u_tilde\n");
    for (r, u) in y.nodes.iter().zip(values) {
        out.push_str(&format!("{r:.16e},{u:.16e}\n"));
    }
    out
}

/// Fills in a seeded support when the config leaves it open; returns the
/// resolved config so the manifest records what actually ran.
pub fn resolve(cfg: &RunConfig) -> RunConfig {
    let mut cfg = cfg.clone();
    let sc = &mut cfg.simulate;
    if sc.scenario.perturbed() && sc.perturbation.support.is_none() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let lo: f64 = if sc.scenario.singular() { rng.gen_range(0.5..1.0) } else { rng.gen_range(0.2..1.0) };
        sc.perturbation.support = Some([lo, 2.0 * lo]);
    }
    cfg
}

pub fn simulate(cfg: &RunConfig, out: &mut OutDir) -> anyhow::Result<serde_json::Value> {
    let params = validate(cfg.params)?;
    let sc = &cfg.simulate;
    let singular = sc.scenario.singular();
    let (grid, y) = if singular {
        (
            RadialGrid::punctured(params.n, sc.r_min, sc.r_max, sc.cells)?,
            RadialGrid::punctured(params.n, sc.y_min, sc.y_max, sc.y_cells)?,
        )
    } else {
        (
            RadialGrid::ball(params.n, sc.r_max, sc.cells, sc.h0)?,
            RadialGrid::ball(params.n, sc.y_max, sc.y_cells, (sc.y_max * 2e-4).min(sc.h0))?,
        )
    };
    let kind = if singular { ProfileKind::Singular } else { ProfileKind::Regular };
    let reference = SelfSimilar::for_run(&params, kind, sc.big_t, &grid, sc.s_end, sc.tol)?;
    let mut problem = PdeProblem::new(grid.clone(), params.m, BoundaryMode::Exact, Some(reference.clone()))?;
    problem.newton = sc.newton;
    let schedule = Schedule {
        s_end: sc.s_end,
        ds: sc.ds,
        record_every: sc.record_every,
    };
    let compact = sc.compact.unwrap_or(if singular { [0.5, 2.0] } else { [0.0, 2.0] });
    let perturbation = sc.scenario.perturbed().then(|| {
        let pc = &sc.perturbation;
        let [r_lo, r_hi] = pc.support.expect("support resolved before the run");
        Perturbation {
            amplitude: pc.amplitude,
            r_lo,
            r_hi,
            shape: pc.shape,
            lambda_lo: pc.lambda_lo,
            lambda_hi: pc.lambda_hi,
        }
    });
    let exact_kind = if singular { InitialKind::V } else { InitialKind::Psi };
    let mut initials = vec![make_initial(exact_kind, &reference, &grid, None)?];
    if let Some(pert) = &perturbation {
        let kind = if singular { InitialKind::PerturbedV } else { InitialKind::PerturbedPsi };
        initials.push(make_initial(kind, &reference, &grid, Some(pert))?);
    }
    let logs = parallel_map(&initials, |u0| run(&problem, u0.clone(), &schedule, &y, &params));
    let logs = logs.into_iter().collect::<fastdiff::Result<Vec<RunLog>>>()?;
    let target = &reference.profile;
    let main = logs.last().expect("at least one run");
    let rep = convergence_diagnostics(&main.trajectory, target, (compact[0], compact[1]));
    let contraction = if logs.len() == 2 {
        Some(contraction_check(&logs[0], &logs[1], &grid, &params, 1e-9, None)?)
    } else {
        None
    };

    for (name, log) in [("exact", &logs[0])].into_iter().chain(logs.get(1).map(|l| ("perturbed", l))) {
        let r = convergence_diagnostics(&log.trajectory, target, (compact[0], compact[1]));
        let pair = if name == "perturbed" { contraction.as_ref() } else { None };
        out.write(&format!("{name}/history.csv"), &history_csv(log, &r.sup_history, &r.l1_history, pair))?;
        for (k, snap) in log.trajectory.snapshots.iter().enumerate() {
            out.write(&format!("{name}/snapshots/snapshot_{k:04}.csv"), &snapshot_csv(&y, snap))?;
        }
    }

    let m0 = main.interior_mass[0];
    let last = main.s_values.len() - 1;
    let mass_balance_defect =
        ((main.interior_mass[last] - m0) - (main.boundary_inflow[last] - main.boundary_inflow[0])).abs() / m0;
    // singular solutions keep their peak at the inner radius, so only balls extrapolate
    let t_hat = if singular {
        None
    } else {
        extinction_time_estimate(&main.t_values, &main.max_u, params.alpha()).ok()
    };
    let predicted_rate = params.n as f64 * params.beta - params.alpha();
    let contraction_summary = contraction.as_ref().map(|c| {
        let initial_l1 = l1_distance(&logs[0].states[0], &logs[1].states[0], &grid).unwrap_or(f64::NAN);
        ContractionSummary {
            physical_l1_nonincreasing: c.nonincreasing,
            max_relative_increase: c.max_relative_increase,
            empirical_rate: c.empirical_rate,
            rate_relative_error: c.relative_error,
            rate_within_tolerance: c.relative_error <= sc.rate_tol,
            initial_l1,
        }
    });
    let summary = SimulateSummary {
        scenario: sc.scenario,
        params,
        predicted_rate,
        stationary: (!sc.scenario.perturbed()).then(|| rep.max_sup() <= sc.stationary_tol),
        run: RunSummary {
            t_hat,
            max_sup_dist: rep.max_sup(),
            final_sup_dist: rep.sup_history[last],
            final_l1_dist: rep.l1_history[last],
            steps: main.steps,
            newton_iterations: main.newton_iterations,
            mass_balance_defect,
        },
        perturbation,
        contraction: contraction_summary,
    };
    out.write_json("summary.json", &summary)
        .context("writing the run summary")?;
    let mut broken = Vec::new();
    if mass_balance_defect > 1e-8 {
        broken.push(format!("mass balance defect {mass_balance_defect:.3e}"));
    }
    if let Some(c) = &summary.contraction {
        if !c.physical_l1_nonincreasing {
            broken.push(format!("physical L1 distance grew by {:.3e}", c.max_relative_increase));
        }
    }
    if !broken.is_empty() {
        return Err(Failure::Invariant(broken.join("; ")).into());
    }
    Ok(serde_json::to_value(&summary)?)
}
