//! Problem parameters and the closed-form constants derived from them.
//!
//! Everything here is a pure function of `(n, m, rho1, beta, lambda)`. The
//! profile equation is `Δv^m + αv + βx·∇v = 0` with `α = (2β+ρ₁)/(1−m)`.

use serde::{Deserialize, Serialize};
use std::ops::Deref;

use crate::error::{Error, Result};

/// Relative tolerance used to decide `β = β₁` (equivalently `nβ = α`).
pub const BETA1_REL_TOL: f64 = 1e-12;

/// Number of log-uniform samples used when certifying `A₁(β) > 0`.
const A1_SAMPLES: usize = 64;

/// Upper end of the certification range, in units of `ρ₁`.
const A1_RANGE_TOP: f64 = 1e3;

/// Raw problem parameters as supplied by a caller or config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSet {
    pub n: u32,
    pub m: f64,
    pub rho1: f64,
    pub beta: f64,
    #[serde(default = "unit_lambda")]
    pub lambda: f64,
}

fn unit_lambda() -> f64 {
    1.0
}

/// A [`ParamSet`] that passed [`validate`]. Only constructible through validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamSet", into = "ParamSet")]
pub struct ValidParams(ParamSet);

impl TryFrom<ParamSet> for ValidParams {
    type Error = Error;
    fn try_from(p: ParamSet) -> Result<Self> {
        validate(p)
    }
}

impl From<ValidParams> for ParamSet {
    fn from(p: ValidParams) -> Self {
        p.0
    }
}

impl Deref for ValidParams {
    type Target = ParamSet;
    fn deref(&self) -> &ParamSet {
        &self.0
    }
}

impl ValidParams {
    pub fn raw(&self) -> ParamSet {
        self.0
    }

    /// Same parameters with a different amplitude `λ`.
    pub fn with_lambda(&self, lambda: f64) -> Result<ValidParams> {
        validate(ParamSet { lambda, ..self.0 })
    }

    /// Same parameters with a different `β`.
    pub fn with_beta(&self, beta: f64) -> Result<ValidParams> {
        validate(ParamSet { beta, ..self.0 })
    }
}

impl ParamSet {
    pub fn new(n: u32, m: f64, rho1: f64, beta: f64, lambda: f64) -> Self {
        Self { n, m, rho1, beta, lambda }
    }

    /// `n − 2 − n·m`, positive exactly when `m < (n−2)/n`.
    pub fn gap(&self) -> f64 {
        let n = self.n as f64;
        n - 2.0 - n * self.m
    }

    pub fn alpha(&self) -> f64 {
        (2.0 * self.beta + self.rho1) / (1.0 - self.m)
    }

    /// Smallest admissible `β`, `mρ₁/(n−2−nm)`.
    pub fn beta_min(&self) -> f64 {
        self.m * self.rho1 / self.gap()
    }

    pub fn beta1(&self) -> f64 {
        self.rho1 / self.gap()
    }

    /// Exponent `ρ₁/((1−m)β)` of `λ` in the blow-up coefficient.
    pub fn blowup_exponent(&self) -> f64 {
        self.rho1 / ((1.0 - self.m) * self.beta)
    }

    /// Blow-up coefficient `λ^{−ρ₁/((1−m)β)}` of the singular profile.
    pub fn blowup_coefficient(&self) -> f64 {
        self.lambda.powf(-self.blowup_exponent())
    }

    /// `C* = 2m(n−2−nm)/((1−m)ρ₁)`.
    pub fn cstar(&self) -> f64 {
        2.0 * self.m * self.gap() / ((1.0 - self.m) * self.rho1)
    }
}

/// Checks every range condition on the parameters.
pub fn validate(params: ParamSet) -> Result<ValidParams> {
    let ParamSet { n, m, rho1, beta, lambda } = params;
    if n < 3 {
        return Err(Error::Range(format!("dimension n = {n} must be at least 3")));
    }
    for (name, value) in [("m", m), ("rho1", rho1), ("beta", beta), ("lambda", lambda)] {
        if !value.is_finite() {
            return Err(Error::Range(format!("{name} = {value} is not finite")));
        }
    }
    let nf = n as f64;
    let m_top = (nf - 2.0) / nf;
    if m <= 0.0 {
        return Err(Error::Range(format!("m = {m} must be positive")));
    }
    if m >= m_top {
        return Err(Error::Range(format!(
            "m = {m} must satisfy m < (n-2)/n = {m_top}"
        )));
    }
    if rho1 <= 0.0 {
        return Err(Error::Range(format!("rho1 = {rho1} must be positive")));
    }
    if lambda <= 0.0 {
        return Err(Error::Range(format!("lambda = {lambda} must be positive")));
    }
    let beta_min = params.beta_min();
    if beta < beta_min {
        return Err(Error::Range(format!(
            "beta = {beta} is below m*rho1/(n-2-n*m) = {beta_min}"
        )));
    }
    Ok(ValidParams(params))
}

/// Parameter regime of `β` relative to the thresholds `β₁`, `β₀`, `β₂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// `mρ₁/(n−2−nm) ≤ β < β₁`: singular profile exists, uniqueness not known.
    ExistenceOnly,
    /// `β₁ ≤ β < β₀`: unique singular profile, linearized tail roots complex.
    Uniqueness,
    /// `max(β₀, β₁) ≤ β ≤ β₂`: real tail roots.
    RealRoots,
    /// `β > β₂`: second-order tail expansion with `B > 0`.
    SecondOrder,
}

/// Sign of `nβ − α`, decided with a relative tolerance of [`BETA1_REL_TOL`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Classification {
    pub regime: Regime,
    pub n_beta_minus_alpha: f64,
    pub sign: Sign,
    /// True when `β = β₁` up to [`BETA1_REL_TOL`].
    pub on_beta1: bool,
    pub beta2: f64,
}

/// Closed-form constants for one parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub alpha: f64,
    pub beta_min: f64,
    pub beta1: f64,
    pub beta0: f64,
    pub beta2: f64,
    #[serde(rename = "A_of_beta")]
    pub a_of_beta: f64,
    pub discriminant: f64,
    /// `true` when the discriminant is negative and the `γ` fields are absent.
    pub complex_roots: bool,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    #[serde(rename = "Cstar")]
    pub cstar: f64,
    #[serde(rename = "M0")]
    pub m0: Option<f64>,
    #[serde(rename = "A1_beta")]
    pub a1_beta: Option<f64>,
    #[serde(rename = "A2_beta")]
    pub a2_beta: Option<f64>,
    pub n_beta_minus_alpha: f64,
}

impl DerivedConstants {
    /// `γ₁`, or a range error when the roots are complex.
    pub fn gamma1(&self) -> Result<f64> {
        self.gamma1.ok_or_else(|| {
            Error::Range(format!(
                "tail roots are complex (discriminant {})",
                self.discriminant
            ))
        })
    }

    pub fn gamma2(&self) -> Result<f64> {
        self.gamma2.ok_or_else(|| {
            Error::Range(format!(
                "tail roots are complex (discriminant {})",
                self.discriminant
            ))
        })
    }
}

pub fn beta0(params: &ParamSet) -> f64 {
    let nf = params.n as f64;
    let m = params.m;
    let gap = params.gap();
    let base = (2.0 * (1.0 - m) / gap).sqrt();
    if m <= (nf - 2.0) / (nf + 2.0) {
        params.rho1 * base
    } else {
        params.rho1 * f64::max(2.0 * base, ((nf + 2.0) * m - (nf - 2.0)) / gap)
    }
}

/// `A(β) = n−2−(n+2)m + 2β(n−2−nm)/ρ₁` and the discriminant `A² − 8(n−2−nm)(1−m)`.
fn a_and_discriminant(params: &ParamSet, beta: f64) -> (f64, f64) {
    let nf = params.n as f64;
    let m = params.m;
    let gap = params.gap();
    let a = nf - 2.0 - (nf + 2.0) * m + 2.0 * beta * gap / params.rho1;
    (a, a * a - 8.0 * gap * (1.0 - m))
}

/// Roots `γ₁ ≤ γ₂` of the linearized tail equation at the given `β`, if real.
///
/// `γ₂` takes the non-cancelling sign and `γ₁` follows from the product of
/// roots `2(n−2−nm)/(1−m)`.
pub fn tail_roots(params: &ParamSet, beta: f64) -> Option<(f64, f64)> {
    let (a, disc) = a_and_discriminant(params, beta);
    if disc < 0.0 {
        return None;
    }
    let m = params.m;
    let product = 2.0 * params.gap() / (1.0 - m);
    let g2 = (a + disc.sqrt()) / (2.0 * (1.0 - m));
    if g2 <= 0.0 {
        // A(β) < 0: both roots negative, cancellation sits in γ₂ instead.
        let g1 = (a - disc.sqrt()) / (2.0 * (1.0 - m));
        return Some((g1, product / g1));
    }
    Some((product / g2, g2))
}

/// `A_i(β) = 1/(1−m) − βγ_i/ρ₁` for `i = 1, 2`.
pub fn a_coefficients(params: &ParamSet, beta: f64) -> Option<(f64, f64)> {
    let (g1, g2) = tail_roots(params, beta)?;
    let m = params.m;
    Some((
        1.0 / (1.0 - m) - beta * g1 / params.rho1,
        1.0 / (1.0 - m) - beta * g2 / params.rho1,
    ))
}

/// `b₀` and `c₂` of the second-order threshold construction.
pub fn b0_c2(params: &ParamSet) -> (f64, f64) {
    let m = params.m;
    let gap = params.gap();
    let c2 = (1.0 - m / 2.0).powi(2);
    let b0 = f64::max(
        2.0 * (2.0 * (1.0 - m) / (gap * (1.0 - c2 * c2))).sqrt(),
        std::f64::consts::SQRT_2 / gap.sqrt(),
    );
    (b0, c2)
}

/// `A₁(β) > 0` at 64 log-uniform samples of `(lower, 10³ρ₁]`.
fn a1_positive_above(params: &ParamSet, lower: f64) -> bool {
    let top = A1_RANGE_TOP * params.rho1;
    if lower >= top {
        return true;
    }
    let (lo, hi) = (lower.ln(), top.ln());
    (1..=A1_SAMPLES).all(|k| {
        let beta = (lo + (hi - lo) * k as f64 / A1_SAMPLES as f64).exp();
        matches!(a_coefficients(params, beta), Some((a1, _)) if a1 > 0.0)
    })
}

/// Sufficient threshold `β₂ = max(a₀ρ₁, β₀, β₁)` above which the
/// second-order tail expansion holds.
pub fn beta2_lower_bound(params: &ParamSet) -> f64 {
    let nf = params.n as f64;
    let rho1 = params.rho1;
    let (b0, _) = b0_c2(params);
    let floor = f64::max(beta0(params), params.beta1());
    let threshold = |a0: f64| f64::max(a0 * rho1, floor);
    if params.m <= (nf - 2.0) / (nf + 2.0) {
        return threshold(b0);
    }
    let certified = |a0: f64| a1_positive_above(params, threshold(a0));
    if certified(b0) {
        return threshold(b0);
    }
    let mut lo = b0;
    let mut hi = 2.0 * b0;
    while !certified(hi) {
        lo = hi;
        hi *= 2.0;
    }
    while (hi - lo) > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if certified(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    threshold(hi)
}

/// All closed-form constants at the parameter set's `β`.
pub fn derive(params: &ValidParams) -> DerivedConstants {
    let m = params.m;
    let beta = params.beta;
    let alpha = params.alpha();
    let (a, disc) = a_and_discriminant(params, beta);
    let roots = tail_roots(params, beta);
    let gap = params.gap();
    let (m0, a1, a2) = match roots {
        Some((g1, g2)) => {
            let m0 = (g2 > g1).then(|| 2.0 * m * gap / ((1.0 - m) * (g2 - g1)));
            let (a1, a2) = a_coefficients(params, beta).expect("real roots");
            (m0, Some(a1), Some(a2))
        }
        None => (None, None, None),
    };
    DerivedConstants {
        alpha,
        beta_min: params.beta_min(),
        beta1: params.beta1(),
        beta0: beta0(params),
        beta2: beta2_lower_bound(params),
        a_of_beta: a,
        discriminant: disc,
        complex_roots: roots.is_none(),
        gamma1: roots.map(|r| r.0),
        gamma2: roots.map(|r| r.1),
        cstar: params.cstar(),
        m0,
        a1_beta: a1,
        a2_beta: a2,
        n_beta_minus_alpha: params.n as f64 * beta - alpha,
    }
}

pub fn classify_beta(params: &ValidParams) -> Classification {
    let beta = params.beta;
    let beta1 = params.beta1();
    let beta0 = beta0(params);
    let beta2 = beta2_lower_bound(params);
    let n_beta_minus_alpha = params.n as f64 * beta - params.alpha();
    let on_beta1 = (beta - beta1).abs() <= BETA1_REL_TOL * beta1;
    let sign = if on_beta1 {
        Sign::Zero
    } else if beta > beta1 {
        Sign::Positive
    } else {
        Sign::Negative
    };
    let regime = if beta < beta1 && !on_beta1 {
        Regime::ExistenceOnly
    } else if beta < beta0 {
        Regime::Uniqueness
    } else if beta <= beta2 {
        Regime::RealRoots
    } else {
        Regime::SecondOrder
    };
    Classification {
        regime,
        n_beta_minus_alpha,
        sign,
        on_beta1,
        beta2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base(beta: f64) -> ValidParams {
        validate(ParamSet::new(3, 0.2, 1.0, beta, 1.0)).unwrap()
    }

    #[test]
    fn validate_accepts_reference_set() {
        assert!(validate(ParamSet::new(3, 0.2, 1.0, 5.0, 1.0)).is_ok());
    }

    #[test]
    fn validate_rejects_m_at_or_above_critical() {
        let err = validate(ParamSet::new(3, 0.4, 1.0, 5.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::Range(ref s) if s.contains("(n-2)/n")));
        assert!(validate(ParamSet::new(3, 1.0 / 3.0, 1.0, 5.0, 1.0)).is_err());
    }

    #[test]
    fn validate_rejects_small_beta() {
        let err = validate(ParamSet::new(3, 0.2, 1.0, 0.4, 1.0)).unwrap_err();
        assert!(matches!(err, Error::Range(ref s) if s.contains("below")));
    }

    #[test]
    fn validate_rejects_bad_scalars() {
        assert!(validate(ParamSet::new(2, 0.1, 1.0, 5.0, 1.0)).is_err());
        assert!(validate(ParamSet::new(3, 0.2, 0.0, 5.0, 1.0)).is_err());
        assert!(validate(ParamSet::new(3, 0.2, 1.0, 5.0, -1.0)).is_err());
        assert!(validate(ParamSet::new(3, f64::NAN, 1.0, 5.0, 1.0)).is_err());
    }

    #[test]
    fn reference_constants() {
        let c = derive(&base(5.0));
        assert_relative_eq!(c.alpha, 13.75, max_relative = 1e-14);
        assert_relative_eq!(c.beta1, 2.5, max_relative = 1e-14);
        assert_relative_eq!(c.beta0, 2.0, max_relative = 1e-14);
        assert_relative_eq!(c.cstar, 0.2, max_relative = 1e-14);
        assert_relative_eq!(c.n_beta_minus_alpha, 1.25, max_relative = 1e-12);
        // quadratic formula evaluated independently: (4 ∓ √13.44)/1.6
        let (g1, g2) = ((4.0 - 13.44f64.sqrt()) / 1.6, (4.0 + 13.44f64.sqrt()) / 1.6);
        assert_relative_eq!(c.gamma1.unwrap(), g1, max_relative = 1e-12);
        assert_relative_eq!(c.gamma2.unwrap(), g2, max_relative = 1e-12);
        assert_relative_eq!(g1, 0.208712, epsilon = 1e-6);
        assert_relative_eq!(g2, 4.791288, epsilon = 1e-6);
    }

    #[test]
    fn conformal_exponent_anchor() {
        for n in [3u32, 4, 6] {
            let nf = n as f64;
            let m = (nf - 2.0) / (nf + 2.0);
            let p = ParamSet::new(n, m, 1.0, 10.0, 1.0);
            assert_relative_eq!(beta0(&p), 2.0 / (nf - 2.0).sqrt(), max_relative = 1e-14);
            assert_relative_eq!(p.beta1(), 1.0 / (2.0 * m), max_relative = 1e-14);
        }
    }

    #[test]
    fn complex_roots_are_flagged() {
        // β₁ = 2.5 > β > β_min = 0.5; discriminant at β = 0.6 is negative
        let c = derive(&base(0.6));
        assert!(c.complex_roots);
        assert!(c.gamma1.is_none() && c.discriminant < 0.0);
        assert!(c.gamma1().is_err());
        assert_relative_eq!(c.cstar, 0.2, max_relative = 1e-14);
    }

    #[test]
    fn beta2_reference_value() {
        let p = base(5.0);
        let (b0, c2) = b0_c2(&p);
        assert_relative_eq!(c2, 0.81, max_relative = 1e-14);
        let expected = 2.0 * (1.6f64 / (0.4 * (1.0 - 0.81 * 0.81))).sqrt();
        assert_relative_eq!(b0, expected, max_relative = 1e-12);
        assert_relative_eq!(beta2_lower_bound(&p), 6.8208, epsilon = 1e-3);
        for beta in [7.0, 8.0, 10.0] {
            let (a1, a2) = a_coefficients(&p, beta).unwrap();
            assert!(a1 > 0.0 && a2 < 0.0, "beta {beta}: A1 {a1}, A2 {a2}");
        }
    }

    #[test]
    fn beta2_scales_with_rho1() {
        let p1 = ParamSet::new(3, 0.2, 1.0, 20.0, 1.0);
        let p2 = ParamSet::new(3, 0.2, 2.0, 20.0, 1.0);
        assert_relative_eq!(
            beta2_lower_bound(&p2),
            2.0 * beta2_lower_bound(&p1),
            max_relative = 1e-12
        );
    }

    #[test]
    fn beta2_above_conformal_exponent_is_certified() {
        // (n-2)/(n+2) = 1/3 < m = 0.4 < (n-2)/n = 0.5 takes the bisection branch
        let p = ParamSet::new(4, 0.4, 1.0, 50.0, 1.0);
        let (b0, _) = b0_c2(&p);
        let b2 = beta2_lower_bound(&p);
        assert!(b2 >= b0 && b2 >= beta0(&p) && b2 >= p.beta1());
        for k in 1..200 {
            let beta = b2 * (1.0 + 0.05 * k as f64);
            let (a1, a2) = a_coefficients(&p, beta).unwrap();
            assert!(a1 > 0.0 && a2 < 0.0, "beta {beta}: A1 {a1}, A2 {a2}");
        }
    }

    #[test]
    fn classification_examples() {
        let c = classify_beta(&base(5.0));
        assert_eq!(c.regime, Regime::RealRoots);
        assert_eq!(c.sign, Sign::Positive);
        assert_relative_eq!(c.n_beta_minus_alpha, 1.25, max_relative = 1e-12);

        let c = classify_beta(&base(2.5));
        assert!(c.on_beta1);
        assert_eq!(c.sign, Sign::Zero);
        assert!(c.n_beta_minus_alpha.abs() < 1e-12);

        assert_eq!(classify_beta(&base(8.0)).regime, Regime::SecondOrder);
        assert_eq!(classify_beta(&base(1.0)).regime, Regime::ExistenceOnly);
        // at (3, 0.2) β₀ = 2 < β₁ = 2.5 and the uniqueness-only band is empty
        let p = validate(ParamSet::new(6, 0.1, 1.0, 0.5, 1.0)).unwrap();
        let c = classify_beta(&p);
        assert!(p.beta1() <= 0.5 && 0.5 < beta0(&p));
        assert_eq!(c.regime, Regime::Uniqueness);
    }
}
