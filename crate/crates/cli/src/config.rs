//! Run configuration read from JSON.

use std::path::{Path, PathBuf};

use anyhow::Context;
use fastdiff::pde::{BumpShape, NewtonConfig};
use fastdiff::profiles::SingularStart;
use fastdiff::{ParamSet, ProfileKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamSet,
    #[serde(default)]
    pub profile: ProfileConfig,
    #[serde(default)]
    pub asympt: AsymptConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Seed for perturbation placement; `--seed` takes precedence.
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        // serde_json reports the offending field together with line and column
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    pub kind: ProfileKind,
    /// Smallest radius of the output grid; for singular profiles the shooting
    /// start `ξ₀` (default `10⁻⁶/λ`).
    pub r_min: Option<f64>,
    pub r_max: f64,
    pub ds: f64,
    pub tol: f64,
    pub start: SingularStart,
    pub invert: bool,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            kind: ProfileKind::Regular,
            r_min: None,
            r_max: 1e4,
            ds: 0.01,
            tol: 1e-10,
            start: SingularStart::default(),
            invert: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Synthetic {
    pub b: f64,
    /// Decay rate of the normal form; defaults to `γ₁`.
    #[serde(default)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsymptConfig {
    pub kind: ProfileKind,
    /// Amplitudes to fit; two values add the `B` scaling cross-check. Empty
    /// means the `lambda` of `params`.
    pub lambdas: Vec<f64>,
    /// Left end of the solved range in `s = log r` (regular profiles).
    pub s_min: f64,
    pub s_max: f64,
    pub ds: f64,
    pub tol: f64,
    pub window: Option<[f64; 2]>,
    pub require_second_order: bool,
    /// Fit a synthetic normal-form tail instead of a solved profile.
    pub synthetic: Option<Synthetic>,
}

impl Default for AsymptConfig {
    fn default() -> Self {
        Self {
            kind: ProfileKind::Regular,
            lambdas: Vec::new(),
            s_min: -5.0,
            s_max: 60.0,
            ds: 0.01,
            tol: 1e-10,
            window: None,
            require_second_order: false,
            synthetic: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    ExactPsi,
    PerturbedPsi,
    ExactV,
    PerturbedV,
}

impl Scenario {
    pub fn perturbed(self) -> bool {
        matches!(self, Scenario::PerturbedPsi | Scenario::PerturbedV)
    }

    pub fn singular(self) -> bool {
        matches!(self, Scenario::ExactV | Scenario::PerturbedV)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    pub amplitude: f64,
    /// Support `[r_lo, r_hi]`; drawn from the seed when absent.
    pub support: Option<[f64; 2]>,
    pub shape: BumpShape,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            amplitude: 0.1,
            support: None,
            shape: BumpShape::Indicator,
            lambda_lo: 0.5,
            lambda_hi: 16.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub scenario: Scenario,
    pub big_t: f64,
    pub cells: usize,
    /// First spacing of ball grids.
    pub h0: f64,
    /// Inner radius of punctured grids.
    pub r_min: f64,
    pub r_max: f64,
    /// Rescaled grid `[y_min, y_max]` (`y_min` applies to punctured runs).
    pub y_min: f64,
    pub y_max: f64,
    pub y_cells: usize,
    pub ds: f64,
    pub s_end: f64,
    pub record_every: usize,
    /// Profile tolerance for the reference solution.
    pub tol: f64,
    /// Annulus for the sup-distance; default `[0, 2]` on balls, `[0.5, 2]`
    /// on punctured grids.
    pub compact: Option<[f64; 2]>,
    pub perturbation: PerturbationConfig,
    pub newton: NewtonConfig,
    /// Largest sup-distance still reported as stationary.
    pub stationary_tol: f64,
    /// Allowed relative error of the rescaled L¹ decay rate.
    pub rate_tol: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::ExactPsi,
            big_t: 1.0,
            cells: 400,
            h0: 1e-3,
            r_min: 1e-5,
            r_max: 1e6,
            y_min: 1e-5,
            y_max: 5.0,
            y_cells: 200,
            ds: 1e-3,
            s_end: 2.0,
            record_every: 100,
            tol: 1e-10,
            compact: None,
            perturbation: PerturbationConfig::default(),
            newton: NewtonConfig::default(),
            stationary_tol: 0.2,
            rate_tol: 0.15,
        }
    }
}
