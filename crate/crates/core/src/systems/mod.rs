//! Ground-truth invariants and seeded dataset generators.

mod augment;
mod dataset;
mod physical;
mod synthetic;

pub use augment::{add_nuisance, add_observation_noise, generate_null};
pub use dataset::{DatasetMeta, DriftStats, Group, GroupedDataset};
pub use physical::{
    cartesian_to_polar, kepler_period, polar_to_cartesian, simulate_kepler, simulate_lotka_volterra, to_polar,
    KeplerOptions, KEPLER_DT, LV_DT, LV_STRIDE,
};
pub use synthetic::{generate_synthetic, max_residual, S1Form, SyntheticSystem};

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lotka–Volterra rates for `dx/dt = αx − γxy`, `dy/dt = −βy + δxy`.
pub const LV_ALPHA: f64 = 1.1;
pub const LV_BETA: f64 = 0.4;
pub const LV_DELTA: f64 = 0.1;
pub const LV_GAMMA: f64 = 0.4;

/// Kepler problem with `m = 1`, `GM = 1`.
pub const KEPLER_GM: f64 = 1.0;

/// A closed-form invariant over unscaled states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Invariant {
    /// `x1 − 3·x2·x3 + ½·x4²`
    S1,
    /// `x1 − 2·x2·x3 + 3·x4²`
    S1MainText,
    /// `3·x1 + 2·sin(x2) + sqrt(|x1|)·x3³`
    S2,
    /// `2·x1·x2 − (ln|x1 + x3| − x4) / x3`
    S3,
    /// `β·ln x + α·ln y − δ·x − γ·y`, conserved by the Lotka–Volterra flow.
    LotkaVolterra,
    /// `α·ln x + δ·ln y − β·x − γ·y`; this labelling is not conserved by the
    /// flow above and is kept for comparison only.
    LotkaVolterraPrinted,
    /// `x·vy − y·vx`
    KeplerAngularMomentum,
    /// `½(vx² + vy²) − GM / r`
    KeplerEnergy,
}

impl Invariant {
    pub fn dim(self) -> usize {
        match self {
            Invariant::S1 | Invariant::S1MainText | Invariant::S3 => 4,
            Invariant::S2 => 3,
            Invariant::LotkaVolterra | Invariant::LotkaVolterraPrinted => 2,
            Invariant::KeplerAngularMomentum | Invariant::KeplerEnergy => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Invariant::S1 => "s1",
            Invariant::S1MainText => "s1_main_text",
            Invariant::S2 => "s2",
            Invariant::S3 => "s3",
            Invariant::LotkaVolterra => "lotka_volterra",
            Invariant::LotkaVolterraPrinted => "lotka_volterra_printed",
            Invariant::KeplerAngularMomentum => "angular_momentum",
            Invariant::KeplerEnergy => "energy",
        }
    }

    /// Value at an unscaled state. Errors outside the formula's domain.
    pub fn value(self, s: ArrayView1<f64>) -> Result<f64> {
        if s.len() != self.dim() {
            return Err(Error::Dimension(format!("{} expects {} variables, got {}", self.name(), self.dim(), s.len())));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite state {s}")));
        }
        Ok(match self {
            Invariant::S1 => s[0] - 3.0 * s[1] * s[2] + 0.5 * s[3] * s[3],
            Invariant::S1MainText => s[0] - 2.0 * s[1] * s[2] + 3.0 * s[3] * s[3],
            Invariant::S2 => 3.0 * s[0] + 2.0 * s[1].sin() + s[0].abs().sqrt() * s[2].powi(3),
            Invariant::S3 => {
                let (x1, x2, x3, x4) = (s[0], s[1], s[2], s[3]);
                if x3 == 0.0 || x1 + x3 == 0.0 {
                    return Err(Error::Domain(format!("S3 needs x3 != 0 and x1 + x3 != 0, got {s}")));
                }
                2.0 * x1 * x2 - ((x1 + x3).abs().ln() - x4) / x3
            }
            Invariant::LotkaVolterra | Invariant::LotkaVolterraPrinted => {
                let (x, y) = (s[0], s[1]);
                if x <= 0.0 || y <= 0.0 {
                    return Err(Error::Domain(format!("populations must be positive, got {s}")));
                }
                if self == Invariant::LotkaVolterra {
                    LV_BETA * x.ln() + LV_ALPHA * y.ln() - LV_DELTA * x - LV_GAMMA * y
                } else {
                    LV_ALPHA * x.ln() + LV_DELTA * y.ln() - LV_BETA * x - LV_GAMMA * y
                }
            }
            Invariant::KeplerAngularMomentum => s[0] * s[3] - s[1] * s[2],
            Invariant::KeplerEnergy => {
                let r = s[0].hypot(s[1]);
                if r == 0.0 {
                    return Err(Error::Domain("Kepler energy is singular at r = 0".into()));
                }
                0.5 * (s[2] * s[2] + s[3] * s[3]) - KEPLER_GM / r
            }
        })
    }
}

/// Named dataset recipes available to the CLI and the experiment harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    S1,
    S2,
    S3,
    LotkaVolterra,
    Kepler,
    /// S2 with an appended standard-normal nuisance column.
    S2Plus,
    /// Kepler in polar coordinates `(r, ṙ, θ, θ̇)`.
    KeplerPlus,
    /// Kepler with angular momentum pinned to −1.5; labels are the energy.
    KeplerControlled,
    /// Five-dimensional Gaussian clouds with no invariant.
    Null,
}

impl System {
    pub const ALL: [System; 9] = [
        System::S1,
        System::S2,
        System::S3,
        System::LotkaVolterra,
        System::Kepler,
        System::S2Plus,
        System::KeplerPlus,
        System::KeplerControlled,
        System::Null,
    ];

    pub fn name(self) -> &'static str {
        match self {
            System::S1 => "s1",
            System::S2 => "s2",
            System::S3 => "s3",
            System::LotkaVolterra => "lotka_volterra",
            System::Kepler => "kepler",
            System::S2Plus => "s2_plus",
            System::KeplerPlus => "kepler_plus",
            System::KeplerControlled => "kepler_controlled",
            System::Null => "null",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            System::S1 | System::S3 | System::Kepler | System::KeplerPlus | System::KeplerControlled => 4,
            System::S2 => 3,
            System::S2Plus => 4,
            System::LotkaVolterra => 2,
            System::Null => 5,
        }
    }

    /// Generate `n` groups of `m` points.
    pub fn generate(self, n: usize, m: usize, seed: u64) -> Result<GroupedDataset> {
        match self {
            System::S1 => generate_synthetic(SyntheticSystem::S1(S1Form::Appendix), n, m, seed),
            System::S2 => generate_synthetic(SyntheticSystem::S2, n, m, seed),
            System::S3 => generate_synthetic(SyntheticSystem::S3, n, m, seed),
            System::LotkaVolterra => simulate_lotka_volterra(n, m, seed),
            System::Kepler => simulate_kepler(n, m, seed, &KeplerOptions::default()),
            System::S2Plus => {
                let base = generate_synthetic(SyntheticSystem::S2, n, m, seed)?;
                Ok(add_nuisance(&base, crate::par::derive_seed(seed, 0x5EED_0001)))
            }
            System::KeplerPlus => to_polar(&simulate_kepler(n, m, seed, &KeplerOptions::default())?),
            System::KeplerControlled => {
                simulate_kepler(n, m, seed, &KeplerOptions { fixed_angular_momentum: Some(-1.5), ..Default::default() })
            }
            System::Null => generate_null(n, m, seed),
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', '+'], "_");
        let found = match norm.as_str() {
            "lv" | "lotka" => Some(System::LotkaVolterra),
            "s2plus" | "s2_" => Some(System::S2Plus),
            "keplerplus" | "kepler_" | "kepler_polar" => Some(System::KeplerPlus),
            _ => System::ALL.into_iter().find(|sys| sys.name() == norm),
        };
        found.ok_or_else(|| Error::Argument(format!("unknown system `{s}`")))
    }
}
