//! Scenario files and the built-in scenario set.
//!
//! Scenarios are TOML documents. Every key that carries a physical quantity
//! names its unit (`delta_s`, `gamma_s`, `phi_rad`).

use serde::{Deserialize, Serialize};

use crate::channel::DelayLaw;
use crate::error::{Error, Result};
use crate::plants::{DisturbanceLaw, PendulumParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub delta_s: f64,
    pub horizon_s: f64,
    #[serde(default)]
    pub seed: u64,
    pub plant: PlantSection,
    pub channel: ChannelSection,
    pub disturbance: DisturbanceSection,
    pub scheme: SchemeSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default, skip_serializing_if = "ReferenceSection::is_empty")]
    pub reference: ReferenceSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlantSection {
    /// The linearised pendulum in diagonal coordinates.
    PendulumDiagonal {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<PendulumParams>,
    },
    /// The full nonlinear pendulum driven by the linear scheme.
    PendulumNonlinear {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<PendulumParams>,
    },
    /// `ẋ = 2x + sin x + u + w`.
    ScalarDemo,
}

impl PlantSection {
    pub fn pendulum_params(&self) -> Option<PendulumParams> {
        match self {
            PlantSection::PendulumDiagonal { params } | PlantSection::PendulumNonlinear { params } => {
                Some(params.clone().unwrap_or_else(PendulumParams::laboratory))
            }
            PlantSection::ScalarDemo => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub gamma_s: f64,
    #[serde(default = "default_min_delay")]
    pub min_delay_steps: u64,
    #[serde(default)]
    pub delay_law: DelayLaw,
    /// Overrides the seed derived from the scenario seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_min_delay() -> u64 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSection {
    /// Bound on each disturbance sample in the plant's own coordinates.
    pub bound: f64,
    #[serde(default)]
    pub law: DisturbanceLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SchemeSection {
    Linear(LinearSection),
    Nonlinear(NonlinearSection),
}

impl SchemeSection {
    pub fn kind(&self) -> SchemeKind {
        match self {
            SchemeSection::Linear(_) => SchemeKind::Linear,
            SchemeSection::Nonlinear(_) => SchemeKind::Nonlinear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Linear,
    Nonlinear,
}

/// Threshold either given directly or as a margin above the feasibility floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Value(f64),
    Margin(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_margin: Option<f64>,
    pub rho0: f64,
    pub b: f64,
    /// Feedback row applied to the diagonal-coordinate estimate.
    pub gain: [f64; 2],
    /// Disturbance bound per diagonal coordinate assumed by the scheme.
    /// Defaults to the disturbance bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance_bound: Option<f64>,
    /// Overrides the computed payload size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_bits: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearSection {
    pub alpha_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_margin: Option<f64>,
    /// `u = −gain·x̂`.
    pub gain: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_bits: Option<u32>,
}

fn threshold(j: Option<f64>, margin: Option<f64>) -> Result<Threshold> {
    match (j, margin) {
        (Some(v), None) => Ok(Threshold::Value(v)),
        (None, Some(m)) => Ok(Threshold::Margin(m)),
        (None, None) => Err(Error::config("scheme needs either `j` or `j_margin`")),
        (Some(_), Some(_)) => Err(Error::config("scheme sets both `j` and `j_margin`")),
    }
}

impl LinearSection {
    pub fn threshold(&self) -> Result<Threshold> {
        threshold(self.j, self.j_margin)
    }
}

impl NonlinearSection {
    pub fn threshold(&self) -> Result<Threshold> {
        threshold(self.j, self.j_margin)
    }
}

/// Initial condition. Pendulum scenarios use `phi_rad`/`phi_dot_rad_s` and
/// start the estimate with error `z` on the unstable coordinate; scalar
/// scenarios use `x` and `z`, with `x̂(0) = x − z`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default, skip_serializing_if = "is_zero")]
    pub phi_rad: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub phi_dot_rad_s: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub x: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub z: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

/// Published reference values carried for comparison only.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published_g_bits: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published_rate_bits_per_s: Option<f64>,
}

impl ReferenceSection {
    fn is_empty(&self) -> bool {
        self.published_g_bits.is_none() && self.published_rate_bits_per_s.is_none()
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// A named built-in scenario. Multi-column entries run several scenarios.
#[derive(Debug, Clone, Copy)]
pub struct Builtin {
    pub name: &'static str,
    pub columns: &'static [(&'static str, &'static str)],
}

const BUILTINS: &[Builtin] = &[
    Builtin { name: "linear-gamma2delta", columns: &[("main", include_str!("../scenarios/linear-gamma2delta.toml"))] },
    Builtin { name: "linear-gamma5delta", columns: &[("main", include_str!("../scenarios/linear-gamma5delta.toml"))] },
    Builtin {
        name: "nonlinear-fig",
        columns: &[
            ("gamma-0.1", include_str!("../scenarios/nonlinear-fig-gamma-0.1.toml")),
            ("gamma-0.99", include_str!("../scenarios/nonlinear-fig-gamma-0.99.toml")),
        ],
    },
    Builtin { name: "nonlinear-rate", columns: &[("main", include_str!("../scenarios/nonlinear-rate.toml"))] },
];

pub const BUILTIN_PREFIX: &str = "paper/";

pub fn builtins() -> &'static [Builtin] {
    BUILTINS
}

/// One row of the built-in parameter table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuiltinSummary {
    pub name: String,
    pub column: String,
    pub scheme: SchemeKind,
    pub delta_s: f64,
    pub horizon_s: f64,
    pub gamma_s: f64,
    pub min_delay_steps: u64,
    pub disturbance_bound: f64,
    pub g_bits: u32,
    pub published_g_bits: Option<u32>,
}

pub fn list_builtin_scenarios() -> Result<Vec<BuiltinSummary>> {
    let mut out = Vec::new();
    for b in BUILTINS {
        for (column, text) in b.columns {
            let sc = Scenario::from_toml(text)?;
            let prepared = crate::engine::prepare(&sc)?;
            out.push(BuiltinSummary {
                name: format!("{BUILTIN_PREFIX}{}", b.name),
                column: column.to_string(),
                scheme: sc.scheme.kind(),
                delta_s: sc.delta_s,
                horizon_s: sc.horizon_s,
                gamma_s: sc.channel.gamma_s,
                min_delay_steps: sc.channel.min_delay_steps,
                disturbance_bound: sc.disturbance.bound,
                g_bits: prepared.g_bits(),
                published_g_bits: sc.reference.published_g_bits,
            });
        }
    }
    Ok(out)
}

/// Resolve `paper/<name>` or `paper/<name>/<column>` to `(column, scenario)` pairs.
pub fn builtin(name: &str) -> Result<Vec<(String, Scenario)>> {
    let stripped = name.strip_prefix(BUILTIN_PREFIX).unwrap_or(name);
    let (base, column) = match stripped.split_once('/') {
        Some((b, c)) => (b, Some(c)),
        None => (stripped, None),
    };
    let unknown = || {
        let names: Vec<String> = BUILTINS.iter().map(|b| format!("{BUILTIN_PREFIX}{}", b.name)).collect();
        Error::config(format!("unknown scenario `{name}`; built-ins are: {}", names.join(", ")))
    };
    let entry = BUILTINS.iter().find(|b| b.name == base).ok_or_else(unknown)?;
    let mut out = Vec::new();
    for (col, text) in entry.columns {
        if column.is_none_or(|c| c == *col) {
            out.push((col.to_string(), Scenario::from_toml(text)?));
        }
    }
    if out.is_empty() {
        return Err(unknown());
    }
    Ok(out)
}

/// Load a scenario argument: a built-in name or a path to a TOML file.
pub fn resolve(arg: &str) -> Result<Vec<(String, Scenario)>> {
    let path = std::path::Path::new(arg);
    if !arg.starts_with(BUILTIN_PREFIX) && path.exists() {
        return Ok(vec![("main".to_string(), Scenario::from_path(path)?)]);
    }
    builtin(arg)
}
