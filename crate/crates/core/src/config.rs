//! Experiment configuration files (TOML or JSON) and the preset library.

use std::collections::BTreeMap;
use std::path::Path;

use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::cramer::{classify_a4_with, A4Case, Recurrence};
use crate::error::{Error, Result};
use crate::prob::{parse_rational, ProbValue};
use crate::walk::{Budget, ConstraintLaw, EnvironmentSpec, JumpLaw, LowerMode, Site};

/// Largest accepted dimension.
pub const MAX_DIMENSION: usize = 16;
/// Largest accepted absolute coordinate or finite budget.
pub const MAX_MAGNITUDE: i64 = 1 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawJump {
    pub vector: Vec<i64>,
    pub prob: ProbValue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawBudgetAtom {
    pub value: i64,
    pub prob: ProbValue,
}

/// A finite budget or the string `"inf"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawBudget {
    Finite(i64),
    Tag(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawLowerSite {
    pub site: Vec<i64>,
    pub budget: RawBudget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawInitialAtom {
    pub site: Vec<i64>,
    pub prob: ProbValue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawInitial {
    Named(String),
    Law(Vec<RawInitialAtom>),
}

/// Command parameters; every field optional so CLI flags can fill the gaps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_max: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub joint_n_max: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

/// The file layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jumps: Option<Vec<RawJump>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub virgin_pmf: Option<Vec<RawBudgetAtom>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inf_mass: Option<ProbValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_sites: Option<Vec<RawLowerSite>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<RawInitial>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recurrence: Option<Recurrence>,
    #[serde(default, skip_serializing_if = "is_default_run")]
    pub run: RunParams,
}

fn is_default_run(r: &RunParams) -> bool {
    *r == RunParams::default()
}

/// A validated model with its run parameters.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub jump: JumpLaw,
    pub env: EnvironmentSpec,
    pub recurrence: Option<Recurrence>,
    pub run: RunParams,
}

impl ExperimentConfig {
    pub fn a4_case(&self) -> A4Case {
        classify_a4_with(&self.jump, &self.env.virgin, self.recurrence)
    }

    pub fn from_raw(raw: RawConfig) -> Result<Self> {
        if let Some(name) = &raw.preset {
            let mut cfg = preset(name)?;
            let has_model = raw.dimension.is_some()
                || raw.jumps.is_some()
                || raw.virgin_pmf.is_some()
                || raw.lower_mode.is_some()
                || raw.initial.is_some();
            if has_model {
                return Err(Error::config("preset", "a preset cannot be combined with model keys"));
            }
            cfg.run = raw.run;
            if raw.recurrence.is_some() {
                cfg.recurrence = raw.recurrence;
            }
            return Ok(cfg);
        }
        let dim = raw.dimension.ok_or_else(|| Error::config("dimension", "missing"))?;
        if dim == 0 || dim > MAX_DIMENSION {
            return Err(Error::config("dimension", format!("must be in 1..={MAX_DIMENSION}")));
        }
        let jumps = raw.jumps.as_ref().ok_or_else(|| Error::config("jumps", "missing"))?;
        let mut atoms = Vec::new();
        for (i, j) in jumps.iter().enumerate() {
            let field = format!("jumps[{i}].vector");
            check_vector(&field, &j.vector, dim)?;
            atoms.push((j.vector.clone(), j.prob.0.clone()));
        }
        let jump = JumpLaw::new(dim, atoms).map_err(|e| Error::config("jumps", strip(e)))?;

        let pmf_raw = raw.virgin_pmf.as_ref().ok_or_else(|| Error::config("virgin_pmf", "missing"))?;
        let mut pmf = Vec::new();
        for (i, a) in pmf_raw.iter().enumerate() {
            if a.value < 0 || a.value > MAX_MAGNITUDE {
                return Err(Error::config(
                    format!("virgin_pmf[{i}].value"),
                    format!("must be in 0..={MAX_MAGNITUDE}"),
                ));
            }
            pmf.push((a.value as u32, a.prob.0.clone()));
        }
        let inf_mass = raw.inf_mass.as_ref().map_or_else(BigRational::zero, |p| p.0.clone());
        let virgin = ConstraintLaw::new(pmf, inf_mass).map_err(|e| Error::config("virgin_pmf", strip(e)))?;
        if !virgin.mass_at_zero().is_zero() {
            return Err(Error::config("virgin_pmf", "the virgin law must put no mass on budget 0"));
        }

        let lower = match raw.lower_mode.as_deref().unwrap_or("zero") {
            "zero" => LowerMode::Zero,
            "infinite" => LowerMode::Infinite,
            "explicit" => {
                let sites = raw.lower_sites.as_ref().ok_or_else(|| {
                    Error::config("lower_sites", "required when lower_mode = \"explicit\"")
                })?;
                let mut map = BTreeMap::new();
                for (i, s) in sites.iter().enumerate() {
                    let field = format!("lower_sites[{i}]");
                    check_vector(&format!("{field}.site"), &s.site, dim)?;
                    if s.site[0] >= 0 {
                        return Err(Error::config(format!("{field}.site"), "must lie below height 0"));
                    }
                    let b = match &s.budget {
                        RawBudget::Finite(v) if (0..=MAX_MAGNITUDE).contains(v) => Budget::Finite(*v as u32),
                        RawBudget::Tag(t) if t == "inf" => Budget::Infinite,
                        _ => {
                            return Err(Error::config(
                                format!("{field}.budget"),
                                "must be a nonnegative integer or \"inf\"",
                            ))
                        }
                    };
                    if map.insert(Site(s.site.clone()), b).is_some() {
                        return Err(Error::config(format!("{field}.site"), "listed twice"));
                    }
                }
                LowerMode::Explicit(map)
            }
            other => {
                return Err(Error::config(
                    "lower_mode",
                    format!("unknown mode {other:?}; expected zero, infinite or explicit"),
                ))
            }
        };
        if raw.lower_sites.is_some() && !matches!(lower, LowerMode::Explicit(_)) {
            return Err(Error::config("lower_sites", "only allowed with lower_mode = \"explicit\""));
        }

        let initial = match &raw.initial {
            None => vec![(Site::origin(dim), BigRational::one())],
            Some(RawInitial::Named(s)) if s == "origin" => vec![(Site::origin(dim), BigRational::one())],
            Some(RawInitial::Named(s)) => {
                return Err(Error::config("initial", format!("unknown initial law {s:?}")))
            }
            Some(RawInitial::Law(atoms)) => {
                let mut out = Vec::new();
                for (i, a) in atoms.iter().enumerate() {
                    check_vector(&format!("initial[{i}].site"), &a.site, dim)?;
                    out.push((Site(a.site.clone()), a.prob.0.clone()));
                }
                out
            }
        };
        let env = EnvironmentSpec::new(virgin, lower, initial).map_err(|e| Error::config("initial", strip(e)))?;
        Ok(ExperimentConfig {
            preset: None,
            jump,
            env,
            recurrence: raw.recurrence,
            run: raw.run,
        })
    }

    /// The file form of this configuration (model keys spelled out).
    pub fn to_raw(&self) -> RawConfig {
        let jumps = self
            .jump
            .atoms()
            .iter()
            .map(|a| RawJump {
                vector: a.vector.0.clone(),
                prob: ProbValue(a.prob.clone()),
            })
            .collect();
        let virgin_pmf = self
            .env
            .virgin
            .pmf()
            .iter()
            .map(|(v, p)| RawBudgetAtom {
                value: *v as i64,
                prob: ProbValue(p.clone()),
            })
            .collect();
        let (lower_mode, lower_sites) = match &self.env.lower {
            LowerMode::Zero => ("zero", None),
            LowerMode::Infinite => ("infinite", None),
            LowerMode::Explicit(map) => (
                "explicit",
                Some(
                    map.iter()
                        .map(|(s, b)| RawLowerSite {
                            site: s.0.clone(),
                            budget: match b {
                                Budget::Finite(v) => RawBudget::Finite(*v as i64),
                                Budget::Infinite => RawBudget::Tag("inf".into()),
                            },
                        })
                        .collect(),
                ),
            ),
        };
        let initial = if self.env.initial.len() == 1 && self.env.initial[0].0 == Site::origin(self.env.dim()) {
            RawInitial::Named("origin".into())
        } else {
            RawInitial::Law(
                self.env
                    .initial
                    .iter()
                    .map(|(s, p)| RawInitialAtom {
                        site: s.0.clone(),
                        prob: ProbValue(p.clone()),
                    })
                    .collect(),
            )
        };
        RawConfig {
            preset: None,
            dimension: Some(self.jump.dim()),
            jumps: Some(jumps),
            virgin_pmf: Some(virgin_pmf),
            inf_mass: (!self.env.virgin.inf_mass().is_zero()).then(|| ProbValue(self.env.virgin.inf_mass().clone())),
            lower_mode: Some(lower_mode.into()),
            lower_sites,
            initial: Some(initial),
            recurrence: self.recurrence,
            run: self.run.clone(),
        }
    }
}

fn strip(e: Error) -> String {
    e.to_string()
}

fn check_vector(field: &str, v: &[i64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::config(field, format!("expected {dim} coordinates, got {}", v.len())));
    }
    if v.iter().any(|x| x.abs() > MAX_MAGNITUDE) {
        return Err(Error::config(field, format!("coordinates must be within ±{MAX_MAGNITUDE}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Toml,
    Json,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Ok(Format::Toml),
            Some("json") => Ok(Format::Json),
            _ => Err(Error::config("config", "file extension must be .toml or .json")),
        }
    }
}

pub fn parse_raw(text: &str, format: Format) -> Result<RawConfig> {
    match format {
        Format::Toml => toml::from_str(text).map_err(|e| Error::Parse(e.to_string())),
        Format::Json => serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string())),
    }
}

pub fn parse_config(text: &str, format: Format) -> Result<ExperimentConfig> {
    ExperimentConfig::from_raw(parse_raw(text, format)?)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, Format::from_path(path)?)
}

pub fn render_config(cfg: &ExperimentConfig, format: Format) -> Result<String> {
    let raw = cfg.to_raw();
    match format {
        Format::Toml => toml::to_string(&raw).map_err(|e| Error::Parse(e.to_string())),
        Format::Json => serde_json::to_string_pretty(&raw).map_err(|e| Error::Parse(e.to_string())),
    }
}

pub const PRESET_NAMES: &[&str] = &[
    "bb_symmetric_L2",
    "unit_budget",
    "stay_positive_drift_p(rho)",
    "iid_budget_12",
];

fn half() -> BigRational {
    BigRational::new(1.into(), 2.into())
}

fn zero_env_config(name: &str, jump: JumpLaw, virgin: ConstraintLaw) -> ExperimentConfig {
    let dim = jump.dim();
    ExperimentConfig {
        preset: Some(name.to_string()),
        jump,
        env: EnvironmentSpec::zero_environment(virgin, dim).expect("preset environment"),
        recurrence: None,
        run: RunParams::default(),
    }
}

/// Looks up a preset; `stay_positive_drift_p(rho)` takes a probability such as `1/3`.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "bb_symmetric_L2" => Ok(zero_env_config(name, JumpLaw::simple_symmetric(), ConstraintLaw::constant(2))),
        "unit_budget" => Ok(zero_env_config(name, JumpLaw::simple_symmetric(), ConstraintLaw::constant(1))),
        "iid_budget_12" => {
            let law = ConstraintLaw::new(vec![(1, half()), (2, half())], BigRational::zero()).expect("valid law");
            Ok(zero_env_config(name, JumpLaw::simple_symmetric(), law))
        }
        _ => {
            let arg = name
                .strip_prefix("stay_positive_drift_p(")
                .and_then(|r| r.strip_suffix(')'))
                .ok_or_else(|| {
                    Error::config("preset", format!("unknown preset {name:?}; known: {}", PRESET_NAMES.join(", ")))
                })?;
            let rho = parse_rational(arg).map_err(|e| Error::config("preset", e.to_string()))?;
            if !(rho > BigRational::zero() && rho <= BigRational::one()) {
                return Err(Error::config("preset", "rho must lie in (0, 1]"));
            }
            let jump = JumpLaw::nearest_neighbour(rho).map_err(|e| Error::config("preset", e.to_string()))?;
            Ok(zero_env_config(name, jump, ConstraintLaw::unlimited()))
        }
    }
}
