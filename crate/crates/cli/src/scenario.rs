//! Scenario files.
//!
//! A scenario is a TOML document with `[market]`, `[utility]`,
//! `[constraints]`, `[numerics]`, `[verify]`, `[outputs]` and an optional
//! `[sweep]` table. Everything except the market and utility blocks has
//! defaults, listed in [`defaults`].

use std::fmt;
use std::path::{Path, PathBuf};

use qbsde_core::bsde::{LsmcOptions, OdeOptions, SolutionMode, YScheme};
use qbsde_core::constraints::{ConstraintSet, Family};
use qbsde_core::drivers::{UtilityFamily, UtilityProblem};
use qbsde_core::market::{Coefficient, DeclaredBounds, IncomeMode, MarketModel, TimeGrid};
use qbsde_core::strategy::Perturbation;
use qbsde_core::Error;
use serde::{Deserialize, Serialize};

/// Numeric defaults. Units: time in years, rates per year, money in
/// currency units.
///
/// | key                          | default        |
/// |------------------------------|----------------|
/// | market.rate                  | 0              |
/// | market.income, endowment     | 0              |
/// | utility.alpha                | 1              |
/// | utility.beta                 | 0              |
/// | numerics.steps               | 256            |
/// | numerics.paths               | 100000         |
/// | numerics.seed                | 1              |
/// | numerics.degree              | 3              |
/// | numerics.z-cap               | 10 (theta + 1) |
/// | numerics.ode-tolerance       | 1e-10          |
/// | numerics.ode-max-depth       | 30             |
/// | numerics.fixed-point-tol     | 1e-10          |
/// | numerics.fixed-point-max-iter| 50             |
/// | numerics.se-groups           | 8              |
/// | verify.band                  | 3 (se)         |
/// | outputs.directory            | out            |
pub mod defaults {
    pub const RATE: f64 = 0.0;
    pub const ALPHA: f64 = 1.0;
    pub const BETA: f64 = 0.0;
    pub const STEPS: usize = 256;
    pub const PATHS: usize = 100_000;
    pub const SEED: u64 = 1;
    pub const DEGREE: usize = 3;
    pub const Z_CAP_FACTOR: f64 = 10.0;
    pub const ODE_TOLERANCE: f64 = 1e-10;
    pub const ODE_MAX_DEPTH: u32 = 30;
    pub const FIXED_POINT_TOL: f64 = 1e-10;
    pub const FIXED_POINT_MAX_ITER: usize = 50;
    pub const SE_GROUPS: usize = 8;
    pub const BAND: f64 = 3.0;
    pub const DIRECTORY: &str = "out";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Scenario {
    pub market: MarketSection,
    pub utility: UtilitySection,
    #[serde(default)]
    pub constraints: ConstraintsSection,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub outputs: OutputsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

fn zero() -> Coefficient {
    Coefficient::Constant(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct MarketSection {
    pub horizon: f64,
    #[serde(default)]
    pub rate: f64,
    pub mu: Vec<Coefficient>,
    pub sigma: Vec<Vec<Coefficient>>,
    #[serde(default = "zero")]
    pub income: Coefficient,
    /// Defaults to `absolute` for exponential utility, `relative` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub income_mode: Option<IncomeMode>,
    #[serde(default = "zero")]
    pub endowment: Coefficient,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volatility_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub income_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endowment_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eig_min: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    Exponential,
    Log,
    Power,
}

fn default_alpha() -> f64 {
    defaults::ALPHA
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct UtilitySection {
    pub family: FamilyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    /// Initial wealth.
    pub x: f64,
}

/// One piece of a time-dependent constraint schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SchedulePiece {
    pub start: f64,
    pub set: Family,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConstraintsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub investment: Option<Family>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub investment_schedule: Option<Vec<SchedulePiece>>,
    /// Relative to wealth for log and power utility.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consumption: Option<Family>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consumption_schedule: Option<Vec<SchedulePiece>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    /// Deterministic when the market is.
    #[default]
    Auto,
    Deterministic,
    Regression,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    #[default]
    Rk4,
    ImplicitEuler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct NumericsSection {
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    pub mode: ModeName,
    pub degree: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_cap: Option<f64>,
    pub scheme: SchemeName,
    pub ode_tolerance: f64,
    pub ode_max_depth: u32,
    pub fixed_point_tol: f64,
    pub fixed_point_max_iter: usize,
    pub se_groups: usize,
    /// Paths used by the regression solver; defaults to `paths`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regression_paths: Option<usize>,
}

impl Default for NumericsSection {
    fn default() -> Self {
        Self {
            steps: defaults::STEPS,
            paths: defaults::PATHS,
            seed: defaults::SEED,
            mode: ModeName::Auto,
            degree: defaults::DEGREE,
            z_cap: None,
            scheme: SchemeName::Rk4,
            ode_tolerance: defaults::ODE_TOLERANCE,
            ode_max_depth: defaults::ODE_MAX_DEPTH,
            fixed_point_tol: defaults::FIXED_POINT_TOL,
            fixed_point_max_iter: defaults::FIXED_POINT_MAX_ITER,
            se_groups: defaults::SE_GROUPS,
            regression_paths: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct VerifySection {
    pub band: f64,
    pub perturbations: Vec<Perturbation>,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            band: defaults::BAND,
            perturbations: vec![
                Perturbation::ScaleConsumption(1.5),
                Perturbation::ScaleInvestment(0.0),
                Perturbation::ScaleInvestment(2.0),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct OutputsSection {
    pub directory: PathBuf,
    pub solution: bool,
    pub report: bool,
    pub supermartingale: bool,
    /// Number of simulated optimal paths written to `paths.csv`.
    pub paths: usize,
}

impl Default for OutputsSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from(defaults::DIRECTORY),
            solution: true,
            report: true,
            supermartingale: true,
            paths: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SweepSection {
    /// Dotted path into the scenario, e.g. `constraints.investment.upper[0]`.
    pub param: String,
    pub values: Vec<f64>,
}

/// A scenario problem, with the source line when it could be located.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub origin: String,
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.origin)?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        if let Some(field) = &self.field {
            write!(f, ": `{field}`")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Fully validated inputs for the commands.
#[derive(Clone, Debug)]
pub struct Resolved {
    /// The scenario with every default made explicit; written as the manifest.
    pub scenario: Scenario,
    pub market: MarketModel,
    pub problem: UtilityProblem,
    pub grid: TimeGrid,
    pub mode: SolutionMode,
    pub ode: OdeOptions,
    pub lsmc: LsmcOptions,
    pub regression_paths: usize,
}

/// Command line overrides, applied before validation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub out: Option<PathBuf>,
}

struct Source<'a> {
    origin: &'a str,
    text: &'a str,
}

impl Source<'_> {
    fn error(&self, field: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            origin: self.origin.to_string(),
            line: locate(self.text, field),
            field: Some(field.to_string()),
            message: message.into(),
        }
    }
}

/// 1-based line of `section.key` (or of the section header) in `text`.
fn locate(text: &str, field: &str) -> Option<usize> {
    let field = field.split('[').next().unwrap_or(field);
    let (section, key) = match field.split_once('.') {
        Some((s, k)) => (s, k.split('.').next().unwrap_or(k)),
        None => (field, ""),
    };
    let mut in_section = false;
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            let name = line.trim_matches(|c| c == '[' || c == ']').trim();
            in_section = name == section || name.starts_with(&format!("{section}."));
            if in_section && header.is_none() {
                header = Some(i + 1);
            }
            if in_section && !key.is_empty() && name == format!("{section}.{key}") {
                return Some(i + 1);
            }
            continue;
        }
        if in_section && !key.is_empty() {
            let lhs = line.split('=').next().unwrap_or("").trim();
            if lhs == key {
                return Some(i + 1);
            }
        }
    }
    header
}

impl Scenario {
    pub fn parse(text: &str, origin: &str) -> Result<Scenario, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError {
            origin: origin.to_string(),
            line: e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1),
            field: None,
            message: e.message().trim().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<(Scenario, String), ConfigError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            origin: origin.clone(),
            line: None,
            field: None,
            message: format!("cannot read scenario: {e}"),
        })?;
        Ok((Self::parse(&text, &origin)?, text))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.numerics.seed = seed;
        }
        if let Some(paths) = o.paths {
            self.numerics.paths = paths;
        }
        if let Some(steps) = o.steps {
            self.numerics.steps = steps;
        }
        if let Some(out) = &o.out {
            self.outputs.directory = out.clone();
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Returns a copy with the numeric value at `param` replaced.
    pub fn with_param(&self, param: &str, value: f64) -> Result<Scenario, ConfigError> {
        let err = |message: String| ConfigError {
            origin: "--param".into(),
            line: None,
            field: Some(param.to_string()),
            message,
        };
        let mut root = toml::Value::try_from(self).map_err(|e| err(e.to_string()))?;
        let mut node = &mut root;
        for segment in param.split('.') {
            let (name, indices) = split_indices(segment).ok_or_else(|| err("malformed parameter path".into()))?;
            node = node
                .get_mut(name)
                .ok_or_else(|| err(format!("no parameter `{name}` in the scenario")))?;
            for i in indices {
                node = node
                    .get_mut(i)
                    .ok_or_else(|| err(format!("index {i} out of range")))?;
            }
        }
        *node = match node {
            toml::Value::Float(_) => toml::Value::Float(value),
            toml::Value::Integer(_) => {
                if value.fract() != 0.0 || !value.is_finite() {
                    return Err(err(format!("expects an integer, got {value}")));
                }
                toml::Value::Integer(value as i64)
            }
            _ => return Err(err("is not a numeric parameter".into())),
        };
        root.try_into().map_err(|e: toml::de::Error| err(e.message().to_string()))
    }

    /// Validates the scenario and builds the model objects. `text` is the
    /// source, used to report line numbers.
    pub fn resolve(&self, origin: &str, text: &str) -> Result<Resolved, ConfigError> {
        let src = Source { origin, text };
        let m = &self.market;
        let u = &self.utility;
        let n = &self.numerics;

        let family = match (u.family, u.gamma) {
            (FamilyName::Exponential, Some(gamma)) => UtilityFamily::Exponential { gamma },
            (FamilyName::Power, Some(gamma)) => UtilityFamily::Power { gamma },
            (FamilyName::Log, None) => UtilityFamily::Log,
            (FamilyName::Log, Some(_)) => return Err(src.error("utility.gamma", "log utility takes no gamma")),
            (_, None) => return Err(src.error("utility.gamma", "required for exponential and power utility")),
        };
        let income_mode = m.income_mode.unwrap_or(match family {
            UtilityFamily::Exponential { .. } => IncomeMode::Absolute,
            _ => IncomeMode::Relative,
        });

        let mut builder = MarketModel::builder(m.horizon, m.rate, m.mu.clone(), m.sigma.clone())
            .income(income_mode, m.income.clone())
            .endowment(m.endowment.clone())
            .bounds(DeclaredBounds {
                drift: m.drift_bound,
                volatility: m.volatility_bound,
                theta: m.theta_bound,
                income: m.income_bound,
                endowment: m.endowment_bound,
            });
        if let Some(e) = m.eig_min {
            builder = builder.eig_min(e);
        }
        let market = builder.build().map_err(|e| core_error(&src, e, "market"))?;
        let dim = market.brownian_dim();

        let c = &self.constraints;
        let investment = set(&src, dim, "constraints.investment", &c.investment, &c.investment_schedule)?;
        let consumption = set(&src, 1, "constraints.consumption", &c.consumption, &c.consumption_schedule)?;
        let problem = UtilityProblem::new(family, u.alpha, u.beta, u.x, consumption, investment)
            .map_err(|e| core_error(&src, e, "utility"))?;
        qbsde_core::drivers::UtilityDriver::new(market.clone(), problem.clone())
            .map_err(|e| core_error(&src, e, "constraints"))?;

        if n.steps == 0 {
            return Err(src.error("numerics.steps", "must be positive"));
        }
        if n.paths == 0 {
            return Err(src.error("numerics.paths", "must be positive"));
        }
        if !(self.verify.band > 0.0) {
            return Err(src.error("verify.band", "must be positive"));
        }
        for p in &self.verify.perturbations {
            if let Perturbation::FixedInvestment(v) = p {
                if v.len() != dim {
                    return Err(src.error(
                        "verify.perturbations",
                        format!("fixed investment has {} components, market has {dim}", v.len()),
                    ));
                }
            }
        }
        let grid = TimeGrid::uniform(m.horizon, n.steps).map_err(|e| src.error("numerics.steps", e.to_string()))?;
        let mode = match n.mode {
            ModeName::Deterministic => {
                if !market.is_deterministic() {
                    return Err(src.error("numerics.mode", "market coefficients depend on the Brownian state"));
                }
                SolutionMode::Deterministic
            }
            ModeName::Regression => SolutionMode::Regression,
            ModeName::Auto if market.is_deterministic() => SolutionMode::Deterministic,
            ModeName::Auto => SolutionMode::Regression,
        };
        let ode = OdeOptions {
            tolerance: n.ode_tolerance,
            max_depth: n.ode_max_depth,
        };
        if !(ode.tolerance > 0.0) {
            return Err(src.error("numerics.ode-tolerance", "must be positive"));
        }
        let z_cap = n
            .z_cap
            .unwrap_or(defaults::Z_CAP_FACTOR * (market.bounds().theta + 1.0));
        if !(z_cap > 0.0) {
            return Err(src.error("numerics.z-cap", "must be positive"));
        }
        let lsmc = LsmcOptions {
            degree: n.degree,
            z_cap,
            scheme: match n.scheme {
                SchemeName::Rk4 => YScheme::Rk4,
                SchemeName::ImplicitEuler => YScheme::ImplicitEuler,
            },
            ode,
            fixed_point_tol: n.fixed_point_tol,
            fixed_point_max_iter: n.fixed_point_max_iter,
            se_groups: n.se_groups,
        };
        let regression_paths = n.regression_paths.unwrap_or(n.paths);

        let mut scenario = self.clone();
        scenario.market.income_mode = Some(income_mode);
        scenario.numerics.mode = match mode {
            SolutionMode::Deterministic => ModeName::Deterministic,
            SolutionMode::Regression => ModeName::Regression,
        };
        if mode == SolutionMode::Regression {
            scenario.numerics.z_cap = Some(z_cap);
            scenario.numerics.regression_paths = Some(regression_paths);
        }
        Ok(Resolved {
            scenario,
            market,
            problem,
            grid,
            mode,
            ode,
            lsmc,
            regression_paths,
        })
    }
}

fn split_indices(segment: &str) -> Option<(&str, Vec<usize>)> {
    let mut parts = segment.split('[');
    let name = parts.next()?;
    let mut indices = Vec::new();
    for p in parts {
        indices.push(p.strip_suffix(']')?.parse().ok()?);
    }
    Some((name, indices))
}

fn set(
    src: &Source,
    dim: usize,
    field: &str,
    single: &Option<Family>,
    schedule: &Option<Vec<SchedulePiece>>,
) -> Result<ConstraintSet, ConfigError> {
    let result = match (single, schedule) {
        (Some(_), Some(_)) => {
            return Err(src.error(field, "give either a single set or a schedule, not both"));
        }
        (None, None) => return Ok(ConstraintSet::full(dim)),
        (Some(f), None) => ConstraintSet::new(dim, f.clone()),
        (None, Some(pieces)) => ConstraintSet::piecewise(dim, pieces.iter().map(|p| (p.start, p.set.clone())).collect()),
    };
    let field = if schedule.is_some() { format!("{field}-schedule") } else { field.to_string() };
    result.map_err(|e| src.error(&field, e.to_string()))
}

/// Maps a model construction error to the scenario field it concerns.
fn core_error(src: &Source, e: Error, section: &str) -> ConfigError {
    let field = match &e {
        Error::InvalidParameter { name, .. } => match *name {
            "mu" => "market.mu".to_string(),
            "sigma" => "market.sigma".into(),
            "horizon" => "market.horizon".into(),
            "rate" => "market.rate".into(),
            "income" => "market.income".into(),
            "endowment" => "market.endowment".into(),
            "eig_min" => "market.eig-min".into(),
            "theta_bound" => "market.theta-bound".into(),
            "bounds" => "market".into(),
            "alpha" | "beta" | "gamma" | "x" => format!("utility.{name}"),
            "consumption" => "constraints.consumption".into(),
            other => format!("{section}.{other}"),
        },
        Error::NegativeBeta(_) => "utility.beta".into(),
        Error::ShapeMismatch { what, .. } if what.starts_with("investment") => "constraints.investment".into(),
        Error::ShapeMismatch { what, .. } if what.starts_with("volatility") => "market.sigma".into(),
        Error::SingularVolatility { .. } => "market.sigma".into(),
        Error::CoefficientBound { .. } => "market".into(),
        _ => section.to_string(),
    };
    src.error(&field, e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOG: &str = r#"
[market]
horizon = 1.0
mu = [0.05]
sigma = [[0.2]]

[utility]
family = "log"
x = 1.0

[constraints.investment]
family = "box"
lower = [0.0]
upper = [0.1]
"#;

    #[test]
    fn minimal_scenario_resolves_with_defaults() {
        let s = Scenario::parse(LOG, "t").unwrap();
        let r = s.resolve("t", LOG).unwrap();
        assert_eq!(r.mode, SolutionMode::Deterministic);
        assert_eq!(r.grid.steps(), defaults::STEPS);
        assert_eq!(r.scenario.market.income_mode, Some(IncomeMode::Relative));
        assert!(!r.problem.investment().is_full());
        assert_eq!(s.numerics.paths, defaults::PATHS);
    }

    #[test]
    fn manifest_round_trips() {
        let s = Scenario::parse(LOG, "t").unwrap();
        let r = s.resolve("t", LOG).unwrap();
        let text = r.scenario.to_toml();
        let back = Scenario::parse(&text, "manifest").unwrap();
        assert_eq!(back, r.scenario);
        assert_eq!(back.resolve("m", &text).unwrap().scenario, r.scenario);
    }

    #[test]
    fn unknown_field_is_reported_with_line() {
        let text = LOG.replace("x = 1.0", "x = 1.0\nxx = 2.0");
        let e = Scenario::parse(&text, "t").unwrap_err();
        assert_eq!(e.line, Some(10));
        assert!(e.message.contains("xx"), "{e}");
    }

    #[test]
    fn power_gamma_one_is_rejected_at_its_line() {
        let text = LOG.replace("family = \"log\"", "family = \"power\"\ngamma = 1.0");
        let s = Scenario::parse(&text, "t").unwrap();
        let e = s.resolve("t", &text).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("utility.gamma"));
        assert_eq!(e.line, Some(9));
    }

    #[test]
    fn exponential_rejects_consumption_constraints() {
        let text = LOG.replace("family = \"log\"", "family = \"exponential\"\ngamma = 1.0")
            + "\n[constraints.consumption]\nfamily = \"box\"\nlower = [0.0]\nupper = [1.0]\n";
        let s = Scenario::parse(&text, "t").unwrap();
        let e = s.resolve("t", &text).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("constraints.consumption"));
    }

    #[test]
    fn incomplete_constraint_is_a_parse_error() {
        let text = LOG.replace("upper = [0.1]\n", "");
        let e = Scenario::parse(&text, "t").unwrap_err();
        assert!(e.message.contains("upper"), "{e}");
    }

    #[test]
    fn with_param_replaces_nested_values() {
        let s = Scenario::parse(LOG, "t").unwrap();
        let t = s.with_param("constraints.investment.upper[0]", f64::INFINITY).unwrap();
        assert_eq!(
            t.constraints.investment,
            Some(Family::Box {
                lower: vec![0.0],
                upper: vec![f64::INFINITY]
            })
        );
        assert_eq!(s.with_param("numerics.steps", 64.0).unwrap().numerics.steps, 64);
        assert!(s.with_param("numerics.steps", 6.5).is_err());
        assert!(s.with_param("utility.gamma", 0.5).is_err());
        assert!(s.with_param("utility.family", 0.5).is_err());
        assert!(s.with_param("market.mu[3]", 0.5).is_err());
    }

    #[test]
    fn perturbations_parse_from_inline_tables() {
        let text = format!("{LOG}\n[verify]\nperturbations = [{{ scale-investment = 2.0 }}, {{ shift-consumption = 0.5 }}]\n");
        let s = Scenario::parse(&text, "t").unwrap();
        assert_eq!(
            s.verify.perturbations,
            vec![Perturbation::ScaleInvestment(2.0), Perturbation::ShiftConsumption(0.5)]
        );
    }
}
