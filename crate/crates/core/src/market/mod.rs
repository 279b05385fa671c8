//! Market coefficients, the risk premium, and Brownian path generation.
//!
//! Coefficients come from a small Markovian catalog: constants, piecewise
//! linear functions of time, and clamped affine functions of the current
//! Brownian state. Every coefficient in the catalog is bounded, so sup-norm
//! bounds can be derived exactly except for the risk premium, which is either
//! declared or (for deterministic markets) derived by sampling.

mod brownian;

pub use brownian::{
    girsanov_drift_adjust, sample_brownian, BrownianBatch, GaussianCounter, PathNormals, TimeGrid,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EIG_MIN: f64 = 1e-10;

/// Relative slack applied when checking evaluated coefficients against
/// their bounds.
const BOUND_SLACK: f64 = 1e-12;

/// Sample count used to derive the risk premium bound of a deterministic
/// market when none is declared.
const THETA_BOUND_SAMPLES: usize = 1001;

/// A scalar coefficient process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Constant(f64),
    /// Piecewise linear in time through `(times[i], values[i])`, flat outside.
    Tabulated { times: Vec<f64>, values: Vec<f64> },
    /// `clamp(base + slope . W_t, lower, upper)`.
    StateAffine {
        base: f64,
        slope: Vec<f64>,
        lower: f64,
        upper: f64,
    },
}

impl Coefficient {
    pub fn value(&self, t: f64, state: &[f64]) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Tabulated { times, values } => interpolate(times, values, t),
            Coefficient::StateAffine {
                base,
                slope,
                lower,
                upper,
            } => {
                let raw = base + slope.iter().zip(state).map(|(a, w)| a * w).sum::<f64>();
                raw.clamp(*lower, *upper)
            }
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, Coefficient::StateAffine { .. })
    }

    /// Exact sup-norm of the coefficient over `[0, T] x R^n`.
    pub fn sup_abs(&self) -> f64 {
        match self {
            Coefficient::Constant(c) => c.abs(),
            Coefficient::Tabulated { values, .. } => {
                values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
            }
            Coefficient::StateAffine { lower, upper, .. } => lower.abs().max(upper.abs()),
        }
    }

    /// Interior knots where a deterministic coefficient may have kinks.
    fn knots(&self) -> &[f64] {
        match self {
            Coefficient::Tabulated { times, .. } => times,
            _ => &[],
        }
    }

    fn validate(&self, name: &'static str, n: usize) -> Result<()> {
        let bad = |message: String| Err(Error::InvalidParameter { name, message });
        match self {
            Coefficient::Constant(c) if !c.is_finite() => bad(format!("non-finite constant {c}")),
            Coefficient::Constant(_) => Ok(()),
            Coefficient::Tabulated { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return bad(format!(
                        "table needs matching non-empty times/values, got {} and {}",
                        times.len(),
                        values.len()
                    ));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("table times must be strictly increasing".into());
                }
                if times.iter().chain(values).any(|v| !v.is_finite()) {
                    return bad("table entries must be finite".into());
                }
                Ok(())
            }
            Coefficient::StateAffine {
                base,
                slope,
                lower,
                upper,
            } => {
                if slope.len() != n {
                    return bad(format!("slope has length {}, expected {n}", slope.len()));
                }
                if !(lower.is_finite() && upper.is_finite() && lower <= upper) {
                    return bad(format!("clamp range [{lower}, {upper}] must be finite and ordered"));
                }
                if !base.is_finite() || slope.iter().any(|s| !s.is_finite()) {
                    return bad("affine parameters must be finite".into());
                }
                Ok(())
            }
        }
    }
}

impl From<f64> for Coefficient {
    fn from(c: f64) -> Self {
        Coefficient::Constant(c)
    }
}

fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    if t <= times[0] {
        return values[0];
    }
    let last = times.len() - 1;
    if t >= times[last] {
        return values[last];
    }
    let i = times.partition_point(|&s| s <= t) - 1;
    let w = (t - times[i]) / (times[i + 1] - times[i]);
    values[i] + w * (values[i + 1] - values[i])
}

/// Whether the income coefficient is a rate in currency (`e_t`) or relative
/// to wealth (`e_t / X_t`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IncomeMode {
    Absolute,
    Relative,
}

/// Sup-norm bounds on the market coefficients, all resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientBounds {
    pub drift: f64,
    pub volatility: f64,
    pub theta: f64,
    pub income: f64,
    pub endowment: f64,
}

/// Optional user-declared bounds; anything left `None` is derived.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DeclaredBounds {
    pub drift: Option<f64>,
    pub volatility: Option<f64>,
    pub theta: Option<f64>,
    pub income: Option<f64>,
    pub endowment: Option<f64>,
}

/// Market coefficients evaluated at one `(t, W_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketPoint {
    pub theta: Vec<f64>,
    pub income: f64,
}

#[derive(Clone, Debug)]
pub struct MarketModel {
    horizon: f64,
    rate: f64,
    brownian_dim: usize,
    drift: Vec<Coefficient>,
    volatility: Vec<Vec<Coefficient>>,
    income: Coefficient,
    income_mode: IncomeMode,
    endowment: Coefficient,
    bounds: CoefficientBounds,
    eig_min: f64,
}

pub struct MarketBuilder {
    horizon: f64,
    rate: f64,
    drift: Vec<Coefficient>,
    volatility: Vec<Vec<Coefficient>>,
    income: Coefficient,
    income_mode: IncomeMode,
    endowment: Coefficient,
    declared: DeclaredBounds,
    eig_min: f64,
}

impl MarketBuilder {
    pub fn income(mut self, mode: IncomeMode, rate: impl Into<Coefficient>) -> Self {
        self.income_mode = mode;
        self.income = rate.into();
        self
    }

    pub fn endowment(mut self, endowment: impl Into<Coefficient>) -> Self {
        self.endowment = endowment.into();
        self
    }

    pub fn bounds(mut self, declared: DeclaredBounds) -> Self {
        self.declared = declared;
        self
    }

    pub fn eig_min(mut self, eig_min: f64) -> Self {
        self.eig_min = eig_min;
        self
    }

    pub fn build(self) -> Result<MarketModel> {
        let m = self.drift.len();
        if m == 0 {
            return Err(Error::InvalidParameter {
                name: "mu",
                message: "at least one stock is required".into(),
            });
        }
        if self.volatility.len() != m {
            return Err(Error::ShapeMismatch {
                what: "volatility rows",
                expected: m,
                found: self.volatility.len(),
            });
        }
        let n = self.volatility[0].len();
        if let Some(row) = self.volatility.iter().find(|row| row.len() != n) {
            return Err(Error::ShapeMismatch {
                what: "volatility columns",
                expected: n,
                found: row.len(),
            });
        }
        if m > n {
            return Err(Error::InvalidParameter {
                name: "sigma",
                message: format!("{m} stocks exceed Brownian dimension {n}"),
            });
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidParameter {
                name: "horizon",
                message: format!("must be positive, got {}", self.horizon),
            });
        }
        if !(self.rate.is_finite() && self.rate >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "rate",
                message: format!("must be non-negative, got {}", self.rate),
            });
        }
        if !(self.eig_min.is_finite() && self.eig_min > 0.0) {
            return Err(Error::InvalidParameter {
                name: "eig_min",
                message: format!("must be positive, got {}", self.eig_min),
            });
        }
        for c in &self.drift {
            c.validate("mu", n)?;
        }
        for c in self.volatility.iter().flatten() {
            c.validate("sigma", n)?;
        }
        self.income.validate("income", n)?;
        self.endowment.validate("endowment", n)?;

        let derived_drift = self.drift.iter().fold(0.0_f64, |a, c| a.max(c.sup_abs()));
        let derived_vol = self
            .volatility
            .iter()
            .flatten()
            .fold(0.0_f64, |a, c| a.max(c.sup_abs()));
        let mut model = MarketModel {
            horizon: self.horizon,
            rate: self.rate,
            brownian_dim: n,
            drift: self.drift,
            volatility: self.volatility,
            income: self.income,
            income_mode: self.income_mode,
            endowment: self.endowment,
            bounds: CoefficientBounds {
                drift: self.declared.drift.unwrap_or(derived_drift),
                volatility: self.declared.volatility.unwrap_or(derived_vol),
                theta: f64::INFINITY,
                income: 0.0,
                endowment: 0.0,
            },
            eig_min: self.eig_min,
        };
        model.bounds.income = self.declared.income.unwrap_or(model.income.sup_abs());
        model.bounds.endowment = self.declared.endowment.unwrap_or(model.endowment.sup_abs());
        model.bounds.theta = match self.declared.theta {
            Some(b) => b,
            None if model.coefficients_deterministic() => model.sampled_theta_bound()?,
            None => {
                return Err(Error::InvalidParameter {
                    name: "theta_bound",
                    message: "a risk premium bound must be declared for state-dependent coefficients"
                        .into(),
                })
            }
        };
        let b = &model.bounds;
        for (name, v) in [
            ("drift bound", b.drift),
            ("volatility bound", b.volatility),
            ("theta bound", b.theta),
            ("income bound", b.income),
            ("endowment bound", b.endowment),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter {
                    name: "bounds",
                    message: format!("{name} must be finite and non-negative, got {v}"),
                });
            }
        }
        Ok(model)
    }
}

impl MarketModel {
    pub fn builder(
        horizon: f64,
        rate: f64,
        drift: Vec<Coefficient>,
        volatility: Vec<Vec<Coefficient>>,
    ) -> MarketBuilder {
        MarketBuilder {
            horizon,
            rate,
            drift,
            volatility,
            income: Coefficient::Constant(0.0),
            income_mode: IncomeMode::Absolute,
            endowment: Coefficient::Constant(0.0),
            declared: DeclaredBounds::default(),
            eig_min: DEFAULT_EIG_MIN,
        }
    }

    /// Constant-coefficient market without income or endowment.
    pub fn constant(horizon: f64, rate: f64, drift: &[f64], volatility: &[Vec<f64>]) -> Result<Self> {
        Self::builder(
            horizon,
            rate,
            drift.iter().map(|&v| Coefficient::Constant(v)).collect(),
            volatility
                .iter()
                .map(|row| row.iter().map(|&v| Coefficient::Constant(v)).collect())
                .collect(),
        )
        .build()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Brownian dimension `n`.
    pub fn brownian_dim(&self) -> usize {
        self.brownian_dim
    }

    /// Number of stocks `m`.
    pub fn stock_count(&self) -> usize {
        self.drift.len()
    }

    pub fn income_mode(&self) -> IncomeMode {
        self.income_mode
    }

    pub fn income(&self) -> &Coefficient {
        &self.income
    }

    pub fn endowment(&self) -> &Coefficient {
        &self.endowment
    }

    pub fn bounds(&self) -> &CoefficientBounds {
        &self.bounds
    }

    pub fn eig_min(&self) -> f64 {
        self.eig_min
    }

    fn coefficients_deterministic(&self) -> bool {
        self.drift.iter().all(Coefficient::is_deterministic)
            && self.volatility.iter().flatten().all(Coefficient::is_deterministic)
            && self.income.is_deterministic()
    }

    /// True when no coefficient (including the terminal endowment) depends on
    /// the Brownian state, so the BSDEs reduce to backward ODEs.
    pub fn is_deterministic(&self) -> bool {
        self.coefficients_deterministic() && self.endowment.is_deterministic()
    }

    pub fn endowment_at(&self, terminal_state: &[f64]) -> f64 {
        self.endowment.value(self.horizon, terminal_state)
    }

    /// `theta = sigma^T (sigma sigma^T)^{-1} (mu - r 1)` at `(t, state)`.
    pub fn risk_premium(&self, t: f64, state: &[f64]) -> Result<Vec<f64>> {
        let n = self.brownian_dim;
        let m = self.drift.len();
        let excess: Vec<f64> = self.drift.iter().map(|c| c.value(t, state) - self.rate).collect();
        let sigma: Vec<f64> = self
            .volatility
            .iter()
            .flatten()
            .map(|c| c.value(t, state))
            .collect();

        if m == 1 {
            let norm2: f64 = sigma.iter().map(|s| s * s).sum();
            if !(norm2 >= self.eig_min) {
                return Err(Error::SingularVolatility {
                    t,
                    eigenvalue: norm2,
                    eig_min: self.eig_min,
                });
            }
            let scale = excess[0] / norm2;
            return Ok(sigma.iter().map(|s| s * scale).collect());
        }

        let sigma = DMatrix::from_row_slice(m, n, &sigma);
        let gram = &sigma * sigma.transpose();
        let smallest = gram
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if !(smallest >= self.eig_min) {
            return Err(Error::SingularVolatility {
                t,
                eigenvalue: smallest,
                eig_min: self.eig_min,
            });
        }
        let solved = gram
            .cholesky()
            .ok_or(Error::SingularVolatility {
                t,
                eigenvalue: smallest,
                eig_min: self.eig_min,
            })?
            .solve(&DVector::from_vec(excess));
        Ok((sigma.transpose() * solved).iter().copied().collect())
    }

    /// Evaluates `theta` and the income rate at `(t, state)`, enforcing every
    /// declared coefficient bound.
    pub fn point(&self, t: f64, state: &[f64]) -> Result<MarketPoint> {
        let b = &self.bounds;
        for c in &self.drift {
            check_bound("mu", c.value(t, state), b.drift, t)?;
        }
        for c in self.volatility.iter().flatten() {
            check_bound("sigma", c.value(t, state), b.volatility, t)?;
        }
        let theta = self.risk_premium(t, state)?;
        check_bound("theta", norm(&theta), b.theta, t)?;
        let income = self.income.value(t, state);
        check_bound("income", income, b.income, t)?;
        Ok(MarketPoint { theta, income })
    }

    fn sampled_theta_bound(&self) -> Result<f64> {
        let zero = vec![0.0; self.brownian_dim];
        let mut times: Vec<f64> = (0..THETA_BOUND_SAMPLES)
            .map(|i| self.horizon * i as f64 / (THETA_BOUND_SAMPLES - 1) as f64)
            .collect();
        for c in self.drift.iter().chain(self.volatility.iter().flatten()) {
            times.extend(c.knots().iter().copied().filter(|&t| (0.0..=self.horizon).contains(&t)));
        }
        let mut bound = 0.0_f64;
        for t in times {
            bound = bound.max(norm(&self.risk_premium(t, &zero)?));
        }
        let piecewise = self
            .drift
            .iter()
            .chain(self.volatility.iter().flatten())
            .any(|c| !c.knots().is_empty());
        // Between knots theta is a ratio of linear functions, so the sampled
        // maximum can be exceeded slightly.
        Ok(if piecewise { bound * 1.01 } else { bound })
    }
}

fn check_bound(name: &'static str, value: f64, bound: f64, t: f64) -> Result<()> {
    if value.abs() <= bound * (1.0 + BOUND_SLACK) + BOUND_SLACK {
        Ok(())
    } else {
        Err(Error::CoefficientBound {
            name,
            value,
            bound,
            t,
        })
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_market(mu: f64, sigma: f64, r: f64) -> MarketModel {
        MarketModel::constant(1.0, r, &[mu], &[vec![sigma]]).unwrap()
    }

    #[test]
    fn scalar_risk_premium() {
        let m = scalar_market(0.05, 0.2, 0.01);
        assert_relative_eq!(m.risk_premium(0.0, &[0.0]).unwrap()[0], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn zero_excess_return_gives_zero_premium() {
        let m = MarketModel::constant(1.0, 0.03, &[0.03, 0.03], &[vec![0.2, 0.1], vec![-0.05, 0.3]])
            .unwrap();
        assert!(m.risk_premium(0.5, &[0.0, 0.0]).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn incomplete_market_matches_least_squares_oracle() {
        // One stock, two Brownian motions: theta is the minimum-norm solution
        // of sigma . theta = mu - r.
        let m = MarketModel::constant(1.0, 0.0, &[0.05], &[vec![0.2, 0.1]]).unwrap();
        let theta = m.risk_premium(0.0, &[0.0, 0.0]).unwrap();
        let pinv = DMatrix::from_row_slice(1, 2, &[0.2, 0.1])
            .pseudo_inverse(1e-14)
            .unwrap();
        let oracle = pinv * DVector::from_vec(vec![0.05]);
        assert_relative_eq!(theta[0], oracle[0], epsilon = 1e-14);
        assert_relative_eq!(theta[1], oracle[1], epsilon = 1e-14);
        assert_relative_eq!(theta[0], 0.2 * 0.05 / 0.05, epsilon = 1e-14);
    }

    #[test]
    fn diagonal_volatility_is_componentwise() {
        let m = MarketModel::constant(
            1.0,
            0.02,
            &[0.06, 0.1, 0.0],
            &[vec![0.2, 0.0, 0.0], vec![0.0, 0.4, 0.0], vec![0.0, 0.0, 0.1]],
        )
        .unwrap();
        let theta = m.risk_premium(0.0, &[0.0; 3]).unwrap();
        assert_relative_eq!(theta[0], 0.04 / 0.2, epsilon = 1e-14);
        assert_relative_eq!(theta[1], 0.08 / 0.4, epsilon = 1e-14);
        assert_relative_eq!(theta[2], -0.02 / 0.1, epsilon = 1e-14);
    }

    #[test]
    fn singular_volatility_is_rejected() {
        let err = MarketModel::constant(1.0, 0.0, &[0.05, 0.05], &[vec![0.2, 0.1], vec![0.4, 0.2]])
            .unwrap_err();
        assert!(matches!(err, Error::SingularVolatility { .. }));
    }

    #[test]
    fn more_stocks_than_noise_is_rejected() {
        let err = MarketModel::constant(1.0, 0.0, &[0.05, 0.05], &[vec![0.2], vec![0.4]]).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { .. }));
    }

    #[test]
    fn tabulated_coefficients_interpolate_linearly() {
        let c = Coefficient::Tabulated {
            times: vec![0.0, 1.0],
            values: vec![0.1, 0.3],
        };
        assert_relative_eq!(c.value(0.25, &[]), 0.15, epsilon = 1e-15);
        assert_eq!(c.value(-1.0, &[]), 0.1);
        assert_eq!(c.value(2.0, &[]), 0.3);
        assert_eq!(c.sup_abs(), 0.3);
    }

    #[test]
    fn state_dependent_market_needs_declared_theta_bound() {
        let drift = vec![Coefficient::StateAffine {
            base: 0.05,
            slope: vec![0.01],
            lower: 0.0,
            upper: 0.1,
        }];
        let vol = vec![vec![Coefficient::Constant(0.2)]];
        assert!(MarketModel::builder(1.0, 0.0, drift.clone(), vol.clone()).build().is_err());
        let m = MarketModel::builder(1.0, 0.0, drift, vol)
            .bounds(DeclaredBounds {
                theta: Some(0.5),
                ..Default::default()
            })
            .build()
            .unwrap();
        assert!(!m.is_deterministic());
        assert_relative_eq!(m.point(0.3, &[100.0]).unwrap().theta[0], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn point_enforces_declared_bounds() {
        let m = MarketModel::builder(1.0, 0.0, vec![0.05.into()], vec![vec![0.2.into()]])
            .income(IncomeMode::Absolute, 2.0)
            .bounds(DeclaredBounds {
                income: Some(1.0),
                ..Default::default()
            })
            .build()
            .unwrap();
        assert!(matches!(
            m.point(0.0, &[0.0]),
            Err(Error::CoefficientBound { name: "income", .. })
        ));
    }

    #[test]
    fn single_stock_rescaling_leaves_theta_unchanged() {
        let base = MarketModel::constant(1.0, 0.01, &[0.07], &[vec![0.3, -0.2]]).unwrap();
        let lambda = 2.5;
        let scaled = MarketModel::constant(
            1.0,
            0.01,
            &[0.01 + lambda * 0.06],
            &[vec![lambda * 0.3, lambda * -0.2]],
        )
        .unwrap();
        let a = base.risk_premium(0.0, &[0.0, 0.0]).unwrap();
        let b = scaled.risk_premium(0.0, &[0.0, 0.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, epsilon = 1e-14);
        }
    }
}
