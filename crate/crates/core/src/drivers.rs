//! Horizon functions `h` and the drivers `f(t, y, z)` of the three
//! utility BSDEs.

use crate::constraints::{argmax_consumption_log, argmax_consumption_power, ConstraintSet};
use crate::error::{Error, Result};
use crate::market::{dot, IncomeMode, MarketModel, MarketPoint};

/// `h` for exponential utility: solves `h' = h (h - r)`, `h(T) = 1`.
pub fn h_exponential(t: f64, rate: f64, horizon: f64) -> Result<f64> {
    check_time(t, horizon)?;
    let tau = horizon - t;
    Ok(if tau == 0.0 {
        1.0
    } else if rate == 0.0 {
        1.0 / (1.0 + tau)
    } else {
        rate / (1.0 - (1.0 - rate) * (-rate * tau).exp())
    })
}

/// `h` for log utility: solves `h' = beta h - alpha`, `h(T) = 1`.
pub fn h_log(t: f64, alpha: f64, beta: f64, horizon: f64) -> Result<f64> {
    check_time(t, horizon)?;
    if beta < 0.0 {
        return Err(Error::NegativeBeta(beta));
    }
    let tau = horizon - t;
    Ok(if tau == 0.0 {
        1.0
    } else if beta == 0.0 {
        1.0 + alpha * tau
    } else {
        let ratio = alpha / beta;
        ratio + (1.0 - ratio) * (-beta * tau).exp()
    })
}

fn check_time(t: f64, horizon: f64) -> Result<()> {
    if (0.0..=horizon).contains(&t) {
        Ok(())
    } else {
        Err(Error::OutOfRange { t, horizon })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UtilityFamily {
    /// `u(x) = -exp(-gamma x)`.
    Exponential { gamma: f64 },
    Log,
    /// `u(x) = x^gamma / gamma`.
    Power { gamma: f64 },
}

impl UtilityFamily {
    pub fn name(&self) -> &'static str {
        match self {
            UtilityFamily::Exponential { .. } => "exponential",
            UtilityFamily::Log => "log",
            UtilityFamily::Power { .. } => "power",
        }
    }

    pub fn utility(&self, x: f64) -> f64 {
        match *self {
            UtilityFamily::Exponential { gamma } => -(-gamma * x).exp(),
            UtilityFamily::Log if x > 0.0 => x.ln(),
            UtilityFamily::Log => f64::NEG_INFINITY,
            UtilityFamily::Power { gamma } if x > 0.0 => x.powf(gamma) / gamma,
            UtilityFamily::Power { gamma } if x == 0.0 && gamma > 0.0 => 0.0,
            UtilityFamily::Power { .. } => f64::NEG_INFINITY,
        }
    }
}

/// Maximize `E[ int_0^T alpha e^{-beta t} u(c_t) dt + e^{-beta T} u(X_T + E) ]`.
#[derive(Clone, Debug)]
pub struct UtilityProblem {
    family: UtilityFamily,
    alpha: f64,
    beta: f64,
    x: f64,
    consumption: ConstraintSet,
    investment: ConstraintSet,
}

impl UtilityProblem {
    /// For the exponential family the consumption set must be the full line.
    /// For log and power, sets are relative to wealth.
    pub fn new(
        family: UtilityFamily,
        alpha: f64,
        beta: f64,
        x: f64,
        consumption: ConstraintSet,
        investment: ConstraintSet,
    ) -> Result<Self> {
        let param = |name: &'static str, message: String| Err(Error::InvalidParameter { name, message });
        if !(alpha > 0.0 && alpha.is_finite()) {
            return param("alpha", format!("must be positive and finite, got {alpha}"));
        }
        if !beta.is_finite() {
            return param("beta", format!("must be finite, got {beta}"));
        }
        if !x.is_finite() {
            return param("x", format!("must be finite, got {x}"));
        }
        match family {
            UtilityFamily::Exponential { gamma } => {
                if !(gamma > 0.0 && gamma.is_finite()) {
                    return param("gamma", format!("exponential utility needs gamma > 0, got {gamma}"));
                }
                if !consumption.is_full() {
                    return param("consumption", "exponential utility leaves consumption unconstrained".into());
                }
            }
            UtilityFamily::Log => {
                if beta < 0.0 {
                    return Err(Error::NegativeBeta(beta));
                }
            }
            UtilityFamily::Power { gamma } => {
                if !(gamma.is_finite() && gamma < 1.0 && gamma != 0.0) {
                    return param("gamma", format!("power utility needs gamma in (-inf, 0) or (0, 1), got {gamma}"));
                }
            }
        }
        if !matches!(family, UtilityFamily::Exponential { .. }) && x <= 0.0 {
            return param("x", format!("initial wealth must be positive, got {x}"));
        }
        if consumption.dim() != 1 {
            return param("consumption", format!("must be one-dimensional, got {}", consumption.dim()));
        }
        Ok(Self {
            family,
            alpha,
            beta,
            x,
            consumption,
            investment,
        })
    }

    pub fn family(&self) -> UtilityFamily {
        self.family
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn consumption(&self) -> &ConstraintSet {
        &self.consumption
    }

    pub fn investment(&self) -> &ConstraintSet {
        &self.investment
    }

    /// The horizon function, `None` for power utility which has none.
    pub fn h(&self, t: f64, rate: f64, horizon: f64) -> Result<Option<f64>> {
        match self.family {
            UtilityFamily::Exponential { .. } => h_exponential(t, rate, horizon).map(Some),
            UtilityFamily::Log => h_log(t, self.alpha, self.beta, horizon).map(Some),
            UtilityFamily::Power { .. } => Ok(None),
        }
    }

    pub fn with_x(&self, x: f64) -> Result<Self> {
        Self::new(
            self.family,
            self.alpha,
            self.beta,
            x,
            self.consumption.clone(),
            self.investment.clone(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriverEvaluation {
    pub value: f64,
    /// The projection distance entering the `dist^2` term.
    pub dist_term: f64,
    /// The consumption maximum (or its closed form for exponential utility).
    pub consumption_term: f64,
}

/// Market and horizon inputs of a driver at one `(t, state)`.
#[derive(Clone, Copy, Debug)]
pub struct DriverContext<'a> {
    pub t: f64,
    pub theta: &'a [f64],
    pub income: f64,
    pub rate: f64,
    /// `h(t)`; ignored by the power driver.
    pub h: f64,
    pub problem: &'a UtilityProblem,
}

/// Exponential driver with `scaled_investment = h(t) P`.
pub fn driver_exponential(
    ctx: &DriverContext,
    scaled_investment: &ConstraintSet,
    y: f64,
    z: &[f64],
) -> DriverEvaluation {
    let gamma = match ctx.problem.family {
        UtilityFamily::Exponential { gamma } => gamma,
        other => panic!("exponential driver called for {} utility", other.name()),
    };
    let (alpha, beta, h) = (ctx.problem.alpha, ctx.problem.beta, ctx.h);
    let q: Vec<f64> = z.iter().zip(ctx.theta).map(|(zi, th)| zi + th / gamma).collect();
    let dist = scaled_investment.distance(&q, ctx.t);
    let consumption = h / gamma * ((h / alpha).ln() - 1.0);
    let value = -0.5 * gamma * dist * dist
        + dot(z, ctx.theta)
        + dot(ctx.theta, ctx.theta) / (2.0 * gamma)
        + h * (ctx.income - y)
        + consumption
        + beta / gamma;
    DriverEvaluation {
        value,
        dist_term: dist,
        consumption_term: consumption,
    }
}

/// Log driver; independent of `z`.
pub fn driver_log(ctx: &DriverContext, y: f64) -> Result<DriverEvaluation> {
    let (consumption, dist) = log_parts(ctx)?;
    let value = log_constant(ctx, consumption, dist) - ctx.problem.alpha * y / ctx.h;
    Ok(DriverEvaluation {
        value,
        dist_term: dist,
        consumption_term: consumption,
    })
}

fn log_parts(ctx: &DriverContext) -> Result<(f64, f64)> {
    let weight = ctx.problem.alpha / ctx.h;
    let consumption = argmax_consumption_log(&ctx.problem.consumption, ctx.t, weight)?.value;
    let dist = ctx.problem.investment.distance(ctx.theta, ctx.t);
    Ok((consumption, dist))
}

/// The `y`-free part of the log driver.
fn log_constant(ctx: &DriverContext, consumption: f64, dist: f64) -> f64 {
    0.5 * dist * dist - 0.5 * dot(ctx.theta, ctx.theta) - consumption - ctx.rate - ctx.income
}

pub fn driver_power(ctx: &DriverContext, y: f64, z: &[f64]) -> Result<DriverEvaluation> {
    let gamma = match ctx.problem.family {
        UtilityFamily::Power { gamma } => gamma,
        other => panic!("power driver called for {} utility", other.name()),
    };
    let delta = 1.0 - gamma;
    let (alpha, beta) = (ctx.problem.alpha, ctx.problem.beta);
    let zt: Vec<f64> = z.iter().zip(ctx.theta).map(|(a, b)| a + b).collect();
    let q: Vec<f64> = zt.iter().map(|v| v / delta).collect();
    let dist = ctx.problem.investment.distance(&q, ctx.t);
    let consumption = argmax_consumption_power(&ctx.problem.consumption, ctx.t, alpha, gamma, y)?.value;
    let inner = 0.5 * delta * dist * dist - dot(&zt, &zt) / (2.0 * delta) - dot(z, z) / (2.0 * gamma)
        - consumption
        - ctx.rate
        - ctx.income
        + beta / gamma;
    Ok(DriverEvaluation {
        value: gamma * inner,
        dist_term: dist,
        consumption_term: consumption,
    })
}

/// A driver `f(t, y, z)` whose market inputs may depend on the Brownian
/// state `W_t`.
pub trait Driver: Sync {
    /// Dimension of `z` and of the state.
    fn dimension(&self) -> usize;

    /// True when `f` does not depend on the state, so `Z = 0` and the BSDE is
    /// an ODE.
    fn is_deterministic(&self) -> bool;

    /// The driver frozen at time `t`, with time-only inputs precomputed.
    fn at(&self, t: f64) -> Result<Box<dyn DriverSlice + '_>>;

    /// An a priori bound on `sup |Y|`, if one is known.
    fn y_bound(&self) -> Option<f64> {
        None
    }
}

pub trait DriverSlice: Sync {
    fn eval(&self, state: &[f64], y: f64, z: &[f64]) -> Result<f64>;
}

/// Closure-backed driver, handy for tests and custom equations.
pub struct FnDriver<F> {
    dim: usize,
    deterministic: bool,
    f: F,
}

impl<F> FnDriver<F>
where
    F: Fn(f64, &[f64], f64, &[f64]) -> f64 + Sync,
{
    /// `f(t, state, y, z)`; `deterministic` promises no state dependence.
    pub fn new(dim: usize, deterministic: bool, f: F) -> Self {
        Self { dim, deterministic, f }
    }
}

struct FnSlice<'a, F> {
    t: f64,
    f: &'a F,
}

impl<F> DriverSlice for FnSlice<'_, F>
where
    F: Fn(f64, &[f64], f64, &[f64]) -> f64 + Sync,
{
    fn eval(&self, state: &[f64], y: f64, z: &[f64]) -> Result<f64> {
        Ok((self.f)(self.t, state, y, z))
    }
}

impl<F> Driver for FnDriver<F>
where
    F: Fn(f64, &[f64], f64, &[f64]) -> f64 + Sync,
{
    fn dimension(&self) -> usize {
        self.dim
    }

    fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    fn at(&self, t: f64) -> Result<Box<dyn DriverSlice + '_>> {
        Ok(Box::new(FnSlice { t, f: &self.f }))
    }
}

/// Constants bounding the exponential driver, derived from declared bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExponentialBounds {
    /// `|f(t,y,z)| <= K (1 + |y| + |z|^2)`.
    pub growth: f64,
    /// `|f(t,y1,z1) - f(t,y2,z2)| <= K' (|y1-y2| + (1+|z1|+|z2|)|z1-z2|)`.
    pub lipschitz: f64,
    /// `|p*| <= L (1 + |Z|)`.
    pub strategy: f64,
}

/// The BSDE driver of a utility problem on a market.
#[derive(Clone, Debug)]
pub struct UtilityDriver {
    market: MarketModel,
    problem: UtilityProblem,
}

impl UtilityDriver {
    pub fn new(market: MarketModel, problem: UtilityProblem) -> Result<Self> {
        let n = market.brownian_dim();
        if problem.investment.dim() != n {
            return Err(Error::ShapeMismatch {
                what: "investment set dimension",
                expected: n,
                found: problem.investment.dim(),
            });
        }
        let income_used = market.income().sup_abs() > 0.0;
        match problem.family {
            UtilityFamily::Exponential { .. } => {
                if income_used && market.income_mode() != IncomeMode::Absolute {
                    return Err(Error::InvalidParameter {
                        name: "income",
                        message: "exponential utility takes absolute income e_t".into(),
                    });
                }
            }
            _ => {
                if income_used && market.income_mode() != IncomeMode::Relative {
                    return Err(Error::InvalidParameter {
                        name: "income",
                        message: "log and power utility take income relative to wealth".into(),
                    });
                }
                if market.endowment().sup_abs() > 0.0 {
                    return Err(Error::InvalidParameter {
                        name: "endowment",
                        message: "log and power utility need zero terminal endowment".into(),
                    });
                }
            }
        }
        Ok(Self { market, problem })
    }

    pub fn market(&self) -> &MarketModel {
        &self.market
    }

    pub fn problem(&self) -> &UtilityProblem {
        &self.problem
    }

    pub fn h(&self, t: f64) -> Result<Option<f64>> {
        self.problem.h(t, self.market.rate(), self.market.horizon())
    }

    /// Terminal value `xi`: the endowment for exponential utility, else 0.
    pub fn terminal(&self, terminal_state: &[f64]) -> f64 {
        match self.problem.family {
            UtilityFamily::Exponential { .. } => self.market.endowment_at(terminal_state),
            _ => 0.0,
        }
    }

    /// `(min h, max h)` over `[0, T]`; `h` is monotone in both families.
    pub fn h_range(&self) -> Result<Option<(f64, f64)>> {
        let a = self.h(0.0)?;
        let b = self.h(self.market.horizon())?;
        Ok(a.zip(b).map(|(a, b)| (a.min(b), a.max(b))))
    }

    pub fn exponential_bounds(&self) -> Result<Option<ExponentialBounds>> {
        let gamma = match self.problem.family {
            UtilityFamily::Exponential { gamma } => gamma,
            _ => return Ok(None),
        };
        let (hmin, hmax) = self.h_range()?.expect("exponential utility has h");
        let b = self.market.bounds();
        let theta = b.theta;
        let pbar = self.problem.investment.designated_bound();
        let alpha = self.problem.alpha;
        let log_term = (hmin / alpha).ln().abs().max((hmax / alpha).ln().abs());
        let shift = theta / gamma + hmax * pbar;
        let constant = gamma * shift * shift
            + theta
            + theta * theta / (2.0 * gamma)
            + hmax * b.income
            + hmax / gamma * (log_term + 1.0)
            + self.problem.beta.abs() / gamma;
        Ok(Some(ExponentialBounds {
            growth: (gamma + theta).max(hmax).max(constant),
            lipschitz: hmax.max(theta + gamma * shift).max(0.5 * gamma),
            strategy: (2.0 / hmin).max(2.0 * theta / (gamma * hmin) + pbar),
        }))
    }

    /// A Gronwall envelope for `sup |Y|`; `None` for power utility, whose
    /// driver grows exponentially in `y`.
    pub fn y_envelope(&self) -> Result<Option<f64>> {
        let horizon = self.market.horizon();
        let b = self.market.bounds();
        let (hmin, hmax) = match self.h_range()? {
            Some(r) => r,
            None => return Ok(None),
        };
        let (xi, f0, lip) = match self.problem.family {
            UtilityFamily::Exponential { .. } => {
                let k = self.exponential_bounds()?.expect("exponential");
                (b.endowment, k.growth, hmax)
            }
            UtilityFamily::Log => {
                let mut consumption = 0.0_f64;
                for i in 0..=256 {
                    let t = horizon * i as f64 / 256.0;
                    let h = self.h(t)?.expect("log has h");
                    let m = argmax_consumption_log(&self.problem.consumption, t, self.problem.alpha / h)?.value;
                    consumption = consumption.max(m.abs());
                }
                let f0 = 0.5 * b.theta * b.theta + consumption + self.market.rate() + b.income;
                (0.0, f0, self.problem.alpha / hmin)
            }
            UtilityFamily::Power { .. } => return Ok(None),
        };
        Ok(Some((xi + f0 * horizon) * (lip * horizon).exp()))
    }
}

struct UtilitySlice<'a> {
    driver: &'a UtilityDriver,
    t: f64,
    h: f64,
    scaled_investment: Option<ConstraintSet>,
    /// Market inputs when they do not depend on the state.
    fixed: Option<MarketPoint>,
    /// `y`-free part of the log driver for a deterministic market.
    log_constant: Option<f64>,
}

impl UtilitySlice<'_> {
    fn context<'b>(&'b self, point: &'b MarketPoint) -> DriverContext<'b> {
        DriverContext {
            t: self.t,
            theta: &point.theta,
            income: point.income,
            rate: self.driver.market.rate(),
            h: self.h,
            problem: &self.driver.problem,
        }
    }
}

impl DriverSlice for UtilitySlice<'_> {
    fn eval(&self, state: &[f64], y: f64, z: &[f64]) -> Result<f64> {
        if let Some(c) = self.log_constant {
            return Ok(c - self.driver.problem.alpha * y / self.h);
        }
        let owned;
        let point = match &self.fixed {
            Some(p) => p,
            None => {
                owned = self.driver.market.point(self.t, state)?;
                &owned
            }
        };
        let ctx = self.context(point);
        match self.driver.problem.family {
            UtilityFamily::Exponential { .. } => {
                let hp = self.scaled_investment.as_ref().expect("scaled set for exponential");
                Ok(driver_exponential(&ctx, hp, y, z).value)
            }
            UtilityFamily::Log => Ok(driver_log(&ctx, y)?.value),
            UtilityFamily::Power { .. } => Ok(driver_power(&ctx, y, z)?.value),
        }
    }
}

impl Driver for UtilityDriver {
    fn dimension(&self) -> usize {
        self.market.brownian_dim()
    }

    fn is_deterministic(&self) -> bool {
        self.market.is_deterministic()
    }

    fn at(&self, t: f64) -> Result<Box<dyn DriverSlice + '_>> {
        let h = self.h(t)?.unwrap_or(1.0);
        let scaled_investment = match self.problem.family {
            UtilityFamily::Exponential { .. } => Some(self.problem.investment.scale(h)),
            _ => None,
        };
        let fixed = if self.market.is_deterministic() {
            Some(self.market.point(t, &vec![0.0; self.dimension()])?)
        } else {
            None
        };
        let mut slice = UtilitySlice {
            driver: self,
            t,
            h,
            scaled_investment,
            fixed,
            log_constant: None,
        };
        if let (UtilityFamily::Log, Some(point)) = (self.problem.family, &slice.fixed) {
            let ctx = slice.context(point);
            let (consumption, dist) = log_parts(&ctx)?;
            slice.log_constant = Some(log_constant(&ctx, consumption, dist));
        }
        Ok(Box::new(slice))
    }

    fn y_bound(&self) -> Option<f64> {
        self.y_envelope().ok().flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::Family;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    fn exp_problem(gamma: f64, alpha: f64, beta: f64, p: ConstraintSet) -> UtilityProblem {
        UtilityProblem::new(
            UtilityFamily::Exponential { gamma },
            alpha,
            beta,
            1.0,
            ConstraintSet::full(1),
            p,
        )
        .unwrap()
    }

    fn crra(family: UtilityFamily, alpha: f64, beta: f64, c: ConstraintSet, p: ConstraintSet) -> UtilityProblem {
        UtilityProblem::new(family, alpha, beta, 1.0, c, p).unwrap()
    }

    fn unit_box(lo: f64, hi: f64) -> ConstraintSet {
        ConstraintSet::new(
            1,
            Family::Box {
                lower: vec![lo],
                upper: vec![hi],
            },
        )
        .unwrap()
    }

    fn points(ps: &[f64]) -> ConstraintSet {
        ConstraintSet::new(
            1,
            Family::Points {
                points: ps.iter().map(|p| vec![*p]).collect(),
            },
        )
        .unwrap()
    }

    #[test]
    fn h_values() {
        for r in [0.0, 0.03, 1.5] {
            assert_eq!(h_exponential(2.0, r, 2.0).unwrap(), 1.0);
        }
        assert_eq!(h_exponential(0.0, 0.0, 1.0).unwrap(), 0.5);
        assert_eq!(h_log(1.0, 2.0, 0.3, 1.0).unwrap(), 1.0);
        assert_eq!(h_log(0.0, 2.0, 0.0, 1.0).unwrap(), 3.0);
        for t in [0.0, 0.25, 0.9] {
            assert!((h_log(t, 1.0, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!(matches!(h_exponential(1.5, 0.0, 1.0), Err(Error::OutOfRange { .. })));
        assert!(matches!(h_log(-0.1, 1.0, 0.0, 1.0), Err(Error::OutOfRange { .. })));
        assert!(matches!(h_log(0.5, 1.0, -0.2, 1.0), Err(Error::NegativeBeta(_))));
    }

    #[test]
    fn h_exponential_fd_residual() {
        let (r, horizon, t) = (0.05, 2.0, 0.7);
        let eps = 1e-5;
        let d = (h_exponential(t + eps, r, horizon).unwrap() - h_exponential(t - eps, r, horizon).unwrap())
            / (2.0 * eps);
        let h = h_exponential(t, r, horizon).unwrap();
        assert!((d - h * (h - r)).abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn h_functions_are_positive(t in 0.0..1.0f64, r in 0.0..2.0f64, a in 0.01..5.0f64, b in 0.0..3.0f64) {
            prop_assert!(h_exponential(t, r, 1.0).unwrap() > 0.0);
            prop_assert!(h_log(t, a, b, 1.0).unwrap() > 0.0);
        }
    }

    #[test]
    fn problem_validation() {
        let full = || ConstraintSet::full(1);
        assert!(UtilityProblem::new(UtilityFamily::Power { gamma: 1.0 }, 1.0, 0.0, 1.0, full(), full()).is_err());
        assert!(UtilityProblem::new(UtilityFamily::Power { gamma: 0.0 }, 1.0, 0.0, 1.0, full(), full()).is_err());
        assert!(UtilityProblem::new(UtilityFamily::Log, 0.0, 0.0, 1.0, full(), full()).is_err());
        assert!(UtilityProblem::new(UtilityFamily::Log, 1.0, 0.0, 0.0, full(), full()).is_err());
        assert!(matches!(
            UtilityProblem::new(UtilityFamily::Log, 1.0, -0.1, 1.0, full(), full()),
            Err(Error::NegativeBeta(_))
        ));
        assert!(UtilityProblem::new(UtilityFamily::Exponential { gamma: 1.0 }, 1.0, -0.5, -3.0, full(), full()).is_ok());
        assert!(UtilityProblem::new(
            UtilityFamily::Exponential { gamma: 1.0 },
            1.0,
            0.0,
            1.0,
            unit_box(0.0, 1.0),
            full()
        )
        .is_err());
        assert!(UtilityProblem::new(UtilityFamily::Power { gamma: -3.0 }, 1.0, -0.5, 2.0, full(), full()).is_ok());
    }

    #[test]
    fn exponential_full_space_has_no_distance_term() {
        let problem = exp_problem(2.0, 1.5, 0.1, ConstraintSet::full(1));
        let ctx = DriverContext {
            t: 0.3,
            theta: &[0.2],
            income: 0.4,
            rate: 0.0,
            h: 0.8,
            problem: &problem,
        };
        let (y, z) = (0.7, [-0.3]);
        let e = driver_exponential(&ctx, &ConstraintSet::full(1), y, &z);
        let expected = -0.3 * 0.2 + 0.04 / 4.0 + 0.8 * (0.4 - 0.7) + 0.8 / 2.0 * ((0.8f64 / 1.5).ln() - 1.0) + 0.1 / 2.0;
        assert_eq!(e.dist_term, 0.0);
        assert!(close(e.value, expected, 1e-15));
    }

    #[test]
    fn exponential_singleton_zero_at_minus_theta_over_gamma() {
        let zero = points(&[0.0]);
        let problem = exp_problem(2.0, 1.0, 0.0, zero.clone());
        let ctx = DriverContext {
            t: 0.0,
            theta: &[0.3],
            income: 0.0,
            rate: 0.0,
            h: 1.0,
            problem: &problem,
        };
        let e = driver_exponential(&ctx, &zero.scale(1.0), 0.0, &[-0.15]);
        assert_eq!(e.dist_term, 0.0);
        assert!(close(e.value, -0.15 * 0.3 + 0.09 / 4.0 - 1.0 / 2.0, 1e-15));
    }

    #[test]
    fn exponential_box_boundary_case() {
        let p = unit_box(0.0, 0.1);
        let problem = exp_problem(2.0, 1.0, 0.0, p.clone());
        let ctx = DriverContext {
            t: 0.0,
            theta: &[0.2],
            income: 0.0,
            rate: 0.0,
            h: 1.0,
            problem: &problem,
        };
        let e = driver_exponential(&ctx, &p.scale(1.0), 0.0, &[0.0]);
        assert!(e.dist_term.abs() < 1e-15);
        // 0.04 / 4 + (1/2)(log 1 - 1)
        assert!(close(e.value, 0.01 - 0.5, 1e-15));
        // off the boundary the distance term is active
        let e = driver_exponential(&ctx, &p.scale(1.0), 0.0, &[0.1]);
        assert!(close(e.dist_term, 0.1, 1e-14));
        assert!(close(e.value, -0.01 + 0.02 + 0.01 - 0.5, 1e-14));
    }

    #[test]
    fn log_driver_examples() {
        let full = ConstraintSet::full(1);
        let problem = crra(UtilityFamily::Log, 1.0, 0.0, full.clone(), full.clone());
        let (theta, h, r, inc, y) = (0.25, 1.6, 0.01, 0.02, 0.3);
        let ctx = DriverContext {
            t: 0.4,
            theta: &[theta],
            income: inc,
            rate: r,
            h,
            problem: &problem,
        };
        let w: f64 = 1.0 / h;
        let expected = -0.5 * theta * theta - y / h - w * (w.ln() - 1.0) - r - inc;
        assert!(close(driver_log(&ctx, y).unwrap().value, expected, 1e-15));

        // alpha = h and theta = 0
        let ctx = DriverContext {
            theta: &[0.0],
            h: 1.0,
            ..ctx
        };
        assert!(close(driver_log(&ctx, y).unwrap().value, -y + 1.0 - r - inc, 1e-15));

        // singleton at theta behaves like the full space
        let single = crra(UtilityFamily::Log, 1.0, 0.0, full.clone(), points(&[theta]));
        let a = DriverContext {
            theta: &[theta],
            h,
            problem: &single,
            ..ctx
        };
        let b = DriverContext { problem: &problem, ..a };
        assert_eq!(driver_log(&a, y).unwrap().value, driver_log(&b, y).unwrap().value);
    }

    #[test]
    fn power_driver_examples() {
        let full = ConstraintSet::full(1);
        let (g, a, b, r, inc) = (0.5, 0.8, 0.05, 0.01, 0.02);
        let problem = crra(UtilityFamily::Power { gamma: g }, a, b, full.clone(), full.clone());
        let ctx = DriverContext {
            t: 0.0,
            theta: &[0.2],
            income: inc,
            rate: r,
            h: 1.0,
            problem: &problem,
        };
        let (y, z) = (0.3, 0.1);
        let d = 1.0 - g;
        let expected = g
            * (-(z + 0.2) * (z + 0.2) / (2.0 * d) - z * z / (2.0 * g)
                - d / g * a.powf(1.0 / d) * (y / d).exp()
                - r
                - inc
                + b / g);
        assert!(close(driver_power(&ctx, y, &[z]).unwrap().value, expected, 1e-14));

        let expected = g * (-0.04 / (2.0 * g) - d / g * a.powf(1.0 / d) * (y / d).exp() - r - inc + b / g);
        assert!(close(driver_power(&ctx, y, &[-0.2]).unwrap().value, expected, 1e-14));

        // P = {0, 1}: q = 0.4, nearest 0
        let pts = crra(UtilityFamily::Power { gamma: g }, a, b, full, points(&[0.0, 1.0]));
        let ctx = DriverContext { problem: &pts, ..ctx };
        let e = driver_power(&ctx, y, &[0.0]).unwrap();
        assert!(close(e.dist_term, 0.4, 1e-15));
        let expected = g
            * (0.5 * d * 0.16 - 0.04 / (2.0 * d) - d / g * a.powf(1.0 / d) * (y / d).exp() - r - inc + b / g);
        assert!(close(e.value, expected, 1e-14));
    }

    fn acceptance_market() -> MarketModel {
        MarketModel::constant(1.0, 0.0, &[0.05], &[vec![0.2]]).unwrap()
    }

    #[test]
    fn slices_match_pure_functions() {
        let market = acceptance_market();
        let problem = exp_problem(1.0, 1.0, 0.0, unit_box(-0.2, 0.4));
        let driver = UtilityDriver::new(market, problem.clone()).unwrap();
        let t = 0.37;
        let h = h_exponential(t, 0.0, 1.0).unwrap();
        let slice = driver.at(t).unwrap();
        let ctx = DriverContext {
            t,
            theta: &[0.25],
            income: 0.0,
            rate: 0.0,
            h,
            problem: &problem,
        };
        for (y, z) in [(0.0, 0.0), (0.3, -1.2), (-2.0, 0.7)] {
            let direct = driver_exponential(&ctx, &problem.investment().scale(h), y, &[z]).value;
            assert!(close(slice.eval(&[0.0], y, &[z]).unwrap(), direct, 1e-14));
        }
    }

    #[test]
    fn crra_rejects_absolute_income() {
        let market = MarketModel::builder(1.0, 0.0, vec![0.05.into()], vec![vec![0.2.into()]])
            .income(IncomeMode::Absolute, 0.1)
            .build()
            .unwrap();
        let full = ConstraintSet::full(1);
        let problem = crra(UtilityFamily::Log, 1.0, 0.0, full.clone(), full);
        assert!(UtilityDriver::new(market, problem).is_err());
    }

    fn growth_setup() -> (UtilityDriver, ExponentialBounds) {
        let market = MarketModel::builder(1.5, 0.02, vec![0.07.into()], vec![vec![0.25.into()]])
            .income(IncomeMode::Absolute, 0.3)
            .endowment(0.5)
            .build()
            .unwrap();
        let problem = exp_problem(1.7, 0.6, -0.2, points(&[-0.5, 0.2, 0.9]));
        let driver = UtilityDriver::new(market, problem).unwrap();
        let k = driver.exponential_bounds().unwrap().unwrap();
        (driver, k)
    }

    proptest! {
        #[test]
        fn exponential_growth_and_lipschitz(
            t in 0.0..1.5f64,
            y1 in -20.0..20.0f64, z1 in -20.0..20.0f64,
            y2 in -20.0..20.0f64, z2 in -20.0..20.0f64,
        ) {
            let (driver, k) = growth_setup();
            let s = driver.at(t).unwrap();
            let f1 = s.eval(&[0.0], y1, &[z1]).unwrap();
            let f2 = s.eval(&[0.0], y2, &[z2]).unwrap();
            prop_assert!(f1.abs() <= k.growth * (1.0 + y1.abs() + z1 * z1));
            let rhs = k.lipschitz * ((y1 - y2).abs() + (1.0 + z1.abs() + z2.abs()) * (z1 - z2).abs());
            prop_assert!((f1 - f2).abs() <= rhs + 1e-12);
        }

        #[test]
        fn drivers_decrease_in_y(t in 0.0..1.0f64, y in -3.0..3.0f64, z in -2.0..2.0f64) {
            let market = acceptance_market();
            let full = ConstraintSet::full(1);
            let eps = 1e-4;
            let problems = [
                exp_problem(1.0, 1.0, 0.0, unit_box(0.0, 0.3)),
                crra(UtilityFamily::Log, 0.7, 0.2, unit_box(0.1, 2.0), full.clone()),
                crra(UtilityFamily::Power { gamma: 0.5 }, 1.0, 0.0, full.clone(), full.clone()),
                crra(UtilityFamily::Power { gamma: -1.0 }, 1.0, 0.0, full.clone(), full.clone()),
            ];
            for problem in problems {
                let driver = UtilityDriver::new(market.clone(), problem).unwrap();
                let s = driver.at(t).unwrap();
                let up = s.eval(&[0.0], y + eps, &[z]).unwrap();
                let down = s.eval(&[0.0], y - eps, &[z]).unwrap();
                prop_assert!(up < down);
            }
        }

        #[test]
        fn enlarging_investment_set_lowers_distance(q in -3.0..3.0f64, hi in 0.0..1.0f64, extra in 0.0..1.0f64) {
            let small = unit_box(0.0, hi);
            let large = unit_box(0.0, hi + extra);
            prop_assert!(small.distance(&[q], 0.0) >= large.distance(&[q], 0.0));
            let pts = points(&[0.0, hi]);
            prop_assert!(pts.distance(&[q], 0.0) >= large.distance(&[q], 0.0));
        }
    }

    #[test]
    fn y_bound_is_finite_for_exp_and_log() {
        let (driver, _) = growth_setup();
        assert!(driver.y_envelope().unwrap().unwrap().is_finite());
        let full = ConstraintSet::full(1);
        let log = UtilityDriver::new(
            acceptance_market(),
            crra(UtilityFamily::Log, 1.0, 0.0, full.clone(), full.clone()),
        )
        .unwrap();
        assert!(log.y_envelope().unwrap().unwrap().is_finite());
        let power = UtilityDriver::new(
            acceptance_market(),
            crra(UtilityFamily::Power { gamma: 0.5 }, 1.0, 0.0, full.clone(), full),
        )
        .unwrap();
        assert!(power.y_envelope().unwrap().is_none());
    }
}
