//! Optimal feedback rules read off a BSDE solution, perturbations of them,
//! and simulation of the controlled wealth.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsde::{BsdeSolution, SolutionMode, CHUNK_PATHS};
use crate::constraints::{argmax_consumption_log, argmax_consumption_power};
use crate::drivers::{UtilityDriver, UtilityFamily, UtilityProblem};
use crate::error::{Error, Result};
use crate::market::{dot, norm, BrownianBatch, MarketModel};

/// A modification applied on top of the optimal rule.
///
/// For log and power utility the consumption and investment values are
/// relative to wealth; for exponential utility they are amounts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbation {
    ScaleConsumption(f64),
    ShiftConsumption(f64),
    ScaleInvestment(f64),
    /// Added to every investment component.
    ShiftInvestment(f64),
    FixedConsumption(f64),
    FixedInvestment(Vec<f64>),
}

impl Perturbation {
    pub fn label(&self) -> String {
        match self {
            Perturbation::ScaleConsumption(a) => format!("c*{a}"),
            Perturbation::ShiftConsumption(a) => format!("c+{a}"),
            Perturbation::ScaleInvestment(a) => format!("p*{a}"),
            Perturbation::ShiftInvestment(a) => format!("p+{a}"),
            Perturbation::FixedConsumption(a) => format!("c={a}"),
            Perturbation::FixedInvestment(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                format!("p=({})", parts.join(";"))
            }
        }
    }

    fn apply(&self, c: &mut f64, p: &mut [f64]) {
        match self {
            Perturbation::ScaleConsumption(a) => *c *= a,
            Perturbation::ShiftConsumption(a) => *c += a,
            Perturbation::ScaleInvestment(a) => p.iter_mut().for_each(|v| *v *= a),
            Perturbation::ShiftInvestment(a) => p.iter_mut().for_each(|v| *v += a),
            Perturbation::FixedConsumption(a) => *c = *a,
            Perturbation::FixedInvestment(v) => p.copy_from_slice(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Controls {
    /// `c` (exponential) or `c / X` (log, power).
    pub consumption: f64,
    /// `p` (exponential) or `p / X` (log, power).
    pub investment: Vec<f64>,
}

/// Feedback rule `(t_k, W_k, X_k) -> (c, p)`.
#[derive(Clone, Debug)]
pub struct Strategy {
    driver: UtilityDriver,
    solution: BsdeSolution,
    perturbations: Vec<Perturbation>,
}

/// The optimal rule of the problem on the market, given its BSDE solution.
pub fn optimal_strategy(market: &MarketModel, problem: &UtilityProblem, solution: &BsdeSolution) -> Result<Strategy> {
    let driver = UtilityDriver::new(market.clone(), problem.clone())?;
    if solution.dim() != market.brownian_dim() {
        return Err(Error::ShapeMismatch {
            what: "solution dimension",
            expected: market.brownian_dim(),
            found: solution.dim(),
        });
    }
    Ok(Strategy {
        driver,
        solution: solution.clone(),
        perturbations: Vec::new(),
    })
}

impl Strategy {
    pub fn family(&self) -> UtilityFamily {
        self.driver.problem().family()
    }

    pub fn kind_name(&self) -> &'static str {
        self.family().name()
    }

    pub fn problem(&self) -> &UtilityProblem {
        self.driver.problem()
    }

    pub fn market(&self) -> &MarketModel {
        self.driver.market()
    }

    pub fn solution(&self) -> &BsdeSolution {
        &self.solution
    }

    pub fn driver(&self) -> &UtilityDriver {
        &self.driver
    }

    pub fn is_optimal(&self) -> bool {
        self.perturbations.is_empty()
    }

    pub fn perturbations(&self) -> &[Perturbation] {
        &self.perturbations
    }

    pub fn label(&self) -> String {
        if self.perturbations.is_empty() {
            "optimal".into()
        } else {
            let parts: Vec<String> = self.perturbations.iter().map(Perturbation::label).collect();
            parts.join(",")
        }
    }

    pub fn perturbed(&self, perturbation: Perturbation) -> Result<Strategy> {
        if let Perturbation::FixedInvestment(v) = &perturbation {
            if v.len() != self.market().brownian_dim() {
                return Err(Error::ShapeMismatch {
                    what: "fixed investment",
                    expected: self.market().brownian_dim(),
                    found: v.len(),
                });
            }
        }
        let mut next = self.clone();
        next.perturbations.push(perturbation);
        Ok(next)
    }

    /// The unperturbed optimal controls at grid step `k`.
    pub fn optimal_controls(&self, k: usize, state: &[f64], x: f64) -> Result<Controls> {
        let grid = self.solution.grid();
        let t = grid.t(k);
        let market = self.market();
        let problem = self.problem();
        let point = market.point(t, state)?;
        let y = self.solution.y_at(k, state);
        let mut z = vec![0.0; market.brownian_dim()];
        self.solution.z_at(k, state, &mut z);
        let p_set = problem.investment();
        Ok(match problem.family() {
            UtilityFamily::Exponential { gamma } => {
                let h = self.driver.h(t)?.expect("exponential h");
                let q: Vec<f64> = z.iter().zip(&point.theta).map(|(a, b)| (a + b / gamma) / h).collect();
                Controls {
                    consumption: h * x + y - (h / problem.alpha()).ln() / gamma,
                    investment: p_set.project(&q, t).nearest,
                }
            }
            UtilityFamily::Log => {
                let h = self.driver.h(t)?.expect("log h");
                let c = argmax_consumption_log(problem.consumption(), t, problem.alpha() / h)?;
                Controls {
                    consumption: c.c,
                    investment: p_set.project(&point.theta, t).nearest,
                }
            }
            UtilityFamily::Power { gamma } => {
                let c = argmax_consumption_power(problem.consumption(), t, problem.alpha(), gamma, y)?;
                let q: Vec<f64> = z.iter().zip(&point.theta).map(|(a, b)| (a + b) / (1.0 - gamma)).collect();
                Controls {
                    consumption: c.c,
                    investment: p_set.project(&q, t).nearest,
                }
            }
        })
    }

    /// Controls actually applied at step `k`, perturbations included.
    pub fn controls(&self, k: usize, state: &[f64], x: f64) -> Result<Controls> {
        let mut out = self.optimal_controls(k, state, x)?;
        for p in &self.perturbations {
            p.apply(&mut out.consumption, &mut out.investment);
        }
        Ok(out)
    }

    /// True when the rule at a step depends on nothing but `k` (and `X`
    /// through the exponential consumption's affine term).
    fn state_free(&self) -> bool {
        self.market().is_deterministic() && self.solution.mode() == SolutionMode::Deterministic
    }
}

/// Simulated wealth and the controls applied along it. Per-path arrays are
/// laid out `[path][grid point]`.
#[derive(Clone, Debug)]
pub struct WealthPaths {
    family: UtilityFamily,
    label: String,
    dim: usize,
    times: Vec<f64>,
    path_count: usize,
    wealth: Vec<f64>,
    /// Absolute consumption rate `c_t` applied at each grid point.
    consumption: Vec<f64>,
    /// Absolute investment `p_t`, `[path][point][dim]`.
    investment: Vec<f64>,
    /// `Y_t` along the path; the last entry is the exact terminal value.
    y: Vec<f64>,
    /// Terminal endowment `E` per path.
    endowment: Vec<f64>,
    /// CRRA only: grid cells with non-positive wealth (underflow).
    pub positivity_violations: usize,
    /// Grid cells where consumption was outside the utility's domain.
    pub consumption_violations: usize,
    /// Exponential optimal rule: cells with `|p| > L (1 + |Z|)`.
    pub bound_violations: usize,
    /// Steps whose applied controls left the constraint sets.
    pub constraint_violations: usize,
}

impl WealthPaths {
    pub fn family(&self) -> UtilityFamily {
        self.family
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn path_count(&self) -> usize {
        self.path_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn points(&self) -> usize {
        self.times.len()
    }

    pub fn wealth(&self, path: usize) -> &[f64] {
        &self.wealth[path * self.points()..(path + 1) * self.points()]
    }

    pub fn consumption(&self, path: usize) -> &[f64] {
        &self.consumption[path * self.points()..(path + 1) * self.points()]
    }

    pub fn investment(&self, path: usize, k: usize) -> &[f64] {
        let start = (path * self.points() + k) * self.dim;
        &self.investment[start..start + self.dim]
    }

    pub fn y(&self, path: usize) -> &[f64] {
        &self.y[path * self.points()..(path + 1) * self.points()]
    }

    pub fn endowment(&self, path: usize) -> f64 {
        self.endowment[path]
    }

    /// Writes `path, t, x, c, p_1..p_n` rows for the first `budget` paths.
    pub fn write_csv(&self, path: &Path, budget: usize) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["path".to_string(), "t".into(), "x".into(), "c".into()];
        header.extend((1..=self.dim).map(|j| format!("p{j}")));
        w.write_record(&header)?;
        for p in 0..budget.min(self.path_count) {
            for (k, t) in self.times.iter().enumerate() {
                let mut row = vec![p.to_string(), t.to_string(), self.wealth(p)[k].to_string(), self.consumption(p)[k].to_string()];
                row.extend(self.investment(p, k).iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

struct Scratch {
    wealth: Vec<f64>,
    consumption: Vec<f64>,
    investment: Vec<f64>,
    y: Vec<f64>,
    endowment: f64,
    positivity: usize,
    consumption_bad: usize,
    bound: usize,
    outside: usize,
}

/// Per-step rule when nothing depends on the state: consumption is
/// `slope X + intercept`, investment and `Y` are fixed.
struct StepRule {
    slope: f64,
    intercept: f64,
    investment: Vec<f64>,
    theta: Vec<f64>,
    income: f64,
    y: f64,
    admissible: bool,
}

enum Dynamics {
    Additive,
    Multiplicative,
}

/// Euler scheme for the exponential-utility wealth
/// `dX = (r X + e - c) dt + p (dW + theta dt)`.
pub fn simulate_wealth_additive(strategy: &Strategy, batch: &BrownianBatch, x: f64) -> Result<WealthPaths> {
    if !matches!(strategy.family(), UtilityFamily::Exponential { .. }) {
        return Err(Error::WrongStrategyKind {
            found: strategy.kind_name(),
            simulator: "additive",
        });
    }
    simulate(strategy, batch, x, Dynamics::Additive)
}

/// Log-Euler scheme for relative controls:
/// `X_{k+1} = X_k exp(p dW^Q - |p|^2 dt / 2 + (r + e - c) dt)` with
/// `dW^Q = dW + theta dt`, which keeps wealth strictly positive.
pub fn simulate_wealth_multiplicative(strategy: &Strategy, batch: &BrownianBatch, x: f64) -> Result<WealthPaths> {
    if matches!(strategy.family(), UtilityFamily::Exponential { .. }) {
        return Err(Error::WrongStrategyKind {
            found: strategy.kind_name(),
            simulator: "multiplicative",
        });
    }
    if !(x > 0.0) {
        return Err(Error::InvalidParameter {
            name: "x",
            message: format!("initial wealth must be positive, got {x}"),
        });
    }
    simulate(strategy, batch, x, Dynamics::Multiplicative)
}

fn simulate(strategy: &Strategy, batch: &BrownianBatch, x0: f64, dynamics: Dynamics) -> Result<WealthPaths> {
    let grid = batch.grid();
    if grid != strategy.solution.grid() {
        return Err(Error::BadGrid("simulation grid differs from the solution grid".into()));
    }
    let market = strategy.market();
    let n = market.brownian_dim();
    if batch.dim() != n {
        return Err(Error::ShapeMismatch {
            what: "Brownian dimension",
            expected: n,
            found: batch.dim(),
        });
    }
    let steps = grid.steps();
    let points = steps + 1;
    let rate = market.rate();
    let family = strategy.family();
    let strict_consumption = match family {
        UtilityFamily::Log => true,
        UtilityFamily::Power { gamma } => gamma < 0.0,
        UtilityFamily::Exponential { .. } => false,
    };
    let bound = if strategy.is_optimal() {
        strategy.driver.exponential_bounds()?.map(|b| b.strategy)
    } else {
        None
    };
    let problem = strategy.problem();
    let admissible = |ctl: &Controls, t: f64| {
        problem.investment().contains(&ctl.investment, t)
            && (problem.consumption().is_full() || problem.consumption().contains(&[ctl.consumption], t))
    };
    let rules = if strategy.state_free() {
        let zero = vec![0.0; n];
        let mut rules = Vec::with_capacity(points);
        for k in 0..points {
            let t = grid.t(k);
            let point = market.point(t, &zero)?;
            let at0 = strategy.controls(k, &zero, 0.0)?;
            let slope = match family {
                UtilityFamily::Exponential { .. } => strategy.controls(k, &zero, 1.0)?.consumption - at0.consumption,
                _ => 0.0,
            };
            let inside = admissible(&at0, t);
            rules.push(StepRule {
                slope,
                intercept: at0.consumption,
                investment: at0.investment,
                theta: point.theta,
                income: point.income,
                y: strategy.solution.y_at(k, &zero),
                admissible: inside,
            });
        }
        Some(rules)
    } else {
        None
    };

    let simulate_path = |p: usize| -> Result<Scratch> {
        let mut s = Scratch {
            wealth: vec![0.0; points],
            consumption: vec![0.0; points],
            investment: vec![0.0; points * n],
            y: vec![0.0; points],
            endowment: 0.0,
            positivity: 0,
            consumption_bad: 0,
            bound: 0,
            outside: 0,
        };
        let mut w = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut x = x0;
        for k in 0..points {
            let t = grid.t(k);
            let (c, pi, theta, income, y, inside) = match &rules {
                Some(r) => {
                    let r = &r[k];
                    (r.slope * x + r.intercept, r.investment.clone(), r.theta.clone(), r.income, r.y, r.admissible)
                }
                None => {
                    let ctl = strategy.controls(k, &w, x)?;
                    let point = market.point(t, &w)?;
                    let inside = k == steps || admissible(&ctl, t);
                    (ctl.consumption, ctl.investment, point.theta, point.income, strategy.solution.y_at(k, &w), inside)
                }
            };
            if k < steps && !inside {
                s.outside += 1;
            }
            if let Some(l) = bound {
                strategy.solution.z_at(k, &w, &mut z);
                if norm(&pi) > l * (1.0 + norm(&z)) * (1.0 + 1e-12) {
                    s.bound += 1;
                }
            }
            s.wealth[k] = x;
            s.y[k] = y;
            match dynamics {
                Dynamics::Additive => {
                    s.consumption[k] = c;
                    s.investment[k * n..(k + 1) * n].copy_from_slice(&pi);
                }
                Dynamics::Multiplicative => {
                    if strict_consumption && c <= 0.0 {
                        if let UtilityFamily::Power { .. } = family {
                            return Err(Error::ConsumptionNonPositive { t, path: p, value: c });
                        }
                        s.consumption_bad += 1;
                    } else if c < 0.0 {
                        s.consumption_bad += 1;
                    }
                    s.consumption[k] = c * x;
                    for (o, v) in s.investment[k * n..(k + 1) * n].iter_mut().zip(&pi) {
                        *o = v * x;
                    }
                }
            }
            if k == steps {
                break;
            }
            let dt = grid.dt(k);
            let dw = batch.increment(p, k);
            x = match dynamics {
                Dynamics::Additive => {
                    let gain: f64 = pi.iter().zip(dw).zip(&theta).map(|((a, d), th)| a * (d + th * dt)).sum();
                    x + x * rate * dt + gain + (income - c) * dt
                }
                Dynamics::Multiplicative => {
                    let drift_q: f64 = pi.iter().zip(dw).zip(&theta).map(|((a, d), th)| a * (d + th * dt)).sum();
                    x * (drift_q - 0.5 * dot(&pi, &pi) * dt + (rate + income - c) * dt).exp()
                }
            };
            if let Dynamics::Multiplicative = dynamics {
                if !(x > 0.0) {
                    s.positivity += 1;
                }
            }
            for (a, d) in w.iter_mut().zip(dw) {
                *a += d;
            }
        }
        s.endowment = market.endowment_at(&w);
        s.y[steps] = strategy.driver.terminal(&w);
        Ok(s)
    };

    let paths = batch.path_count();
    let mut out = WealthPaths {
        family,
        label: strategy.label(),
        dim: n,
        times: grid.points().to_vec(),
        path_count: paths,
        wealth: vec![0.0; paths * points],
        consumption: vec![0.0; paths * points],
        investment: vec![0.0; paths * points * n],
        y: vec![0.0; paths * points],
        endowment: vec![0.0; paths],
        positivity_violations: 0,
        consumption_violations: 0,
        bound_violations: 0,
        constraint_violations: 0,
    };
    let counts: Vec<Result<[usize; 4]>> = out
        .wealth
        .par_chunks_mut(points * CHUNK_PATHS)
        .zip(out.consumption.par_chunks_mut(points * CHUNK_PATHS))
        .zip(out.investment.par_chunks_mut(points * n * CHUNK_PATHS))
        .zip(out.y.par_chunks_mut(points * CHUNK_PATHS))
        .zip(out.endowment.par_chunks_mut(CHUNK_PATHS))
        .enumerate()
        .map(|(c, ((((wealth, cons), inv), y), endow))| {
            let mut totals = [0; 4];
            for i in 0..endow.len() {
                let s = simulate_path(c * CHUNK_PATHS + i)?;
                wealth[i * points..(i + 1) * points].copy_from_slice(&s.wealth);
                cons[i * points..(i + 1) * points].copy_from_slice(&s.consumption);
                inv[i * points * n..(i + 1) * points * n].copy_from_slice(&s.investment);
                y[i * points..(i + 1) * points].copy_from_slice(&s.y);
                endow[i] = s.endowment;
                totals[0] += s.positivity;
                totals[1] += s.consumption_bad;
                totals[2] += s.bound;
                totals[3] += s.outside;
            }
            Ok(totals)
        })
        .collect();
    for r in counts {
        let [a, b, c, d] = r?;
        out.positivity_violations += a;
        out.consumption_violations += b;
        out.bound_violations += c;
        out.constraint_violations += d;
    }
    Ok(out)
}
