//! Monte Carlo verification of optimality.
//!
//! For any strategy the R-process (value of the remaining problem plus
//! utility already consumed) is a supermartingale, and a martingale exactly
//! for the optimal one. Its start is the analytic value and its end the
//! realized utility, so comparing `E[R_T]` with `R_0` tests optimality.

use std::fmt::Write as _;
use std::path::Path;

use crate::bsde::{chunked_sum, BmoDiagnostic, BsdeSolution};
use crate::constraints::Family;
use crate::drivers::{h_exponential, h_log, UtilityFamily, UtilityProblem};
use crate::error::{Error, Result};
use crate::market::{BrownianBatch, Coefficient, MarketModel};
use crate::strategy::{simulate_wealth_additive, simulate_wealth_multiplicative, Perturbation, Strategy, WealthPaths};

/// Closed-form optimal value given `Y_0`.
pub fn analytic_value(problem: &UtilityProblem, market: &MarketModel, y0: f64) -> Result<f64> {
    let x = problem.x();
    Ok(match problem.family() {
        UtilityFamily::Exponential { gamma } => {
            let h0 = h_exponential(0.0, market.rate(), market.horizon())?;
            -(-gamma * (h0 * x + y0)).exp()
        }
        UtilityFamily::Log => {
            let h0 = h_log(0.0, problem.alpha(), problem.beta(), market.horizon())?;
            h0 * (x.ln() - y0)
        }
        UtilityFamily::Power { gamma } => x.powf(gamma) * (-y0).exp() / gamma,
    })
}

/// Sample mean and standard error; `se` is infinite for a single path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Statistic {
    pub mean: f64,
    pub se: f64,
}

impl Statistic {
    fn of(n: usize, f: impl Fn(usize) -> f64 + Sync) -> Statistic {
        if n == 0 {
            return Statistic {
                mean: f64::NAN,
                se: f64::INFINITY,
            };
        }
        let mean = chunked_sum(n, &f) / n as f64;
        if n == 1 || !mean.is_finite() {
            return Statistic {
                mean,
                se: f64::INFINITY,
            };
        }
        let var = chunked_sum(n, |i| (f(i) - mean).powi(2)) / (n - 1) as f64;
        Statistic {
            mean,
            se: (var / n as f64).sqrt(),
        }
    }
}

/// Accumulated consumption utility at each grid point.
///
/// On `[t_k, t_{k+1})` the simulated strategy holds its step-`k` control:
/// an amount for exponential utility, a fraction of wealth otherwise. The
/// trapezoid therefore pairs `c_k` with the right-end consumption of that
/// same control, `c_k X_{k+1} / X_k` in the relative case.
fn running_utility(problem: &UtilityProblem, times: &[f64], consumption: &[f64], wealth: &[f64], out: &mut [f64]) {
    let u = problem.family();
    let relative = !matches!(u, UtilityFamily::Exponential { .. });
    let (alpha, beta) = (problem.alpha(), problem.beta());
    let g = |t: f64, c: f64| alpha * (-beta * t).exp() * u.utility(c);
    out[0] = 0.0;
    for k in 1..times.len() {
        let c = consumption[k - 1];
        let right = if relative { c * (wealth[k] / wealth[k - 1]) } else { c };
        let left = g(times[k - 1], c);
        out[k] = out[k - 1] + 0.5 * (left + g(times[k], right)) * (times[k] - times[k - 1]);
    }
}

/// Expected utility of simulated paths, trapezoidal in time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UtilityEstimate {
    pub value: Statistic,
    /// Paths whose utility is `-inf` (consumption or wealth outside the domain).
    pub infinite_paths: usize,
}

pub fn expected_utility_mc(problem: &UtilityProblem, paths: &WealthPaths) -> UtilityEstimate {
    let times = paths.times();
    let n = times.len();
    let beta = problem.beta();
    let terminal_t = times[n - 1];
    let realized = |p: usize| {
        let mut run = vec![0.0; n];
        running_utility(problem, times, paths.consumption(p), paths.wealth(p), &mut run);
        let terminal = problem.family().utility(paths.wealth(p)[n - 1] + paths.endowment(p));
        run[n - 1] + (-beta * terminal_t).exp() * terminal
    };
    let infinite_paths = chunked_sum(paths.path_count(), |p| f64::from(u8::from(realized(p) == f64::NEG_INFINITY))) as usize;
    UtilityEstimate {
        value: Statistic::of(paths.path_count(), realized),
        infinite_paths,
    }
}

/// `R_t` per path, laid out `[path][grid point]`.
#[derive(Clone, Debug)]
pub struct RProcess {
    times: Vec<f64>,
    path_count: usize,
    values: Vec<f64>,
}

impl RProcess {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn path_count(&self) -> usize {
        self.path_count
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let n = self.times.len();
        &self.values[p * n..(p + 1) * n]
    }

    /// Builds `R` directly from values, e.g. for testing the statistics.
    pub fn from_values(times: Vec<f64>, values: Vec<f64>) -> Self {
        let path_count = values.len() / times.len();
        Self {
            times,
            path_count,
            values,
        }
    }
}

pub fn r_process(problem: &UtilityProblem, market: &MarketModel, paths: &WealthPaths) -> Result<RProcess> {
    let times = paths.times().to_vec();
    let n = times.len();
    let horizon = market.horizon();
    let (alpha, beta) = (problem.alpha(), problem.beta());
    let h: Vec<f64> = match problem.family() {
        UtilityFamily::Exponential { .. } => times
            .iter()
            .map(|&t| h_exponential(t, market.rate(), horizon))
            .collect::<Result<_>>()?,
        UtilityFamily::Log => times.iter().map(|&t| h_log(t, alpha, beta, horizon)).collect::<Result<_>>()?,
        UtilityFamily::Power { .. } => vec![1.0; n],
    };
    let mut values = vec![0.0; paths.path_count() * n];
    use rayon::prelude::*;
    values.par_chunks_mut(n).enumerate().for_each(|(p, out)| {
        running_utility(problem, &times, paths.consumption(p), paths.wealth(p), out);
        let x = paths.wealth(p);
        let y = paths.y(p);
        for k in 0..n {
            let discount = (-beta * times[k]).exp();
            let value = match problem.family() {
                UtilityFamily::Exponential { gamma } => -discount * (-gamma * (h[k] * x[k] + y[k])).exp(),
                UtilityFamily::Log => h[k] * discount * (x[k].ln() - y[k]),
                UtilityFamily::Power { gamma } => discount * x[k].powf(gamma) * (-y[k]).exp() / gamma,
            };
            out[k] += value;
        }
    });
    Ok(RProcess {
        times,
        path_count: paths.path_count(),
        values,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalStat {
    pub t0: f64,
    pub t1: f64,
    pub increment: Statistic,
    /// Mean increment above `+4 se`.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupermartingaleStats {
    pub intervals: Vec<IntervalStat>,
    /// Statistic of `R_T - R_0`.
    pub total: Statistic,
    pub violations: usize,
    /// Every increment within `4 se` of zero and the total within `3 se`.
    pub martingale_flag: bool,
}

pub const INTERVAL_BAND: f64 = 4.0;
pub const TOTAL_BAND: f64 = 3.0;

pub fn supermartingale_test(r: &RProcess) -> SupermartingaleStats {
    let n = r.times.len();
    let paths = r.path_count;
    let mut intervals = Vec::with_capacity(n.saturating_sub(1));
    let mut martingale = true;
    for k in 0..n.saturating_sub(1) {
        let increment = Statistic::of(paths, |p| r.path(p)[k + 1] - r.path(p)[k]);
        let flagged = increment.mean > INTERVAL_BAND * increment.se;
        martingale &= increment.mean.abs() <= INTERVAL_BAND * increment.se;
        intervals.push(IntervalStat {
            t0: r.times[k],
            t1: r.times[k + 1],
            increment,
            flagged,
        });
    }
    let total = Statistic::of(paths, |p| r.path(p)[n - 1] - r.path(p)[0]);
    martingale &= total.mean.abs() <= TOTAL_BAND * total.se;
    SupermartingaleStats {
        violations: intervals.iter().filter(|i| i.flagged).count(),
        intervals,
        total,
        martingale_flag: martingale,
    }
}

/// Classical unconstrained benchmark for constant coefficients, computed
/// without the BSDE solvers.
#[derive(Clone, Debug, PartialEq)]
pub struct MertonOracle {
    pub y0: f64,
    pub value: f64,
    /// Optimal investment at `t = 0` (amount for exponential, fraction otherwise).
    pub investment: Vec<f64>,
    /// Optimal consumption at `t = 0` (rate for exponential, fraction otherwise).
    pub consumption: f64,
}

pub fn merton_oracle(market: &MarketModel, problem: &UtilityProblem) -> Result<MertonOracle> {
    let fail = |m: &str| Err(Error::PreconditionViolated(m.to_string()));
    let zero = vec![0.0; market.brownian_dim()];
    let horizon = market.horizon();
    if !market.is_deterministic() {
        return fail("coefficients must be constant");
    }
    let theta = market.risk_premium(0.0, &zero)?;
    for i in 1..=16 {
        let t = horizon * i as f64 / 16.0;
        if market.risk_premium(t, &zero)? != theta {
            return fail("risk premium must be constant");
        }
    }
    let income = match market.income() {
        Coefficient::Constant(e) => *e,
        _ => return fail("income must be constant"),
    };
    let endowment = match market.endowment() {
        Coefficient::Constant(e) => *e,
        _ => return fail("endowment must be constant"),
    };
    let unconstrained = |set: &crate::constraints::ConstraintSet| set.pieces().iter().all(|(_, f)| *f == Family::FullSpace);
    if !unconstrained(problem.investment()) || !unconstrained(problem.consumption()) {
        return fail("constraint sets must be the full space");
    }
    if !(problem.alpha() > 0.0) {
        return fail("alpha must be positive");
    }
    let theta2: f64 = theta.iter().map(|v| v * v).sum();
    let (alpha, beta, r, x) = (problem.alpha(), problem.beta(), market.rate(), problem.x());

    let (y0, investment, consumption) = match problem.family() {
        UtilityFamily::Exponential { gamma } => {
            let h = |t: f64| h_exponential(t, r, horizon).expect("t in range");
            let h0 = h(0.0);
            let c = |t: f64| theta2 / (2.0 * gamma) + h(t) / gamma * ((h(t) / alpha).ln() - 1.0) + beta / gamma;
            let integral = quadrature(0.0, horizon, |s| h0 / h(s) * (-r * s).exp() * (c(s) + h(s) * income));
            let y0 = integral + h0 / h(horizon) * (-r * horizon).exp() * endowment;
            let p = theta.iter().map(|v| v / (gamma * h0)).collect();
            (y0, p, h0 * x + y0 - (h0 / alpha).ln() / gamma)
        }
        UtilityFamily::Log => {
            if endowment != 0.0 {
                return fail("log utility needs zero endowment");
            }
            let h = |t: f64| h_log(t, alpha, beta, horizon).expect("t in range");
            let k = |t: f64| {
                let w = alpha / h(t);
                -0.5 * theta2 - w * (w.ln() - 1.0) - r - income
            };
            let y0 = quadrature(0.0, horizon, |s| (-beta * s).exp() * h(s) * k(s)) / h(0.0);
            (y0, theta.clone(), alpha / h(0.0))
        }
        UtilityFamily::Power { gamma } => {
            if endowment != 0.0 {
                return fail("power utility needs zero endowment");
            }
            let delta = 1.0 - gamma;
            let a = gamma * (-theta2 / (2.0 * delta) - r - income) + beta;
            let b = delta * alpha.powf(1.0 / delta);
            let v0 = if a == 0.0 {
                1.0 + b / delta * horizon
            } else {
                b / a + (1.0 - b / a) * (-(a / delta) * horizon).exp()
            };
            let y0 = -delta * v0.ln();
            let p = theta.iter().map(|v| v / delta).collect();
            (y0, p, (alpha * y0.exp()).powf(1.0 / delta))
        }
    };
    Ok(MertonOracle {
        y0,
        value: analytic_value(problem, market, y0)?,
        investment,
        consumption,
    })
}

/// Composite Gauss-Legendre quadrature, 64 panels of 16 nodes.
fn quadrature(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (nodes, weights) = gauss_legendre(16);
    let panels = 64;
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for i in 0..panels {
        let lo = a + width * i as f64;
        let mid = lo + 0.5 * width;
        let panel: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * f(mid + 0.5 * width * x)).sum();
        total += 0.5 * width * panel;
    }
    total
}

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    /// Width of the acceptance band in standard errors.
    pub band: f64,
    pub perturbations: Vec<Perturbation>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            band: 3.0,
            perturbations: vec![
                Perturbation::ScaleConsumption(1.5),
                Perturbation::ScaleInvestment(0.0),
                Perturbation::ScaleInvestment(2.0),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrategyOutcome {
    pub label: String,
    pub mc: Statistic,
    pub infinite_paths: usize,
    /// `analytic - mc`.
    pub gap: f64,
    /// `gap > band se`.
    pub dominated: bool,
    /// `|gap| <= band se`.
    pub within_noise: bool,
    pub supermartingale: SupermartingaleStats,
    /// Largest `|R_0 - analytic|` over paths.
    pub r0_error: f64,
    pub positivity_violations: usize,
    pub consumption_violations: usize,
    pub bound_violations: usize,
    pub constraint_violations: usize,
}

impl StrategyOutcome {
    /// Controls stayed inside the constraint sets on every path and step.
    /// Dominance is only asserted for admissible strategies.
    pub fn admissible(&self) -> bool {
        self.constraint_violations == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport {
    pub family: &'static str,
    pub y0: f64,
    pub y0_se: Option<f64>,
    pub analytic_value: f64,
    pub band: f64,
    pub path_count: usize,
    pub steps: usize,
    pub optimal: StrategyOutcome,
    pub perturbed: Vec<StrategyOutcome>,
    pub bmo: Option<BmoDiagnostic>,
    pub y_bound: Option<f64>,
    pub y_bound_exceeded: bool,
}

impl VerificationReport {
    pub fn mc_value(&self) -> Statistic {
        self.optimal.mc
    }

    pub fn martingale_flag(&self) -> bool {
        self.optimal.supermartingale.martingale_flag
    }

    /// Invariant failures; empty when the run certifies optimality.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let o = &self.optimal;
        if !o.within_noise {
            out.push(format!(
                "optimal strategy: |analytic - mc| = {} exceeds {} se = {}",
                o.gap.abs(),
                self.band,
                self.band * o.mc.se
            ));
        }
        if !o.supermartingale.martingale_flag {
            out.push("optimal strategy: R-process increments are not within noise of zero".into());
        }
        if o.positivity_violations + o.consumption_violations > 0 {
            out.push(format!(
                "optimal strategy: {} wealth and {} consumption domain violations",
                o.positivity_violations, o.consumption_violations
            ));
        }
        if o.bound_violations > 0 {
            out.push(format!("optimal strategy: {} investment bound violations", o.bound_violations));
        }
        if o.constraint_violations > 0 {
            out.push(format!("optimal strategy: {} steps outside the constraint sets", o.constraint_violations));
        }
        for s in std::iter::once(o).chain(&self.perturbed).filter(|s| s.admissible()) {
            if s.mc.mean > self.analytic_value + self.band * s.mc.se {
                out.push(format!("{}: mc value {} above analytic value {}", s.label, s.mc.mean, self.analytic_value));
            }
            if s.supermartingale.violations > 0 {
                out.push(format!(
                    "{}: {} intervals with significantly positive R increments",
                    s.label, s.supermartingale.violations
                ));
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "strategy",
            "mc_value",
            "se",
            "analytic_value",
            "gap",
            "dominated",
            "within_noise",
            "admissible",
            "martingale_flag",
            "supermartingale_violations",
            "infinite_paths",
            "positivity_violations",
            "consumption_violations",
        ])?;
        for s in std::iter::once(&self.optimal).chain(&self.perturbed) {
            w.write_record([
                s.label.clone(),
                s.mc.mean.to_string(),
                s.mc.se.to_string(),
                self.analytic_value.to_string(),
                s.gap.to_string(),
                s.dominated.to_string(),
                s.within_noise.to_string(),
                s.admissible().to_string(),
                s.supermartingale.martingale_flag.to_string(),
                s.supermartingale.violations.to_string(),
                s.infinite_paths.to_string(),
                s.positivity_violations.to_string(),
                s.consumption_violations.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_supermartingale_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["strategy", "t0", "t1", "mean_increment", "se", "flagged"])?;
        for s in std::iter::once(&self.optimal).chain(&self.perturbed) {
            for i in &s.supermartingale.intervals {
                w.write_record([
                    s.label.clone(),
                    i.t0.to_string(),
                    i.t1.to_string(),
                    i.increment.mean.to_string(),
                    i.increment.se.to_string(),
                    i.flagged.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "utility           {}", self.family);
        let _ = writeln!(s, "paths x steps     {} x {}", self.path_count, self.steps);
        match self.y0_se {
            Some(se) => {
                let _ = writeln!(s, "Y_0               {} (se {})", self.y0, se);
            }
            None => {
                let _ = writeln!(s, "Y_0               {}", self.y0);
            }
        }
        let _ = writeln!(s, "analytic value    {}", self.analytic_value);
        let _ = writeln!(s, "band              {} se", self.band);
        if let Some(b) = &self.bmo {
            let _ = writeln!(s, "BMO estimate      {} (threshold {})", b.estimate, b.threshold);
        }
        if let Some(b) = self.y_bound {
            let flag = if self.y_bound_exceeded { "EXCEEDED" } else { "ok" };
            let _ = writeln!(s, "Y envelope        {b} ({flag})");
        }
        let _ = writeln!(s);
        for o in std::iter::once(&self.optimal).chain(&self.perturbed) {
            let verdict = if !o.admissible() {
                "inadmissible"
            } else if o.within_noise {
                "within noise"
            } else if o.dominated {
                "dominated"
            } else {
                "ABOVE VALUE"
            };
            let _ = writeln!(
                s,
                "{:<20} mc {:>22} se {:>12.3e} gap {:>12.3e}  {}  martingale={} flagged_intervals={}",
                o.label,
                o.mc.mean,
                o.mc.se,
                o.gap,
                verdict,
                o.supermartingale.martingale_flag,
                o.supermartingale.violations
            );
        }
        let v = self.violations();
        let _ = writeln!(s);
        if v.is_empty() {
            let _ = writeln!(s, "result            PASS");
        } else {
            let _ = writeln!(s, "result            FAIL");
            for line in v {
                let _ = writeln!(s, "  - {line}");
            }
        }
        s
    }
}

/// Simulates `strategy` on `batch`, reporting its outcome against
/// `analytic`. The wealth paths are returned for export.
pub fn evaluate_strategy(strategy: &Strategy, batch: &BrownianBatch, analytic: f64, band: f64) -> Result<(StrategyOutcome, WealthPaths)> {
    let problem = strategy.problem();
    let x = problem.x();
    let paths = match strategy.family() {
        UtilityFamily::Exponential { .. } => simulate_wealth_additive(strategy, batch, x)?,
        _ => simulate_wealth_multiplicative(strategy, batch, x)?,
    };
    let estimate = expected_utility_mc(problem, &paths);
    let r = r_process(problem, strategy.market(), &paths)?;
    let r0_error = (0..r.path_count())
        .map(|p| (r.path(p)[0] - analytic).abs())
        .fold(0.0, f64::max);
    let supermartingale = supermartingale_test(&r);
    let mc = estimate.value;
    let gap = analytic - mc.mean;
    Ok((
        StrategyOutcome {
            label: strategy.label(),
            mc,
            infinite_paths: estimate.infinite_paths,
            gap,
            dominated: gap > band * mc.se,
            within_noise: gap.abs() <= band * mc.se,
            supermartingale,
            r0_error,
            positivity_violations: paths.positivity_violations,
            consumption_violations: paths.consumption_violations,
            bound_violations: paths.bound_violations,
            constraint_violations: paths.constraint_violations,
        },
        paths,
    ))
}

/// Runs the optimal strategy and each perturbation on the same paths.
/// `on_optimal_paths` sees the optimal wealth paths before they are dropped.
pub fn run_verification(
    strategy: &Strategy,
    batch: &BrownianBatch,
    options: &VerifyOptions,
    bmo: Option<BmoDiagnostic>,
    on_optimal_paths: impl FnOnce(&WealthPaths) -> Result<()>,
) -> Result<VerificationReport> {
    let solution: &BsdeSolution = strategy.solution();
    let analytic = analytic_value(strategy.problem(), strategy.market(), solution.y0())?;
    let base = strategy.clone();
    let (optimal, paths) = evaluate_strategy(&base, batch, analytic, options.band)?;
    on_optimal_paths(&paths)?;
    drop(paths);
    let mut perturbed = Vec::with_capacity(options.perturbations.len());
    for p in &options.perturbations {
        let s = base.perturbed(p.clone())?;
        perturbed.push(evaluate_strategy(&s, batch, analytic, options.band)?.0);
    }
    let d = solution.diagnostics();
    Ok(VerificationReport {
        family: strategy.kind_name(),
        y0: solution.y0(),
        y0_se: d.y0_se,
        analytic_value: analytic,
        band: options.band,
        path_count: batch.path_count(),
        steps: batch.grid().steps(),
        optimal,
        perturbed,
        bmo,
        y_bound: d.y_bound,
        y_bound_exceeded: d.y_bound_exceeded,
    })
}
