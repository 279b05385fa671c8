use super::{BsdeSolution, Diagnostics, SolutionMode};
use crate::drivers::Driver;
use crate::error::{Error, Result};
use crate::market::TimeGrid;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdeOptions {
    /// Local error target per grid interval, relative to `1 + |y|`.
    pub tolerance: f64,
    /// Maximum bisection depth of a grid interval before giving up.
    pub max_depth: u32,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_depth: 30,
        }
    }
}

/// Integrates `Y' = -f(t, Y, 0)` backward from `Y_T = terminal`.
///
/// Each grid interval is covered by classical RK4; the interval is bisected
/// until a full step and two half steps agree to `tolerance`.
pub fn solve_deterministic(
    driver: &dyn Driver,
    terminal: f64,
    grid: &TimeGrid,
    options: &OdeOptions,
) -> Result<BsdeSolution> {
    if !driver.is_deterministic() {
        return Err(Error::NotDeterministic);
    }
    let n = driver.dimension();
    let zero = vec![0.0; n];
    let f = |t: f64, y: f64| -> Result<f64> { driver.at(t)?.eval(&zero, y, &zero) };

    let steps = grid.steps();
    let mut y = vec![0.0; steps + 1];
    y[steps] = terminal;
    for k in (0..steps).rev() {
        y[k] = adaptive_interval(&f, grid.t(k + 1), grid.t(k), y[k + 1], options, 0)?;
    }

    let max_abs_y = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let y_bound = driver.y_bound();
    Ok(BsdeSolution {
        grid: grid.clone(),
        mode: SolutionMode::Deterministic,
        dim: n,
        y,
        basis: None,
        y_coef: Vec::new(),
        z_coef: Vec::new(),
        z_cap: f64::INFINITY,
        diagnostics: Diagnostics {
            r_squared: Vec::new(),
            y0_se: Some(0.0),
            y_bound,
            y_bound_exceeded: y_bound.is_some_and(|b| max_abs_y > b),
            max_abs_y,
            z_truncations: 0,
        },
    })
}

/// One backward RK4 step of `Y' = -f` from `t1` to `t0 < t1`.
pub(crate) fn rk4_back(f: &dyn Fn(f64, f64) -> Result<f64>, t1: f64, t0: f64, y: f64) -> Result<f64> {
    let h = t1 - t0;
    let mid = t1 - 0.5 * h;
    let k1 = f(t1, y)?;
    let k2 = f(mid, y + 0.5 * h * k1)?;
    let k3 = f(mid, y + 0.5 * h * k2)?;
    let k4 = f(t0, y + h * k3)?;
    Ok(y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

pub(crate) fn adaptive_interval(
    f: &dyn Fn(f64, f64) -> Result<f64>,
    t1: f64,
    t0: f64,
    y: f64,
    options: &OdeOptions,
    depth: u32,
) -> Result<f64> {
    let stiff = Error::StiffnessFailure { t: t0 };
    let mid = 0.5 * (t0 + t1);
    let full = rk4_back(f, t1, t0, y)?;
    let half = rk4_back(f, t1, mid, y)?;
    let two = rk4_back(f, mid, t0, half)?;
    if !(full.is_finite() && two.is_finite()) {
        return if depth < options.max_depth && mid > t0 && mid < t1 {
            let y_mid = adaptive_interval(f, t1, mid, y, options, depth + 1)?;
            adaptive_interval(f, mid, t0, y_mid, options, depth + 1)
        } else {
            Err(stiff)
        };
    }
    // Richardson estimate of the error in `two`
    let error = (two - full).abs() / 15.0;
    if error <= options.tolerance * (1.0 + two.abs()) {
        return Ok(two);
    }
    if depth >= options.max_depth || !(mid > t0 && mid < t1) {
        return Err(stiff);
    }
    let y_mid = adaptive_interval(f, t1, mid, y, options, depth + 1)?;
    adaptive_interval(f, mid, t0, y_mid, options, depth + 1)
}
