//! Least-squares Monte Carlo backward induction.
//!
//! At each step, `E[Y_{k+1} | W_k]` and `Z_k = -E[Y_{k+1} dW_k | W_k] / dt`
//! are regressed on the basis. `Y_k` then follows from the driver with `Z`
//! and the state frozen over the interval, either by integrating
//! `y' = -f(t, y, Z_k)` with the same step-doubled RK4 used for the
//! deterministic solver (default) or by an implicit Euler step solved by
//! fixed-point iteration.

use rayon::prelude::*;

use super::basis::{chunked_sum, Design, CHUNK};
use super::ode::{adaptive_interval, OdeOptions};
use super::{step_back, terminal_states, truncate, BsdeSolution, Diagnostics, HermiteBasis, SolutionMode};
use crate::drivers::{Driver, DriverSlice};
use crate::error::{Error, Result};
use crate::market::BrownianBatch;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum YScheme {
    /// Step-doubled RK4 over the interval with `Z` frozen; fourth order in time.
    Rk4,
    /// `Y_k = E[Y_{k+1} | F_k] + f(t_k, Y_k, Z_k) dt`; first order in time.
    ImplicitEuler,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LsmcOptions {
    /// Polynomial degree per Brownian coordinate.
    pub degree: usize,
    /// Truncation radius for the `z` argument of the driver.
    pub z_cap: f64,
    pub scheme: YScheme,
    /// Step control of the RK4 scheme.
    pub ode: OdeOptions,
    pub fixed_point_tol: f64,
    pub fixed_point_max_iter: usize,
    /// Number of disjoint path groups re-solved to estimate the standard
    /// error of `Y_0`; 0 or 1 disables it.
    pub se_groups: usize,
}

impl LsmcOptions {
    /// Defaults with `z_cap = 10 (theta_bound + 1)`.
    pub fn with_theta_bound(theta_bound: f64) -> Self {
        Self {
            degree: 3,
            z_cap: 10.0 * (theta_bound + 1.0),
            scheme: YScheme::Rk4,
            ode: OdeOptions::default(),
            fixed_point_tol: 1e-10,
            fixed_point_max_iter: 50,
            se_groups: 8,
        }
    }
}

/// Solves the BSDE on `batch` with per-path terminal values.
pub fn solve_lsmc(
    driver: &dyn Driver,
    terminal: &[f64],
    batch: &BrownianBatch,
    options: &LsmcOptions,
) -> Result<BsdeSolution> {
    if terminal.len() != batch.path_count() {
        return Err(Error::ShapeMismatch {
            what: "terminal values",
            expected: batch.path_count(),
            found: terminal.len(),
        });
    }
    if batch.dim() != driver.dimension() {
        return Err(Error::ShapeMismatch {
            what: "Brownian dimension",
            expected: driver.dimension(),
            found: batch.dim(),
        });
    }
    if !(options.z_cap > 0.0) {
        return Err(Error::InvalidParameter {
            name: "z_cap",
            message: format!("must be positive, got {}", options.z_cap),
        });
    }
    let basis = HermiteBasis::new(batch.dim(), options.degree);
    let required = 10 * basis.len();
    if batch.path_count() < required {
        return Err(Error::InsufficientPaths {
            paths: batch.path_count(),
            basis: basis.len(),
            required,
        });
    }

    let mut solution = backward(driver, terminal, batch, options, &basis)?;

    let groups = options.se_groups;
    let group_size = batch.path_count() / groups.max(1);
    solution.diagnostics.y0_se = if groups >= 2 && group_size >= required {
        let mut y0s = Vec::with_capacity(groups);
        for g in 0..groups {
            let (a, b) = (g * group_size, (g + 1) * group_size);
            let sub = batch.subset(a, b);
            y0s.push(backward(driver, &terminal[a..b], &sub, options, &basis)?.y0());
        }
        let mean = y0s.iter().sum::<f64>() / groups as f64;
        let var = y0s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (groups - 1) as f64;
        // The groups are each `groups` times smaller than the full batch.
        Some((var / groups as f64).sqrt())
    } else {
        None
    };
    Ok(solution)
}

fn backward(
    driver: &dyn Driver,
    terminal: &[f64],
    batch: &BrownianBatch,
    options: &LsmcOptions,
    basis: &HermiteBasis,
) -> Result<BsdeSolution> {
    let grid = batch.grid();
    let steps = grid.steps();
    let n = batch.dim();
    let paths = batch.path_count();

    let mut state = terminal_states(batch);
    let mut y_next = terminal.to_vec();
    let mut y_now = vec![0.0; paths];
    let mut y_coef = vec![Vec::new(); steps + 1];
    let mut z_coef = vec![Vec::new(); steps];
    let mut r_squared = vec![1.0; steps + 1];
    let mut truncations = 0usize;
    let mut max_abs_y = terminal.iter().fold(0.0_f64, |m, v| m.max(v.abs()));

    let design = Design::new(basis, grid.t(steps), &state, steps)?;
    y_coef[steps] = fit(&design, &y_next);

    for k in (0..steps).rev() {
        let (t0, t1) = (grid.t(k), grid.t(k + 1));
        let dt = t1 - t0;
        step_back(batch, k, &mut state);
        let design = Design::new(basis, t0, &state, k)?;

        let mean_coef = fit(&design, &y_next);
        if common_value(&y_next).is_none() {
            r_squared[k] = design.r_squared(|i| y_next[i], &mean_coef);
        }
        // Centering on the fitted mean leaves the conditional expectation
        // unchanged and removes most of the variance.
        let cols = design.cols;
        let mut zc = Vec::with_capacity(n * cols);
        for j in 0..n {
            let c = design.fit(|i| (y_next[i] - design.predict(i, &mean_coef)) * batch.increment(i, k)[j]);
            zc.extend(c.iter().map(|v| -v / dt));
        }

        // The evaluation times of an unrefined step-doubled RK4 interval.
        let times: Vec<f64> = match options.scheme {
            YScheme::Rk4 => {
                let mid = 0.5 * (t0 + t1);
                vec![t1, 0.5 * (mid + t1), mid, 0.5 * (t0 + mid), t0]
            }
            YScheme::ImplicitEuler => vec![t0],
        };
        let slices = times
            .iter()
            .map(|&t| driver.at(t))
            .collect::<Result<Vec<Box<dyn DriverSlice + '_>>>>()?;

        let results: Vec<Result<usize>> = y_now
            .par_chunks_mut(CHUNK)
            .enumerate()
            .map(|(c, out)| {
                let mut z = vec![0.0; n];
                let mut capped = 0;
                for (i, y) in out.iter_mut().enumerate() {
                    let p = c * CHUNK + i;
                    let w = &state[p * n..(p + 1) * n];
                    let row = design.row(p);
                    for (j, zj) in z.iter_mut().enumerate() {
                        *zj = row.iter().zip(&zc[j * cols..(j + 1) * cols]).map(|(a, b)| a * b).sum();
                    }
                    if truncate(&mut z, options.z_cap) {
                        capped += 1;
                    }
                    let mean = design.predict(p, &mean_coef);
                    *y = match options.scheme {
                        YScheme::Rk4 => {
                            let f = |t: f64, yv: f64| -> Result<f64> {
                                match times.iter().position(|&s| s == t) {
                                    Some(i) => slices[i].eval(w, yv, &z),
                                    None => driver.at(t)?.eval(w, yv, &z),
                                }
                            };
                            adaptive_interval(&f, t1, t0, mean, &options.ode, 0)?
                        }
                        YScheme::ImplicitEuler => {
                            implicit_step(&*slices[0], w, &z, mean, dt, options, k, p)?
                        }
                    };
                    if !y.is_finite() {
                        return Err(Error::FixedPointDivergence { step: k, path: p });
                    }
                }
                Ok(capped)
            })
            .collect();
        for r in results {
            truncations += r?;
        }

        y_coef[k] = fit(&design, &y_now);
        z_coef[k] = zc;
        max_abs_y = max_abs_y.max(y_now.par_iter().with_min_len(CHUNK).map(|v| v.abs()).reduce(|| 0.0, f64::max));
        std::mem::swap(&mut y_now, &mut y_next);
    }

    // All paths share W_0 = 0, so Y_0 is their common value; average to
    // absorb rounding.
    let y0 = common_value(&y_next).unwrap_or_else(|| chunked_sum(paths, |i| y_next[i]) / paths as f64);
    let origin = vec![0.0; n];
    let mut y = vec![0.0; steps + 1];
    y[0] = y0;
    y_coef[0] = vec![y0];
    for (k, yk) in y.iter_mut().enumerate().skip(1) {
        *yk = basis.combine(grid.t(k), &origin, &y_coef[k]);
    }
    let y_bound = driver.y_bound();
    Ok(BsdeSolution {
        grid: grid.clone(),
        mode: SolutionMode::Regression,
        dim: n,
        y,
        basis: Some(basis.clone()),
        y_coef,
        z_coef,
        z_cap: options.z_cap,
        diagnostics: Diagnostics {
            r_squared,
            y0_se: None,
            y_bound,
            y_bound_exceeded: y_bound.is_some_and(|b| max_abs_y > b),
            max_abs_y,
            z_truncations: truncations,
        },
    })
}

fn common_value(v: &[f64]) -> Option<f64> {
    let first = *v.first()?;
    v.par_iter().with_min_len(CHUNK).all(|&x| x == first).then_some(first)
}

/// Regression coefficients of `target`. A target equal on every path is
/// its own conditional expectation and is returned without round-off.
fn fit(design: &Design, target: &[f64]) -> Vec<f64> {
    match common_value(target) {
        Some(v) => {
            let mut c = vec![0.0; design.cols];
            c[0] = v;
            c
        }
        None => design.fit(|i| target[i]),
    }
}

#[allow(clippy::too_many_arguments)]
fn implicit_step(
    slice: &dyn DriverSlice,
    state: &[f64],
    z: &[f64],
    mean: f64,
    dt: f64,
    options: &LsmcOptions,
    step: usize,
    path: usize,
) -> Result<f64> {
    let mut y = mean;
    for _ in 0..options.fixed_point_max_iter {
        let next = mean + slice.eval(state, y, z)? * dt;
        if !next.is_finite() {
            break;
        }
        if (next - y).abs() <= options.fixed_point_tol * (1.0 + next.abs()) {
            return Ok(next);
        }
        y = next;
    }
    Err(Error::FixedPointDivergence { step, path })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::{solve_deterministic, OdeOptions};
    use crate::drivers::FnDriver;
    use crate::market::{sample_brownian, MarketModel, TimeGrid};

    fn batch(steps: usize, paths: usize, seed: u64) -> BrownianBatch {
        let model = MarketModel::constant(1.0, 0.0, &[0.05], &[vec![0.2]]).unwrap();
        let grid = TimeGrid::uniform(1.0, steps).unwrap();
        sample_brownian(&model, &grid, paths, seed).unwrap()
    }

    fn options() -> LsmcOptions {
        LsmcOptions::with_theta_bound(1.0)
    }

    #[test]
    fn brownian_terminal_has_unit_negative_z() {
        let b = batch(16, 20_000, 3);
        let terminal = super::super::terminal_states(&b);
        let d = FnDriver::new(1, false, |_, _, _, _| 0.0);
        let s = solve_lsmc(&d, &terminal, &b, &options()).unwrap();
        assert!(s.y0().abs() < 0.03);
        let mut z = [0.0];
        for k in [0, 5, 15] {
            for w in [-0.5, 0.0, 0.7] {
                s.z_at(k, &[w], &mut z);
                assert!((z[0] + 1.0).abs() < 0.03, "k={k} w={w} z={}", z[0]);
            }
        }
    }

    #[test]
    fn linear_driver_both_schemes() {
        let b = batch(64, 5_000, 4);
        let d = FnDriver::new(1, false, |_, _, y, _| -y);
        let terminal = vec![1.0; b.path_count()];
        let exact = (-1.0f64).exp();
        let rk = solve_lsmc(&d, &terminal, &b, &options()).unwrap();
        assert!((rk.y0() - exact).abs() < 1e-9);
        let ie = solve_lsmc(
            &d,
            &terminal,
            &b,
            &LsmcOptions {
                scheme: YScheme::ImplicitEuler,
                ..options()
            },
        )
        .unwrap();
        // implicit Euler: (1 + dt)^{-N}
        assert!((ie.y0() - (1.0f64 + 1.0 / 64.0).powi(-64)).abs() < 1e-8);
        assert!((ie.y0() - exact).abs() > 1e-3);
    }

    #[test]
    fn deterministic_driver_matches_ode() {
        let b = batch(32, 2_000, 5);
        let d = FnDriver::new(1, true, |t, _, y, _| (1.0 + t).ln() - 0.5 * y);
        let terminal = vec![0.3; b.path_count()];
        let lsmc = solve_lsmc(&d, &terminal, &b, &options()).unwrap();
        let ode = solve_deterministic(&d, 0.3, b.grid(), &OdeOptions::default()).unwrap();
        // constant targets bypass the regression, so the ODE is reproduced exactly
        assert_eq!(lsmc.y0(), ode.y0());
        assert_eq!(lsmc.diagnostics().y0_se, Some(0.0));
        for k in 0..=32 {
            assert_eq!(lsmc.y_at(k, &[0.7]), ode.y_values()[k]);
        }
    }

    #[test]
    fn too_few_paths() {
        let b = batch(4, 39, 1);
        let d = FnDriver::new(1, false, |_, _, _, _| 0.0);
        assert!(matches!(
            solve_lsmc(&d, &vec![0.0; 39], &b, &options()),
            Err(Error::InsufficientPaths { required: 40, .. })
        ));
    }

    #[test]
    fn divergent_fixed_point_is_reported() {
        let b = batch(2, 400, 1);
        // contraction factor 3 dt = 1.5 > 1
        let d = FnDriver::new(1, false, |_, _, y, _| 3.0 * y);
        let r = solve_lsmc(
            &d,
            &vec![1.0; 400],
            &b,
            &LsmcOptions {
                scheme: YScheme::ImplicitEuler,
                ..options()
            },
        );
        assert!(matches!(r, Err(Error::FixedPointDivergence { .. })));
    }

    #[test]
    fn terminal_is_exact_and_results_reproducible() {
        let b = batch(8, 1_000, 9);
        let terminal = super::super::terminal_states(&b);
        let d = FnDriver::new(1, false, |_, w: &[f64], y, z: &[f64]| 0.1 * w[0] - 0.2 * y + 0.3 * z[0] * z[0]);
        let a = solve_lsmc(&d, &terminal, &b, &options()).unwrap();
        let c = solve_lsmc(&d, &terminal, &b, &options()).unwrap();
        assert_eq!(a.y0().to_bits(), c.y0().to_bits());
        for w in [-1.0, 0.4] {
            assert!((a.y_at(8, &[w]) - w).abs() < 1e-10);
        }
    }
}
