//! Backward equations `Y_t = xi + int_t^T f(s, Y_s, Z_s) ds + int_t^T Z_s dW_s`.
//!
//! Note the sign: `Z` enters with a plus, so it is the negative of the
//! usual martingale-representation integrand. For `xi = W_T` and `f = 0`
//! this gives `Z = -1`.

mod basis;
mod lsmc;
mod ode;

use std::path::Path;

use rayon::prelude::*;

pub use basis::HermiteBasis;
pub use lsmc::{solve_lsmc, LsmcOptions, YScheme};
pub use ode::{solve_deterministic, OdeOptions};

use crate::error::Result;
use crate::market::{BrownianBatch, TimeGrid};
use basis::{Design, CHUNK};
pub(crate) use basis::{chunked_sum, CHUNK as CHUNK_PATHS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolutionMode {
    /// Driver inputs depend on time only; `Z = 0` and `Y` is a function of `t`.
    Deterministic,
    /// `Y_k` and `Z_k` are regression functions of `W_{t_k}`.
    Regression,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// Per grid step, R^2 of the conditional-mean regression (regression mode).
    pub r_squared: Vec<f64>,
    /// Standard error of `Y_0` from independent path groups.
    pub y0_se: Option<f64>,
    /// Driver-derived envelope for `sup |Y|`, when known.
    pub y_bound: Option<f64>,
    /// True when the computed `Y` left the envelope.
    pub y_bound_exceeded: bool,
    pub max_abs_y: f64,
    /// Number of `(path, step)` cells where `|Z|` hit `z_cap`.
    pub z_truncations: usize,
}

#[derive(Clone, Debug)]
pub struct BsdeSolution {
    grid: TimeGrid,
    mode: SolutionMode,
    dim: usize,
    /// Deterministic: `Y(t_k)`. Regression: `Y_k` at the origin of the state.
    y: Vec<f64>,
    basis: Option<HermiteBasis>,
    /// Per grid point, coefficients of `Y_k` in the basis.
    y_coef: Vec<Vec<f64>>,
    /// Per step `k < N`, coefficients of `Z_k`, laid out `[component][basis]`.
    z_coef: Vec<Vec<f64>>,
    z_cap: f64,
    diagnostics: Diagnostics,
}

impl BsdeSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn mode(&self) -> SolutionMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn y0(&self) -> f64 {
        self.y[0]
    }

    pub fn terminal_value(&self) -> f64 {
        *self.y.last().expect("grid has points")
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    pub fn basis(&self) -> Option<&HermiteBasis> {
        self.basis.as_ref()
    }

    pub fn z_cap(&self) -> f64 {
        self.z_cap
    }

    /// Deterministic mode: the `Y` values on the grid.
    pub fn y_values(&self) -> &[f64] {
        &self.y
    }

    /// `Y_{t_k}` at Brownian state `state`.
    pub fn y_at(&self, k: usize, state: &[f64]) -> f64 {
        match self.mode {
            SolutionMode::Deterministic => self.y[k],
            SolutionMode::Regression => {
                let basis = self.basis.as_ref().expect("regression basis");
                basis.combine(self.grid.t(k), state, &self.y_coef[k])
            }
        }
    }

    /// `Z_{t_k}` at `state`, truncated to `|Z| <= z_cap`. At the last grid
    /// point the final step's representation is reused.
    pub fn z_at(&self, k: usize, state: &[f64], out: &mut [f64]) {
        match self.mode {
            SolutionMode::Deterministic => out.iter_mut().for_each(|z| *z = 0.0),
            SolutionMode::Regression => {
                let basis = self.basis.as_ref().expect("regression basis");
                let k = k.min(self.grid.steps() - 1);
                let t = self.grid.t(k);
                let mut phi = vec![0.0; basis.len()];
                basis.eval(t, state, &mut phi);
                let cols = basis.active_len(t);
                for (j, o) in out.iter_mut().enumerate() {
                    let c = &self.z_coef[k][j * cols..(j + 1) * cols];
                    *o = c.iter().zip(&phi).map(|(a, b)| a * b).sum();
                }
                truncate(out, self.z_cap);
            }
        }
    }

    /// Writes one row per grid point: `t`, `y`, `z_1..z_n` at the state
    /// origin, then (regression mode) all basis coefficients and R^2.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let cols = self.basis.as_ref().map_or(0, HermiteBasis::len);
        let mut header = vec!["t".to_string(), "y".to_string()];
        header.extend((1..=self.dim).map(|j| format!("z{j}")));
        if self.mode == SolutionMode::Regression {
            header.extend((0..cols).map(|b| format!("y_coef{b}")));
            for j in 1..=self.dim {
                header.extend((0..cols).map(|b| format!("z{j}_coef{b}")));
            }
            header.push("r_squared".into());
        }
        w.write_record(&header)?;
        let origin = vec![0.0; self.dim];
        let mut z = vec![0.0; self.dim];
        for k in 0..self.grid.points().len() {
            let mut row = vec![fmt(self.grid.t(k)), fmt(self.y_at(k, &origin))];
            self.z_at(k, &origin, &mut z);
            row.extend(z.iter().map(|v| fmt(*v)));
            if self.mode == SolutionMode::Regression {
                row.extend(padded(&self.y_coef[k], cols).map(fmt));
                let active = self.basis.as_ref().expect("basis").active_len(self.grid.t(k.min(self.grid.steps() - 1)));
                let zc = &self.z_coef[k.min(self.grid.steps() - 1)];
                for j in 0..self.dim {
                    row.extend(padded(&zc[j * active..(j + 1) * active], cols).map(fmt));
                }
                row.push(fmt(self.diagnostics.r_squared.get(k).copied().unwrap_or(f64::NAN)));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn padded(v: &[f64], len: usize) -> impl Iterator<Item = f64> + '_ {
    v.iter().copied().chain(std::iter::repeat(0.0)).take(len)
}

/// Shortest representation that parses back to the same double.
pub(crate) fn fmt(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn truncate(z: &mut [f64], cap: f64) -> bool {
    let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > cap {
        z.iter_mut().for_each(|v| *v *= cap / n);
        true
    } else {
        false
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BmoDiagnostic {
    /// Max over grid times and paths of the regressed `E[int_t^T |Z|^2 | F_t]`.
    pub estimate: f64,
    /// `z_cap^2 T`, the largest value a truncated `Z` can produce.
    pub threshold: f64,
    /// Per grid step, the max over paths.
    pub per_step: Vec<f64>,
}

/// Estimates the BMO norm of `int Z dW` on a batch of paths. Grid times
/// stand in for stopping times; diagnostic only.
pub fn bmo_estimate(solution: &BsdeSolution, batch: &BrownianBatch) -> Result<BmoDiagnostic> {
    let grid = solution.grid();
    let steps = grid.steps();
    let threshold = solution.z_cap * solution.z_cap * grid.horizon();
    let basis = match (solution.mode, &solution.basis) {
        (SolutionMode::Regression, Some(b)) => b,
        _ => {
            return Ok(BmoDiagnostic {
                estimate: 0.0,
                threshold,
                per_step: vec![0.0; steps + 1],
            })
        }
    };
    let n = batch.dim();
    let paths = batch.path_count();
    let mut state = terminal_states(batch);
    let mut tail = vec![0.0; paths];
    let mut per_step = vec![0.0; steps + 1];
    for k in (0..steps).rev() {
        let dt = grid.dt(k);
        step_back(batch, k, &mut state);
        tail.par_chunks_mut(CHUNK)
            .zip(state.par_chunks(n * CHUNK))
            .for_each(|(s, w)| {
                let mut z = vec![0.0; n];
                for (acc, wi) in s.iter_mut().zip(w.chunks(n)) {
                    solution.z_at(k, wi, &mut z);
                    *acc += z.iter().map(|v| v * v).sum::<f64>() * dt;
                }
            });
        let design = Design::new(basis, grid.t(k), &state, k)?;
        let coef = design.fit(|i| tail[i]);
        let best = (0..paths)
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(|i| design.predict(i, &coef))
            .reduce(|| 0.0, f64::max);
        per_step[k] = best.max(0.0);
    }
    let estimate = per_step.iter().copied().fold(0.0, f64::max);
    Ok(BmoDiagnostic {
        estimate,
        threshold,
        per_step,
    })
}

/// `W_T` for every path, laid out `[path][dim]`.
pub(crate) fn terminal_states(batch: &BrownianBatch) -> Vec<f64> {
    let n = batch.dim();
    let mut out = vec![0.0; batch.path_count() * n];
    out.par_chunks_mut(n.max(1)).enumerate().for_each(|(p, w)| {
        for inc in batch.path_increments(p).chunks(n) {
            for (a, b) in w.iter_mut().zip(inc) {
                *a += b;
            }
        }
    });
    out
}

/// Moves `state` from `W_{t_{k+1}}` to `W_{t_k}`.
pub(crate) fn step_back(batch: &BrownianBatch, k: usize, state: &mut [f64]) {
    let n = batch.dim();
    if k == 0 {
        state.iter_mut().for_each(|w| *w = 0.0);
        return;
    }
    state.par_chunks_mut(n).enumerate().for_each(|(p, w)| {
        for (a, b) in w.iter_mut().zip(batch.increment(p, k)) {
            *a -= b;
        }
    });
}
