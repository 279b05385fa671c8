use std::fs;
use std::path::{Path, PathBuf};

use qbsde_core::bsde::{bmo_estimate, solve_deterministic, solve_lsmc, BsdeSolution, SolutionMode};
use qbsde_core::drivers::UtilityDriver;
use qbsde_core::market::{sample_brownian, BrownianBatch};
use qbsde_core::strategy::optimal_strategy;
use qbsde_core::verify::{analytic_value, merton_oracle, run_verification, MertonOracle, VerificationReport, VerifyOptions};
use qbsde_core::Error;
use thiserror::Error;

use crate::scenario::{ConfigError, Overrides, Resolved, Scenario, SweepSection};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("solver failure: {0}")]
    Solver(Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(e) => CliError::Io(e.to_string()),
            Error::Csv(e) => CliError::Io(e.to_string()),
            other => CliError::Solver(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Loads a scenario file, applies overrides and validates.
pub fn load(path: &Path, overrides: &Overrides) -> Result<Resolved, CliError> {
    let (mut scenario, text) = Scenario::load(path)?;
    scenario.apply(overrides);
    Ok(scenario.resolve(&path.display().to_string(), &text)?)
}

pub struct SolveOutput {
    pub solution: BsdeSolution,
    pub analytic_value: f64,
    /// Present for constant-coefficient unconstrained scenarios.
    pub oracle: Option<MertonOracle>,
}

/// Brownian terminal values `W_T`, one row per path.
fn terminal_states(batch: &BrownianBatch) -> Vec<Vec<f64>> {
    let n = batch.dim();
    (0..batch.path_count())
        .map(|p| {
            let mut w = vec![0.0; n];
            for inc in batch.path_increments(p).chunks(n) {
                w.iter_mut().zip(inc).for_each(|(a, b)| *a += b);
            }
            w
        })
        .collect()
}

pub fn solve(r: &Resolved) -> Result<SolveOutput, CliError> {
    let driver = UtilityDriver::new(r.market.clone(), r.problem.clone())?;
    let solution = match r.mode {
        SolutionMode::Deterministic => {
            let zero = vec![0.0; r.market.brownian_dim()];
            solve_deterministic(&driver, driver.terminal(&zero), &r.grid, &r.ode)?
        }
        SolutionMode::Regression => {
            let batch = sample_brownian(&r.market, &r.grid, r.regression_paths, r.scenario.numerics.seed)?;
            let terminal: Vec<f64> = terminal_states(&batch).iter().map(|w| driver.terminal(w)).collect();
            solve_lsmc(&driver, &terminal, &batch, &r.lsmc)?
        }
    };
    let analytic = analytic_value(&r.problem, &r.market, solution.y0())?;
    Ok(SolveOutput {
        solution,
        analytic_value: analytic,
        oracle: merton_oracle(&r.market, &r.problem).ok(),
    })
}

fn out_dir(r: &Resolved) -> Result<PathBuf, CliError> {
    let dir = r.scenario.outputs.directory.clone();
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_manifest(dir: &Path, scenario: &Scenario) -> Result<(), CliError> {
    let text = format!("# Resolved scenario, every default explicit.\n{}", scenario.to_toml());
    fs::write(dir.join("manifest.toml"), text)?;
    Ok(())
}

fn solve_summary(r: &Resolved, s: &SolveOutput) -> String {
    let mut out = format!(
        "utility           {}\nmode              {:?}\nsteps             {}\nY_0               {}\n",
        r.problem.family().name(),
        r.mode,
        r.grid.steps(),
        s.solution.y0()
    );
    if let Some(se) = s.solution.diagnostics().y0_se.filter(|_| r.mode == SolutionMode::Regression) {
        out += &format!("Y_0 se            {se}\n");
    }
    out += &format!("analytic value    {}\n", s.analytic_value);
    if let Some(o) = &s.oracle {
        out += &format!(
            "closed form Y_0   {}\nclosed form value {}\n|Y_0 difference|  {:e}\n",
            o.y0,
            o.value,
            (o.y0 - s.solution.y0()).abs()
        );
    }
    out
}

/// `solve`: writes `solution.csv`, `summary.txt` and `manifest.toml`.
pub fn cmd_solve(path: &Path, overrides: &Overrides) -> Result<(SolveOutput, String), CliError> {
    let r = load(path, overrides)?;
    let s = solve(&r)?;
    let dir = out_dir(&r)?;
    if r.scenario.outputs.solution {
        s.solution.write_csv(&dir.join("solution.csv"))?;
    }
    let summary = solve_summary(&r, &s);
    fs::write(dir.join("summary.txt"), &summary)?;
    write_manifest(&dir, &r.scenario)?;
    Ok((s, summary))
}

/// `verify`: solve, simulate the optimal strategy and its perturbations,
/// and check the martingale and supermartingale properties.
///
/// Invariant violations do not make this fail; check
/// [`VerificationReport::violations`].
pub fn cmd_verify(path: &Path, overrides: &Overrides) -> Result<(VerificationReport, String), CliError> {
    let r = load(path, overrides)?;
    let s = solve(&r)?;
    let dir = out_dir(&r)?;
    write_manifest(&dir, &r.scenario)?;
    if r.scenario.outputs.solution {
        s.solution.write_csv(&dir.join("solution.csv"))?;
    }

    let strategy = optimal_strategy(&r.market, &r.problem, &s.solution)?;
    // regression mode keeps the simulation paths independent of the fit
    let seed = match r.mode {
        SolutionMode::Deterministic => r.scenario.numerics.seed,
        SolutionMode::Regression => r.scenario.numerics.seed.wrapping_add(1),
    };
    let batch = sample_brownian(&r.market, &r.grid, r.scenario.numerics.paths, seed)?;
    let bmo = match r.mode {
        SolutionMode::Regression => Some(bmo_estimate(&s.solution, &batch)?),
        SolutionMode::Deterministic => None,
    };
    let options = VerifyOptions {
        band: r.scenario.verify.band,
        perturbations: r.scenario.verify.perturbations.clone(),
    };
    let budget = r.scenario.outputs.paths;
    let paths_file = dir.join("paths.csv");
    let report = run_verification(&strategy, &batch, &options, bmo, |paths| {
        if budget > 0 {
            paths.write_csv(&paths_file, budget)?;
        }
        Ok(())
    })?;

    if r.scenario.outputs.report {
        report.write_csv(&dir.join("report.csv"))?;
    }
    if r.scenario.outputs.supermartingale {
        report.write_supermartingale_csv(&dir.join("supermartingale.csv"))?;
    }
    let summary = format!("{}\n{}", solve_summary(&r, &s), report.summary());
    fs::write(dir.join("summary.txt"), &summary)?;
    Ok((report, summary))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub y0: f64,
    pub y0_se: Option<f64>,
    pub analytic_value: f64,
}

/// `sweep`: one solve per value of `param`; writes `sweep.csv`.
///
/// `sweep` overrides the scenario's `[sweep]` table when given.
pub fn cmd_sweep(path: &Path, overrides: &Overrides, sweep: Option<SweepSection>) -> Result<Vec<SweepRow>, CliError> {
    let (mut scenario, text) = Scenario::load(path)?;
    scenario.apply(overrides);
    let origin = path.display().to_string();
    let spec = sweep.or_else(|| scenario.sweep.clone()).ok_or_else(|| ConfigError {
        origin: origin.clone(),
        line: None,
        field: Some("sweep".into()),
        message: "no sweep given; pass --param and --values or add a [sweep] table".into(),
    })?;
    if spec.values.is_empty() {
        return Err(ConfigError {
            origin,
            line: None,
            field: Some("sweep.values".into()),
            message: "no values to sweep".into(),
        }
        .into());
    }
    scenario.sweep = Some(spec.clone());
    // validates the base scenario and supplies the manifest
    let base = scenario.resolve(&origin, &text)?;

    let mut rows = Vec::with_capacity(spec.values.len());
    for &v in &spec.values {
        let variant = scenario.with_param(&spec.param, v)?;
        let r = variant.resolve(&format!("{} ({}={v})", origin, spec.param), &text)?;
        let s = solve(&r)?;
        rows.push(SweepRow {
            value: v,
            y0: s.solution.y0(),
            y0_se: s.solution.diagnostics().y0_se.filter(|_| r.mode == SolutionMode::Regression),
            analytic_value: s.analytic_value,
        });
    }

    let dir = out_dir(&base)?;
    let mut w = csv::Writer::from_path(dir.join("sweep.csv")).map_err(|e| CliError::Io(e.to_string()))?;
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(["param", "value", "y0", "y0_se", "analytic_value"]).map_err(io)?;
    for row in &rows {
        w.write_record([
            spec.param.clone(),
            row.value.to_string(),
            row.y0.to_string(),
            row.y0_se.map_or(String::new(), |v| v.to_string()),
            row.analytic_value.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    write_manifest(&dir, &base.scenario)?;
    Ok(rows)
}
