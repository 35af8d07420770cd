use std::path::{Path, PathBuf};

use collisional::dynamics::{assemble, propagate, uniform_grid, AssembledGenerator, StepDiagnostics, TrajectoryRecord};
use collisional::io::{trajectory_csv, RateFile};
use collisional::jumps::{ensemble_average, lindblad_operators, EnsembleConfig, EnsembleRecord, InitialState};
use collisional::thermal::{energy_shifts, rate_tensor, EnergyShifts, RateTensor};
use serde::Serialize;

use crate::config::{initial_state, ConfigError, Initial, Scenario};
use crate::CliError;

/// Rates and shifts computed from the configured model.
pub fn compute_rates(scenario: &Scenario) -> Result<(RateTensor, EnergyShifts), CliError> {
    let cfg = &scenario.config;
    let rates = rate_tensor(scenario.model.as_ref(), &cfg.gas, &cfg.quadrature)?;
    let shifts = energy_shifts(scenario.model.as_ref(), &cfg.gas, &cfg.quadrature)?;
    Ok((rates, shifts))
}

pub fn rate_file(scenario: &Scenario, rates: &RateTensor, shifts: &EnergyShifts) -> Result<RateFile, CliError> {
    let config = serde_json::to_value(&scenario.config).map_err(collisional::Error::from)?;
    Ok(RateFile::new(scenario.config.units.clone(), config, rates, shifts))
}

pub fn cmd_rates(scenario: &Scenario, out: &Path) -> Result<PathBuf, CliError> {
    let (rates, shifts) = compute_rates(scenario)?;
    let path = out.join(&scenario.config.output.rates);
    rate_file(scenario, &rates, &shifts)?.write(&path)?;
    Ok(path)
}

/// Generator from a rate file when given, otherwise computed in memory.
pub fn generator(scenario: &Scenario, rates_path: Option<&Path>) -> Result<AssembledGenerator, CliError> {
    let (rates, shifts) = match rates_path {
        Some(p) => {
            let file = RateFile::read(p).map_err(|e| ConfigError::new("--rates", format!("{}: {e}", p.display())))?;
            let channels = file.channel_set()?;
            if channels != scenario.channels {
                return Err(ConfigError::new("--rates", "rate file channels differ from the configured channels").into());
            }
            (file.rate_tensor()?, file.shifts()?)
        }
        None => compute_rates(scenario)?,
    };
    Ok(assemble(&scenario.channels, &shifts, &rates)?)
}

fn evolve_inputs(scenario: &Scenario) -> Result<(Initial, Vec<f64>), CliError> {
    let ev = scenario.config.evolve.as_ref().ok_or_else(|| ConfigError::new("evolve", "section is required"))?;
    let initial = initial_state(&ev.initial, &scenario.channels)?;
    let grid = uniform_grid(ev.t_max, ev.n_steps)?;
    Ok((initial, grid))
}

#[derive(Serialize)]
struct EvolveSidecar<'a> {
    units: &'a collisional::io::Units,
    config: &'a crate::config::ScenarioConfig,
    rates_source: String,
    shifted_energies: &'a [f64],
    near_degenerate: bool,
    integrator_discrepancy: Option<f64>,
    max_trace_error: f64,
    min_eigenvalue: f64,
    diagnostics: &'a [StepDiagnostics],
}

fn rates_source(rates_path: Option<&Path>) -> String {
    rates_path.map_or_else(|| "computed".to_string(), |p| p.display().to_string())
}

pub fn run_evolve(scenario: &Scenario, rates_path: Option<&Path>) -> Result<(AssembledGenerator, TrajectoryRecord), CliError> {
    let gen = generator(scenario, rates_path)?;
    let (initial, grid) = evolve_inputs(scenario)?;
    let record = propagate(&gen, initial.density(), &grid)?;
    Ok((gen, record))
}

pub fn cmd_evolve(scenario: &Scenario, rates_path: Option<&Path>, out: &Path) -> Result<PathBuf, CliError> {
    let (gen, record) = run_evolve(scenario, rates_path)?;
    let cfg = &scenario.config;
    let path = out.join(&cfg.output.trajectory);
    std::fs::write(&path, trajectory_csv(&record, None, &cfg.units))?;
    let sidecar = EvolveSidecar {
        units: &cfg.units,
        config: cfg,
        rates_source: rates_source(rates_path),
        shifted_energies: gen.shifted_energies(),
        near_degenerate: gen.is_near_degenerate(),
        integrator_discrepancy: record.integrator_discrepancy,
        max_trace_error: record.max_trace_error(),
        min_eigenvalue: record.min_eigenvalue(),
        diagnostics: &record.diagnostics,
    };
    write_json(&path.with_extension("json"), &sidecar)?;
    Ok(path)
}

pub fn run_trajectories(scenario: &Scenario, rates_path: Option<&Path>) -> Result<EnsembleRecord, CliError> {
    let tr = scenario
        .config
        .trajectories
        .as_ref()
        .ok_or_else(|| ConfigError::new("trajectories", "section is required"))?;
    let gen = generator(scenario, rates_path)?;
    let ops = lindblad_operators(&gen)?;
    let (initial, times) = evolve_inputs(scenario)?;
    let initial = match initial {
        Initial::Pure(psi, _) => InitialState::Pure(psi),
        Initial::Mixed(rho) => InitialState::Mixed(rho),
    };
    let cfg = EnsembleConfig { n_traj: tr.n_traj, seed: tr.seed, times };
    Ok(ensemble_average(&ops, &initial, &cfg)?)
}

#[derive(Serialize)]
struct EnsembleSidecar<'a> {
    units: &'a collisional::io::Units,
    config: &'a crate::config::ScenarioConfig,
    rates_source: String,
    n_traj: usize,
    seed: u64,
}

pub fn cmd_trajectories(scenario: &Scenario, rates_path: Option<&Path>, out: &Path) -> Result<PathBuf, CliError> {
    let ens = run_trajectories(scenario, rates_path)?;
    let cfg = &scenario.config;
    let path = out.join(&cfg.output.ensemble);
    std::fs::write(&path, trajectory_csv(&ens.record, Some(&ens.stderr), &cfg.units))?;
    let sidecar = EnsembleSidecar {
        units: &cfg.units,
        config: cfg,
        rates_source: rates_source(rates_path),
        n_traj: ens.n_traj,
        seed: cfg.trajectories.as_ref().map_or(0, |t| t.seed),
    };
    write_json(&path.with_extension("json"), &sidecar)?;
    Ok(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(collisional::Error::from)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
