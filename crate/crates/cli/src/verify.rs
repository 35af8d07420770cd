//! Invariant suites run by `collisional verify`.

use std::fmt;
use std::path::Path;

use collisional::dynamics::{assemble, propagate, uniform_grid, AssembledGenerator, DensityMatrix};
use collisional::io::RateFile;
use collisional::jumps::{gain_reconstruction_residual, lindblad_operators};
use collisional::monitoring::{build_generator, difference_quotient, finite_dt_superoperator, t_unitarity_residual, CollisionModel};
use collisional::operator::{choi_negativity, trace_preservation_residual};
use collisional::random::{random_collision_model, random_hermitian, random_kmatrix_model, random_scalar_rate_model, random_unitary};
use collisional::rng::stream_rng;
use collisional::scattering::{optical_theorem_residual, ScatteringModel};
use collisional::thermal::{
    energy_shifts, rate_tensor, rate_tensor_m3_oracle, GasParameters, McConfig, QuadratureConfig, RateTensor,
};
use collisional::{CompositeSpace, Operator};
use serde::Serialize;

use crate::config::{fixture_matrices, Scenario};

pub const DEFAULT_SEED: u64 = 20_240_611;

const T_UNITARITY_TOL: f64 = 1e-12;
const CHOI_TOL: f64 = 1e-9;
const TRACE_TOL: f64 = 1e-12;
const QUOTIENT_TOL: f64 = 1e-6;
const OPTICAL_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;
const MC_SIGMAS: f64 = 4.0;
const GENERATOR_TRACE_TOL: f64 = 1e-12;
const GAIN_TOL: f64 = 1e-10;
const INTEGRATOR_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: &'static str,
    pub subject: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Informational checks are reported but do not affect the exit code.
    pub gating: bool,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match (self.pass, self.gating) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "INFO",
        };
        write!(f, "{tag} {:<18} {:<30} {:<36} value={:.3e} tol={:.1e}", self.suite, self.name, self.subject, self.value, self.tolerance)
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Report {
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl Report {
    fn push(&mut self, suite: &'static str, name: &'static str, subject: impl Into<String>, value: f64, tolerance: f64, gating: bool) {
        let pass = value <= tolerance;
        self.checks.push(Check { suite, name, subject: subject.into(), value, tolerance, pass, gating });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass || !c.gating)
    }

    /// Distinct names of failed gating checks, in order of appearance.
    pub fn failures(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for c in self.checks.iter().filter(|c| c.gating && !c.pass) {
            if !names.iter().any(|n| n == c.name) {
                names.push(c.name.to_string());
            }
        }
        names
    }
}

/// Runs the built-in suites and, when a scenario is given, the same suites
/// on its model and fixtures. `extra_rate_files` are checked for PSD and
/// pairing.
pub fn run(scenario: Option<&Scenario>, extra_rate_files: &[&Path], seed: u64) -> collisional::Result<Report> {
    let mut report = Report { seed, checks: Vec::new() };
    t_unitarity(&mut report, seed);
    monitoring_builtin(&mut report, seed)?;

    let gas = GasParameters::new(0.1, 1.0, 1.0)?;
    let quad = QuadratureConfig::default();
    let mut rng = stream_rng(seed, 1000);
    let two = random_kmatrix_model(&mut rng, &[0.0, 0.5], 1.0, 1.0);
    let three = random_kmatrix_model(&mut rng, &[0.0, 0.4, 1.1], 1.0, 1.0);
    optical(&mut report, &two, "built-in 2-channel K-matrix", true)?;
    optical(&mut report, &three, "built-in 3-channel K-matrix", true)?;
    let samples = scenario.map_or(200_000, |s| s.config.verify.mc_samples);
    model_suites(&mut report, &two, &gas, &quad, "built-in 2-channel K-matrix", samples, seed)?;
    model_suites(&mut report, &three, &gas, &quad, "built-in 3-channel K-matrix", 0, seed)?;

    if let Some(s) = scenario {
        let cfg = &s.config;
        let is_kmatrix = matches!(cfg.scattering, crate::config::ScatteringSpec::KMatrix { .. });
        optical(&mut report, s.model.as_ref(), "configured model", is_kmatrix)?;
        model_suites(&mut report, s.model.as_ref(), &cfg.gas, &cfg.quadrature, "configured model", cfg.verify.mc_samples, seed)?;
        for (k, fx) in cfg.verify.collision_models.iter().enumerate() {
            fixture(&mut report, fx, &format!("verify.collision_models[{k}]"))?;
        }
        for p in &cfg.verify.rate_files {
            rate_file(&mut report, p)?;
        }
    }
    for p in extra_rate_files {
        rate_file(&mut report, p)?;
    }
    Ok(report)
}

fn t_unitarity(report: &mut Report, seed: u64) {
    let worst = (0..100u64)
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            t_unitarity_residual(&random_unitary(&mut rng, 2 + (i as usize % 15)))
        })
        .fold(0.0, f64::max);
    report.push("scattering", "t_unitarity_residual", "100 Haar unitaries", worst, T_UNITARITY_TOL, true);
}

/// Choi negativity and trace error of one finite step, the Richardson
/// difference quotient against the generator, and CP of `exp(t𝓛)`.
fn monitoring_checks(report: &mut Report, model: &CollisionModel, subject: &str, gating: bool) -> collisional::Result<()> {
    let g = model.gamma_norm();
    let step = finite_dt_superoperator(model, 0.5 / g)?;
    report.push("monitoring", "monitoring_choi_negativity", subject, choi_negativity(&step), CHOI_TOL, gating);
    report.push("monitoring", "monitoring_trace_error", subject, trace_preservation_residual(&step), TRACE_TOL, gating);
    let gen = build_generator(model)?;
    let dt = 1e-6 / g;
    let d1 = difference_quotient(model, dt)?;
    let d2 = difference_quotient(model, dt / 2.0)?;
    let richardson = d2.scale(2.0).add(&d1.scale(-1.0));
    let rel = richardson.add(&gen.generator.scale(-1.0)).norm() / gen.generator.norm().max(f64::MIN_POSITIVE);
    report.push("monitoring", "generator_difference_quotient", subject, rel, QUOTIENT_TOL, gating);
    report.push("monitoring", "semigroup_choi_negativity", subject, gen.semigroup_cptp_residual, CHOI_TOL, gating);
    Ok(())
}

fn monitoring_builtin(report: &mut Report, seed: u64) -> collisional::Result<()> {
    for i in 0..8u64 {
        let mut rng = stream_rng(seed, 200 + i);
        let (ds, de) = (2 + (i as usize % 2), 1 + (i as usize % 3));
        let model = random_scalar_rate_model(&mut rng, ds, de, 0.5 + i as f64);
        monitoring_checks(report, &model, &format!("scalar-rate model {i} ({ds}x{de})"), true)?;
    }
    for i in 0..4u64 {
        let mut rng = stream_rng(seed, 300 + i);
        let model = random_collision_model(&mut rng, 2, 2, 1.0);
        monitoring_checks(report, &model, &format!("generic-rate model {i} (2x2)"), false)?;
    }
    Ok(())
}

fn fixture(report: &mut Report, fx: &crate::config::CollisionFixture, subject: &str) -> collisional::Result<()> {
    let m = fixture_matrices(fx)?;
    let s = Operator::new(m.s)?;
    let res = t_unitarity_residual(&s);
    report.push("monitoring", "t_unitarity_residual", subject, res, T_UNITARITY_TOL, true);
    if res > T_UNITARITY_TOL {
        return Ok(());
    }
    let model = CollisionModel::new(CompositeSpace::new(fx.dim_sys, fx.dim_env)?, s, Operator::new(m.gamma)?, Operator::new(m.rho_env)?)?;
    let gamma = model.gamma().matrix();
    let scalar = gamma.iter().enumerate().all(|(k, z)| {
        let (i, j) = (k % gamma.nrows(), k / gamma.nrows());
        if i == j { (z - gamma[(0, 0)]).norm() == 0.0 } else { z.norm() == 0.0 }
    });
    monitoring_checks(report, &model, subject, scalar)
}

fn optical(report: &mut Report, model: &dyn ScatteringModel, subject: &str, gating: bool) -> collisional::Result<()> {
    let channels = model.channels();
    let top = channels.energies().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut worst: f64 = 0.0;
    for k in 1..=10 {
        let e = top + 0.05 + 0.3 * k as f64;
        for a0 in 0..channels.len() {
            match optical_theorem_residual(model, a0, e) {
                Ok(r) => worst = worst.max(r),
                Err(collisional::Error::OutOfTableRange { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    report.push("scattering", "optical_theorem", subject, worst, OPTICAL_TOL, gating);
    Ok(())
}

fn model_suites(
    report: &mut Report,
    model: &dyn ScatteringModel,
    gas: &GasParameters,
    quad: &QuadratureConfig,
    subject: &str,
    mc_samples: usize,
    seed: u64,
) -> collisional::Result<()> {
    let rates = match rate_tensor(model, gas, quad) {
        Ok(r) => r,
        Err(collisional::Error::RateTensorNotPositive { min_eigenvalue, tolerance }) => {
            report.push("thermal", "rate_tensor_psd", subject, -min_eigenvalue, tolerance, true);
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    tensor_checks(report, &rates, subject);
    if mc_samples > 0 {
        let mc = rate_tensor_m3_oracle(model, gas, &McConfig { samples: mc_samples, seed, ..McConfig::default() })?;
        let floor = 1e-12 * rates.entries().iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let mut worst: f64 = 0.0;
        for (q, est) in rates.entries().iter().zip(&mc) {
            let z = |d: f64, se: f64| if se > 0.0 { d.abs() / se } else if d.abs() <= floor { 0.0 } else { f64::INFINITY };
            worst = worst.max(z(q.re - est.value.re, est.stderr_re)).max(z(q.im - est.value.im, est.stderr_im));
        }
        report.push("thermal", "mc_quadrature_agreement", format!("{subject}, {mc_samples} samples"), worst, MC_SIGMAS, true);
    }
    let shifts = energy_shifts(model, gas, quad)?;
    let gen = assemble(model.channels(), &shifts, &rates)?;
    generator_checks(report, &gen, subject, seed)
}

fn tensor_checks(report: &mut Report, rates: &RateTensor, subject: &str) {
    let norm = rates.coefficient_norm();
    let min = rates.diagnostics().psd_min_eig;
    report.push("thermal", "rate_tensor_psd", subject, if norm > 0.0 { -min / norm } else { -min }, PSD_TOL, true);
    let outside = rates
        .entries()
        .iter()
        .zip(rates.chi_mask())
        .filter(|(_, &allowed)| !allowed)
        .fold(0.0f64, |m, (z, _)| m.max(z.norm()));
    report.push("thermal", "rate_tensor_selection_rule", subject, outside, 0.0, true);
    let scale = rates.entries().iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let pairing = rates.diagnostics().hermiticity_residual / scale.max(f64::MIN_POSITIVE);
    report.push("thermal", "rate_tensor_pairing", subject, pairing, PSD_TOL, true);
}

fn generator_checks(report: &mut Report, gen: &AssembledGenerator, subject: &str, seed: u64) -> collisional::Result<()> {
    let n = gen.dim();
    let lnorm = gen.superoperator().matrix().iter().fold(0.0f64, |m, z| m.max(z.norm())).max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let x = random_hermitian(&mut stream_rng(seed, 400 + i), n);
        let xnorm = x.max_norm().max(f64::MIN_POSITIVE);
        let tr = gen.apply(x.matrix()).trace().norm();
        worst = worst.max(tr / (lnorm * xnorm * (n * n) as f64));
    }
    report.push("dynamics", "generator_trace_annihilation", subject, worst, GENERATOR_TRACE_TOL, true);

    let rate = gen.rates().coefficient_norm().max(1e-300);
    let cp = [0.1, 1.0, 10.0].iter().map(|t| gen.propagator_choi_negativity(t / rate)).fold(0.0, f64::max);
    report.push("dynamics", "generator_cptp", subject, cp, CHOI_TOL, true);

    let rho0 = DensityMatrix::basis(gen.channels().clone(), n - 1)?;
    let record = propagate(gen, &rho0, &uniform_grid(3.0 / rate, 6)?)?;
    report.push("dynamics", "propagation_trace_error", subject, record.max_trace_error(), 1e-10, true);
    report.push("dynamics", "integrator_agreement", subject, record.integrator_discrepancy.unwrap_or(0.0), INTEGRATOR_TOL, true);

    let ops = lindblad_operators(gen)?;
    let x = random_hermitian(&mut stream_rng(seed, 500), n);
    let gain = gain_reconstruction_residual(&ops, gen, x.matrix()) / (lnorm * x.max_norm().max(f64::MIN_POSITIVE));
    report.push("jumps", "jump_gain_reconstruction", subject, gain, GAIN_TOL, true);
    Ok(())
}

fn rate_file(report: &mut Report, path: &Path) -> collisional::Result<()> {
    let subject = path.display().to_string();
    let rates = RateFile::read(path)?.rate_tensor_unchecked()?;
    tensor_checks(report, &rates, &subject);
    Ok(())
}
