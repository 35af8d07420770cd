//! Thermal averages over an ideal Maxwell gas: the rate tensor
//! `M_{αβ}^{α0β0}`, forward-scattering energy shifts `ε_α` and elastic
//! dephasing rates.
//!
//! The rate tensor is
//!
//! ```text
//! M_{αβ}^{α0β0} = χ ∫ dv ν(v) n v_out 2π ∫ dcosθ f_{αα0}(cosθ; E_α0 + mv²/2) f*_{ββ0}(cosθ; E_β0 + mv²/2)
//! ```
//!
//! with `v_out² = v² − 2(E_α − E_α0)/m` and zero integrand below threshold.

mod montecarlo;
mod tensor;

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, segments, sqrt_onset_nodes, Rule};
use crate::scattering::{ChannelSet, ScatteringModel};

pub use montecarlo::{rate_coefficient_m3_oracle, rate_tensor_m3_oracle, McConfig, McEstimate};
pub use tensor::{RateDiagnostics, RateTensor};

/// Ideal Maxwell gas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasParameters {
    pub n_gas: f64,
    #[serde(alias = "m")]
    pub mass: f64,
    pub beta: f64,
}

impl GasParameters {
    pub fn new(n_gas: f64, mass: f64, beta: f64) -> Result<Self> {
        let gas = Self { n_gas, mass, beta };
        gas.validate()?;
        Ok(gas)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("n_gas", self.n_gas), ("mass", self.mass), ("beta", self.beta)] {
            if !(x > 0.0) || !x.is_finite() {
                return Err(Error::InvalidInput(format!("gas parameter {name} must be positive and finite, got {x}")));
            }
        }
        Ok(())
    }

    /// `λ_th = sqrt(2π β / m)`.
    pub fn thermal_wavelength(&self) -> f64 {
        (2.0 * PI * self.beta / self.mass).sqrt()
    }

    /// `⟨v⟩ = sqrt(8 / (π β m))`.
    pub fn mean_speed(&self) -> f64 {
        (8.0 / (PI * self.beta * self.mass)).sqrt()
    }

    /// Most probable speed `sqrt(2 / (β m))`.
    pub fn modal_speed(&self) -> f64 {
        (2.0 / (self.beta * self.mass)).sqrt()
    }

    pub fn with_density(&self, n_gas: f64) -> Self {
        Self { n_gas, ..*self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    pub cos_nodes: usize,
    /// Gauss–Legendre nodes per speed segment.
    pub speed_nodes: usize,
    /// Upper speed limit in units of `1/sqrt(β m)`.
    pub cutoff: f64,
    /// Largest accepted relative change between `speed_nodes` and half as many.
    pub rel_tol: f64,
    pub energy_tolerance: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { cos_nodes: 64, speed_nodes: 128, cutoff: 8.0, rel_tol: 1e-8, energy_tolerance: 1e-9 }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cos_nodes == 0 || self.speed_nodes < 2 {
            return Err(Error::InvalidInput("quadrature needs cos_nodes ≥ 1 and speed_nodes ≥ 2".into()));
        }
        if !(self.cutoff > 0.0) || !(self.rel_tol > 0.0) || !(self.energy_tolerance >= 0.0) {
            return Err(Error::InvalidInput("quadrature cutoff and tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// `ν(v) = 4π v² (βm/2π)^{3/2} exp(−βmv²/2)`.
pub fn maxwell_speed_pdf(gas: &GasParameters, v: f64) -> f64 {
    if v < 0.0 {
        return 0.0;
    }
    let bm = gas.beta * gas.mass;
    4.0 * PI * v * v * (bm / (2.0 * PI)).powf(1.5) * (-0.5 * bm * v * v).exp()
}

/// Selection rule: `|(E_α − E_α0) − (E_β − E_β0)| ≤ tol`.
pub fn chi(channels: &ChannelSet, alpha: usize, beta: usize, alpha0: usize, beta0: usize, energy_tolerance: f64) -> bool {
    let e = channels.energies();
    ((e[alpha] - e[alpha0]) - (e[beta] - e[beta0])).abs() <= energy_tolerance
}

/// Outgoing speed after `α0 → α`, or zero when `α` is closed.
pub fn outgoing_speed(channels: &ChannelSet, mass: f64, alpha: usize, alpha0: usize, v: f64) -> f64 {
    let v2 = v * v - 2.0 * (channels.energy(alpha) - channels.energy(alpha0)) / mass;
    if v2 > 0.0 {
        v2.sqrt()
    } else {
        0.0
    }
}

fn check_mass<M: ScatteringModel + ?Sized>(model: &M, gas: &GasParameters) -> Result<()> {
    gas.validate()?;
    let (a, b) = (model.mass(), gas.mass);
    if (a - b).abs() > 1e-12 * a.max(b) {
        return Err(Error::InvalidInput(format!("scattering model mass {a} differs from gas mass {b}")));
    }
    Ok(())
}

/// Speed segments on `[0, v_max]` split at every channel threshold and every
/// kinetic breakpoint of the model.
fn speed_segments<M: ScatteringModel + ?Sized>(model: &M, gas: &GasParameters, cfg: &QuadratureConfig) -> Vec<(f64, f64)> {
    let m = gas.mass;
    let v_max = cfg.cutoff / (gas.beta * m).sqrt();
    let e = model.channels().energies();
    let mut kinetic: Vec<f64> = model.kinetic_breakpoints();
    for &ei in e {
        for &ej in e {
            if ei > ej {
                kinetic.push(ei - ej);
            }
        }
    }
    segments(0.0, v_max, kinetic.into_iter().filter(|k| *k > 0.0).map(|k| (2.0 * k / m).sqrt()))
}

/// Speed integral evaluated with `nodes` and with `nodes / 2` per segment.
struct SpeedIntegral {
    value: Vec<Complex64>,
    change: Vec<f64>,
    abs: Vec<f64>,
}

impl SpeedIntegral {
    /// Largest change between the two node counts, relative to `∫|integrand|`
    /// but never to less than `floor` times the largest such integral.
    fn residual(&self, floor: f64) -> f64 {
        let scale = floor * self.abs.iter().fold(0.0f64, |m, &x| m.max(x));
        let mut residual: f64 = 0.0;
        for (c, a) in self.change.iter().zip(&self.abs) {
            let denom = a.max(scale);
            if denom > 0.0 {
                residual = residual.max(c / denom);
            }
        }
        residual
    }
}

/// Rounding-level integrals are measured against this fraction of the largest
/// component instead of their own magnitude.
const RESIDUAL_FLOOR: f64 = 1e-12;

/// Integrates a vector-valued speed integrand over fixed segments.
///
/// Segments are evaluated in parallel and summed in segment order, so the
/// result does not depend on the thread schedule.
fn speed_integral<F>(segs: &[(f64, f64)], nodes: usize, len: usize, integrand: F) -> Result<SpeedIntegral>
where
    F: Fn(f64, &mut [Complex64]) -> Result<()> + Sync,
{
    let run = |rule: &Rule| -> Result<(Vec<Complex64>, Vec<f64>)> {
        let parts: Vec<Result<(Vec<Complex64>, Vec<f64>)>> = segs
            .par_iter()
            .map(|&(a, b)| {
                let mut acc = vec![Complex64::new(0.0, 0.0); len];
                let mut abs = vec![0.0; len];
                let mut buf = vec![Complex64::new(0.0, 0.0); len];
                for (v, w) in sqrt_onset_nodes(rule, a, b) {
                    buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
                    integrand(v, &mut buf)?;
                    for k in 0..len {
                        acc[k] += buf[k] * w;
                        abs[k] += buf[k].norm() * w;
                    }
                }
                Ok((acc, abs))
            })
            .collect();
        let mut total = vec![Complex64::new(0.0, 0.0); len];
        let mut total_abs = vec![0.0; len];
        for part in parts {
            let (acc, abs) = part?;
            for k in 0..len {
                total[k] += acc[k];
                total_abs[k] += abs[k];
            }
        }
        Ok((total, total_abs))
    };
    let (value, abs) = run(&gauss_legendre(nodes))?;
    let (coarse, _) = run(&gauss_legendre((nodes / 2).max(1)))?;
    let change = value.iter().zip(&coarse).map(|(f, c)| (f - c).norm()).collect();
    Ok(SpeedIntegral { value, change, abs })
}

fn converged(what: &str, residual: f64, cfg: &QuadratureConfig) -> Result<()> {
    if residual > cfg.rel_tol {
        return Err(Error::Quadrature { what: what.to_string(), residual, tolerance: cfg.rel_tol });
    }
    Ok(())
}

/// Amplitude columns `f_{·α0}` at every `cosθ` node for each needed `α0`.
fn columns<M: ScatteringModel + ?Sized>(
    model: &M,
    rule: &[(f64, f64)],
    kinetic: f64,
    needed: &[bool],
) -> Result<Vec<Vec<DVector<Complex64>>>> {
    let e = model.channels().energies();
    let mut cols = Vec::with_capacity(needed.len());
    for (a0, &need) in needed.iter().enumerate() {
        let mut per_cos = Vec::new();
        if need {
            for &(c, _) in rule {
                per_cos.push(model.amplitude_column(c, e[a0] + kinetic, a0)?);
            }
        }
        cols.push(per_cos);
    }
    Ok(cols)
}

/// Integrates the rate integrand for the given tuples `(α, β, α0, β0)`, all
/// assumed to satisfy the selection rule.
fn rate_integrals<M: ScatteringModel + ?Sized>(
    model: &M,
    gas: &GasParameters,
    cfg: &QuadratureConfig,
    tuples: &[[usize; 4]],
) -> Result<(Vec<Complex64>, f64)> {
    let channels = model.channels();
    let n = channels.len();
    let rule = model.cos_rule(cfg.cos_nodes);
    let mut needed = vec![false; n];
    for t in tuples {
        needed[t[2]] = true;
        needed[t[3]] = true;
    }
    let m = gas.mass;
    let segs = speed_segments(model, gas, cfg);
    let integral = speed_integral(&segs, cfg.speed_nodes, tuples.len(), |v, out| {
        let cols = columns(model, &rule, 0.5 * m * v * v, &needed)?;
        let pre = maxwell_speed_pdf(gas, v) * gas.n_gas * 2.0 * PI;
        for (k, &[a, b, a0, b0]) in tuples.iter().enumerate() {
            let v_out = outgoing_speed(channels, m, a, a0, v);
            if v_out == 0.0 {
                continue;
            }
            let mut acc = Complex64::new(0.0, 0.0);
            if a == b && a0 == b0 {
                for (i, &(_, w)) in rule.iter().enumerate() {
                    acc += w * cols[a0][i][a].norm_sqr();
                }
            } else {
                for (i, &(_, w)) in rule.iter().enumerate() {
                    acc += cols[a0][i][a] * cols[b0][i][b].conj() * w;
                }
            }
            out[k] = acc * (pre * v_out);
        }
        Ok(())
    })?;
    let residual = integral.residual(RESIDUAL_FLOOR);
    Ok((integral.value, residual))
}

/// One entry `M_{αβ}^{α0β0}` of the rate tensor.
pub fn rate_coefficient<M: ScatteringModel + ?Sized>(
    model: &M,
    gas: &GasParameters,
    alpha: usize,
    beta: usize,
    alpha0: usize,
    beta0: usize,
    cfg: &QuadratureConfig,
) -> Result<Complex64> {
    check_mass(model, gas)?;
    cfg.validate()?;
    let channels = model.channels();
    let n = channels.len();
    if [alpha, beta, alpha0, beta0].iter().any(|&i| i >= n) {
        return Err(Error::InvalidInput(format!("channel index out of range for {n} channels")));
    }
    if !chi(channels, alpha, beta, alpha0, beta0, cfg.energy_tolerance) {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let (value, residual) = rate_integrals(model, gas, cfg, &[[alpha, beta, alpha0, beta0]])?;
    converged("rate coefficient", residual, cfg)?;
    Ok(value[0])
}

/// All `n⁴` entries, validated for Hermiticity pairing and positivity.
pub fn rate_tensor<M: ScatteringModel + ?Sized>(model: &M, gas: &GasParameters, cfg: &QuadratureConfig) -> Result<RateTensor> {
    check_mass(model, gas)?;
    cfg.validate()?;
    let channels = model.channels();
    let n = channels.len();
    // compute each Hermitian pair once, (α, α0) ≤ (β, β0)
    let mut tuples = Vec::new();
    for a0 in 0..n {
        for a in 0..n {
            for b0 in 0..n {
                for b in 0..n {
                    if (a + a0 * n) <= (b + b0 * n) && chi(channels, a, b, a0, b0, cfg.energy_tolerance) {
                        tuples.push([a, b, a0, b0]);
                    }
                }
            }
        }
    }
    let (values, residual) = rate_integrals(model, gas, cfg, &tuples)?;
    converged("rate tensor", residual, cfg)?;
    let mut entries = vec![Complex64::new(0.0, 0.0); n * n * n * n];
    for (&[a, b, a0, b0], z) in tuples.iter().zip(values) {
        entries[RateTensor::index(n, a, b, a0, b0)] = z;
        entries[RateTensor::index(n, b, a, b0, a0)] = z.conj();
    }
    RateTensor::new(channels.clone(), entries, cfg.energy_tolerance, residual)
}

/// Forward-scattering energy shifts `ε_α` for every channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyShifts {
    pub epsilon: Vec<f64>,
    #[serde(default)]
    pub quadrature_residual: f64,
}

impl EnergyShifts {
    pub fn zero(n: usize) -> Self {
        Self { epsilon: vec![0.0; n], quadrature_residual: 0.0 }
    }
}

fn shift_integrals<M: ScatteringModel + ?Sized>(
    model: &M,
    gas: &GasParameters,
    cfg: &QuadratureConfig,
    alphas: &[usize],
) -> Result<(Vec<f64>, f64)> {
    let e = model.channels().energies();
    let m = gas.mass;
    let segs = speed_segments(model, gas, cfg);
    let integral = speed_integral(&segs, cfg.speed_nodes, alphas.len(), |v, out| {
        let kin = 0.5 * m * v * v;
        let pdf = maxwell_speed_pdf(gas, v);
        for (k, &a) in alphas.iter().enumerate() {
            let f = model.amplitude_column(1.0, e[a] + kin, a)?[a];
            out[k] = Complex64::new(pdf * f.re, 0.0);
        }
        Ok(())
    })?;
    let pre = -2.0 * PI * gas.n_gas / m;
    let residual = integral.residual(RESIDUAL_FLOOR);
    Ok((integral.value.iter().map(|z| pre * z.re).collect(), residual))
}

/// `ε_α = −2π (n/m) ∫ dv ν(v) Re f_αα(forward; E_α + mv²/2)`.
pub fn energy_shift<M: ScatteringModel + ?Sized>(model: &M, gas: &GasParameters, alpha: usize, cfg: &QuadratureConfig) -> Result<f64> {
    check_mass(model, gas)?;
    cfg.validate()?;
    if alpha >= model.channels().len() {
        return Err(Error::InvalidInput(format!("channel index {alpha} out of range")));
    }
    let (eps, residual) = shift_integrals(model, gas, cfg, &[alpha])?;
    converged("energy shift", residual, cfg)?;
    Ok(eps[0])
}

pub fn energy_shifts<M: ScatteringModel + ?Sized>(model: &M, gas: &GasParameters, cfg: &QuadratureConfig) -> Result<EnergyShifts> {
    check_mass(model, gas)?;
    cfg.validate()?;
    let all: Vec<usize> = (0..model.channels().len()).collect();
    let (epsilon, residual) = shift_integrals(model, gas, cfg, &all)?;
    converged("energy shifts", residual, cfg)?;
    Ok(EnergyShifts { epsilon, quadrature_residual: residual })
}

/// `γ = π ∫ dv ν(v) n v ∫ dcosθ |f_αα − f_ββ|²`, each amplitude at its own
/// channel energy plus `mv²/2`.
pub fn elastic_dephasing_rate<M: ScatteringModel + ?Sized>(
    model: &M,
    gas: &GasParameters,
    alpha: usize,
    beta: usize,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    check_mass(model, gas)?;
    cfg.validate()?;
    let n = model.channels().len();
    if alpha == beta || alpha >= n || beta >= n {
        return Err(Error::InvalidInput(format!("dephasing needs two distinct channels, got ({alpha}, {beta})")));
    }
    let e = model.channels().energies();
    let rule = model.cos_rule(cfg.cos_nodes);
    let m = gas.mass;
    let segs = speed_segments(model, gas, cfg);
    // second component, the sum of squares, sets the scale for the residual
    let integral = speed_integral(&segs, cfg.speed_nodes, 2, |v, out| {
        let kin = 0.5 * m * v * v;
        let (mut diff, mut sum) = (0.0, 0.0);
        for &(c, w) in &rule {
            let fa = model.amplitude_column(c, e[alpha] + kin, alpha)?[alpha];
            let fb = model.amplitude_column(c, e[beta] + kin, beta)?[beta];
            diff += w * (fa - fb).norm_sqr();
            sum += w * (fa.norm_sqr() + fb.norm_sqr());
        }
        let pre = PI * maxwell_speed_pdf(gas, v) * gas.n_gas * v;
        out[0] = Complex64::new(pre * diff, 0.0);
        out[1] = Complex64::new(pre * sum, 0.0);
        Ok(())
    })?;
    converged("dephasing rate", integral.residual(RESIDUAL_FLOOR), cfg)?;
    Ok(integral.value[0].re)
}
