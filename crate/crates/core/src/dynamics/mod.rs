//! Channel-basis master equation
//!
//! ```text
//! ∂t ρ_αβ = −i(Ẽ_α − Ẽ_β) ρ_αβ + Σ M_{αβ}^{α0β0} ρ_α0β0
//!           − ½ Σ_α0 ρ_α0β Σ_γ M_γγ^{α0α} − ½ Σ_β0 ρ_αβ0 Σ_γ M_γγ^{ββ0}
//! ```
//!
//! with shifted levels `Ẽ_α = E_α + ε_α`, its propagation, and the
//! population-rate and dephasing limits.

mod adaptive;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operator::{choi_negativity, hermitian_part, max_abs, CMatrix, Operator, Superoperator};
use crate::scattering::ChannelSet;
use crate::thermal::{EnergyShifts, RateTensor};

pub use adaptive::AdaptiveOptions;

pub const STATE_TOLERANCE: f64 = 1e-12;
pub const STATE_PSD_TOLERANCE: f64 = 1e-10;

/// Normalized density matrix in the channel basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    channels: ChannelSet,
    rho: CMatrix,
}

impl DensityMatrix {
    pub fn new(channels: ChannelSet, rho: CMatrix) -> Result<Self> {
        let n = channels.len();
        if rho.nrows() != n || rho.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: rho.nrows() });
        }
        let op = Operator::new(rho.clone())?;
        let h = op.hermitian_residual();
        if h > STATE_TOLERANCE {
            return Err(Error::NotHermitian { residual: h });
        }
        let tr = op.trace().re;
        if (tr - 1.0).abs() > STATE_TOLERANCE {
            return Err(Error::NotNormalized { trace: tr });
        }
        let min = op.min_eigenvalue();
        if min < -STATE_PSD_TOLERANCE {
            return Err(Error::NotPositive { min_eigenvalue: min });
        }
        Ok(Self { channels, rho })
    }

    /// `|ψ⟩⟨ψ|` for a unit vector `ψ`.
    pub fn pure(channels: ChannelSet, psi: &DVector<Complex64>) -> Result<Self> {
        let norm = psi.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput(format!("state vector has norm {norm}, expected 1")));
        }
        Self::new(channels, psi * psi.adjoint())
    }

    pub fn basis(channels: ChannelSet, k: usize) -> Result<Self> {
        let n = channels.len();
        if k >= n {
            return Err(Error::InvalidInput(format!("basis index {k} out of range")));
        }
        let mut psi = DVector::zeros(n);
        psi[k] = Complex64::new(1.0, 0.0);
        Self::pure(channels, &psi)
    }

    pub fn channels(&self) -> &ChannelSet {
        &self.channels
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.rho
    }
}

/// Superoperator of the master equation together with its ingredients.
#[derive(Clone, Debug)]
pub struct AssembledGenerator {
    channels: ChannelSet,
    shifted_energies: Vec<f64>,
    rates: RateTensor,
    superop: Superoperator,
    near_degenerate: bool,
}

/// Builds the generator, rejecting rate tensors that fail their invariants.
///
/// Channel gaps at or below the selection-rule tolerance are not resolved;
/// they are flagged through [`AssembledGenerator::is_near_degenerate`].
pub fn assemble(channels: &ChannelSet, shifts: &EnergyShifts, rates: &RateTensor) -> Result<AssembledGenerator> {
    let n = channels.len();
    if rates.channels() != channels {
        return Err(Error::InvalidInput("rate tensor belongs to a different channel set".into()));
    }
    if shifts.epsilon.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: shifts.epsilon.len() });
    }
    if shifts.epsilon.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidInput("energy shifts must be finite".into()));
    }
    rates.validate()?;
    let shifted: Vec<f64> = channels.energies().iter().zip(&shifts.epsilon).map(|(e, s)| e + s).collect();
    let loss = rates.loss_matrix();
    let mut l = CMatrix::zeros(n * n, n * n);
    for a in 0..n {
        for b in 0..n {
            let row = a + b * n;
            for a0 in 0..n {
                for b0 in 0..n {
                    l[(row, a0 + b0 * n)] = rates.get(a, b, a0, b0);
                }
            }
            for a0 in 0..n {
                l[(row, a0 + b * n)] -= 0.5 * loss[(a0, a)];
            }
            for b0 in 0..n {
                l[(row, a + b0 * n)] -= 0.5 * loss[(b, b0)];
            }
            l[(row, row)] -= Complex64::new(0.0, shifted[a] - shifted[b]);
        }
    }
    Ok(AssembledGenerator {
        channels: channels.clone(),
        shifted_energies: shifted,
        rates: rates.clone(),
        superop: Superoperator::new(n, l).expect("n² × n²"),
        near_degenerate: !channels.is_non_degenerate(rates.energy_tolerance()),
    })
}

impl AssembledGenerator {
    pub fn channels(&self) -> &ChannelSet {
        &self.channels
    }

    pub fn dim(&self) -> usize {
        self.channels.len()
    }

    pub fn shifted_energies(&self) -> &[f64] {
        &self.shifted_energies
    }

    pub fn rates(&self) -> &RateTensor {
        &self.rates
    }

    pub fn superoperator(&self) -> &Superoperator {
        &self.superop
    }

    pub fn is_near_degenerate(&self) -> bool {
        self.near_degenerate
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        self.superop.apply_matrix(rho)
    }

    /// Largest coupling between population and coherence components.
    pub fn population_coherence_coupling(&self) -> f64 {
        let n = self.dim();
        let l = self.superop.matrix();
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                for a0 in 0..n {
                    for b0 in 0..n {
                        if (a == b) != (a0 == b0) {
                            worst = worst.max(l[(a + b * n, a0 + b0 * n)].norm());
                        }
                    }
                }
            }
        }
        worst
    }

    /// Choi negativity of `exp(t 𝓛)`.
    pub fn propagator_choi_negativity(&self, t: f64) -> f64 {
        choi_negativity(&self.superop.exp(t))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StepDiagnostics {
    pub trace_error: f64,
    pub hermiticity_error: f64,
    pub min_eigenvalue: f64,
}

/// Density matrices on a time grid with per-step diagnostics.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<CMatrix>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Largest entrywise difference between the exponential and the adaptive
    /// integrator, when the cross-check was run.
    pub integrator_discrepancy: Option<f64>,
}

impl TrajectoryRecord {
    pub fn from_states(times: Vec<f64>, states: Vec<CMatrix>) -> Self {
        let diagnostics = states
            .iter()
            .map(|rho| StepDiagnostics {
                trace_error: (rho.trace() - Complex64::new(1.0, 0.0)).norm(),
                hermiticity_error: max_abs(&(rho - rho.adjoint())),
                min_eigenvalue: Operator::from_matrix_unchecked(hermitian_part(rho)).min_eigenvalue(),
            })
            .collect();
        Self { times, states, diagnostics, integrator_discrepancy: None }
    }

    pub fn entry(&self, alpha: usize, beta: usize) -> Vec<Complex64> {
        self.states.iter().map(|r| r[(alpha, beta)]).collect()
    }

    pub fn max_trace_error(&self) -> f64 {
        self.diagnostics.iter().fold(0.0, |m, d| m.max(d.trace_error))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.diagnostics.iter().fold(f64::INFINITY, |m, d| m.min(d.min_eigenvalue))
    }
}

/// Uniform grid `0, t_max/n_steps, …, t_max`; a single point when `t_max = 0`.
pub fn uniform_grid(t_max: f64, n_steps: usize) -> Result<Vec<f64>> {
    if !(t_max >= 0.0) || !t_max.is_finite() {
        return Err(Error::InvalidInput(format!("t_max must be finite and nonnegative, got {t_max}")));
    }
    if t_max == 0.0 {
        return Ok(vec![0.0]);
    }
    if n_steps == 0 {
        return Err(Error::InvalidInput("n_steps must be positive".into()));
    }
    Ok((0..=n_steps).map(|k| t_max * k as f64 / n_steps as f64).collect())
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() || t_grid.iter().any(|t| !t.is_finite()) || t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("time grid must be non-empty, finite and strictly increasing".into()));
    }
    Ok(())
}

fn check_state(gen: &AssembledGenerator, rho0: &DensityMatrix) -> Result<()> {
    if rho0.channels() != gen.channels() {
        return Err(Error::InvalidInput("initial state belongs to a different channel set".into()));
    }
    Ok(())
}

/// `ρ(t) = exp((t − t0) 𝓛) ρ0` on the grid, reusing the step propagator
/// whenever consecutive steps are equal.
pub fn propagate_exponential(gen: &AssembledGenerator, rho0: &DensityMatrix, t_grid: &[f64]) -> Result<TrajectoryRecord> {
    check_grid(t_grid)?;
    check_state(gen, rho0)?;
    let n = gen.dim();
    let mut states = vec![rho0.matrix().clone()];
    let mut cached: Option<(f64, Superoperator)> = None;
    let mut v = DVector::from_column_slice(rho0.matrix().as_slice());
    for w in t_grid.windows(2) {
        let dt = w[1] - w[0];
        let reuse = matches!(&cached, Some((h, _)) if (h - dt).abs() <= 1e-14 * dt);
        if !reuse {
            cached = Some((dt, gen.superop.exp(dt)));
        }
        let step = &cached.as_ref().unwrap().1;
        v = step.matrix() * v;
        states.push(CMatrix::from_column_slice(n, n, v.as_slice()));
    }
    Ok(TrajectoryRecord::from_states(t_grid.to_vec(), states))
}

/// Same grid, integrated with adaptive Dormand–Prince steps.
pub fn propagate_adaptive(
    gen: &AssembledGenerator,
    rho0: &DensityMatrix,
    t_grid: &[f64],
    opts: &AdaptiveOptions,
) -> Result<TrajectoryRecord> {
    check_grid(t_grid)?;
    check_state(gen, rho0)?;
    let n = gen.dim();
    let y0 = DVector::from_column_slice(rho0.matrix().as_slice());
    let ys = adaptive::integrate(gen.superop.matrix(), &y0, t_grid, n, opts)?;
    let states = ys.iter().map(|y| CMatrix::from_column_slice(n, n, y.as_slice())).collect();
    Ok(TrajectoryRecord::from_states(t_grid.to_vec(), states))
}

/// Exponential propagation with the adaptive integrator run alongside as a
/// cross-check; the discrepancy is recorded, not enforced.
pub fn propagate(gen: &AssembledGenerator, rho0: &DensityMatrix, t_grid: &[f64]) -> Result<TrajectoryRecord> {
    let mut record = propagate_exponential(gen, rho0, t_grid)?;
    let check = propagate_adaptive(gen, rho0, t_grid, &AdaptiveOptions::default())?;
    let diff = record
        .states
        .iter()
        .zip(&check.states)
        .fold(0.0f64, |m, (a, b)| m.max(max_abs(&(a - b))));
    record.integrator_discrepancy = Some(diff);
    Ok(record)
}

/// Classical rate matrix acting on populations: `ṗ = R p`.
pub fn population_rate_matrix(rates: &RateTensor) -> DMatrix<f64> {
    let n = rates.dim();
    let mut r = DMatrix::zeros(n, n);
    for a0 in 0..n {
        let mut loss = 0.0;
        for a in 0..n {
            if a != a0 {
                let m = rates.get(a, a, a0, a0).re;
                r[(a, a0)] = m;
                loss += m;
            }
        }
        r[(a0, a0)] = -loss;
    }
    r
}

/// Normalized null vector of `R`.
pub fn stationary_populations(r: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = r.nrows();
    let mut a = r.clone();
    a.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    a.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidInput("rate matrix has no unique stationary state".into()))
}

/// Oscillation frequency `ω` of `ρ_αβ ∝ e^{−iωt}` read off the generator:
/// `ω = Ẽ_α − Ẽ_β − Im M_{αβ}^{αβ}`.
pub fn coherence_phase_rate(gen: &AssembledGenerator, alpha: usize, beta: usize) -> Result<f64> {
    let n = gen.dim();
    if alpha == beta || alpha >= n || beta >= n {
        return Err(Error::InvalidInput(format!("coherence needs two distinct channels, got ({alpha}, {beta})")));
    }
    let k = alpha + beta * n;
    Ok(-gen.superop.matrix()[(k, k)].im)
}

/// Decay rate of `|ρ_αβ|` read off the generator.
pub fn coherence_decay_rate(gen: &AssembledGenerator, alpha: usize, beta: usize) -> Result<f64> {
    let n = gen.dim();
    if alpha == beta || alpha >= n || beta >= n {
        return Err(Error::InvalidInput(format!("coherence needs two distinct channels, got ({alpha}, {beta})")));
    }
    let k = alpha + beta * n;
    Ok(-gen.superop.matrix()[(k, k)].re)
}

/// `Ẽ_α − Ẽ_β`.
pub fn shifted_bohr_frequency(gen: &AssembledGenerator, alpha: usize, beta: usize) -> f64 {
    gen.shifted_energies[alpha] - gen.shifted_energies[beta]
}

fn coherence_series(record: &TrajectoryRecord, alpha: usize, beta: usize) -> Result<Vec<Complex64>> {
    let z = record.entry(alpha, beta);
    let scale = record.states.iter().fold(0.0f64, |m, r| m.max(max_abs(r)));
    if z.len() < 2 || z.iter().any(|c| c.norm() <= 1e-14 * scale) {
        return Err(Error::VanishingCoherence { alpha, beta });
    }
    Ok(z)
}

fn least_squares_slope(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() as f64;
    let (mt, my) = (t.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - mt) * (b - my)).sum();
    let sxx: f64 = t.iter().map(|a| (a - mt).powi(2)).sum();
    sxy / sxx
}

/// Least-squares frequency `ω` of the unwrapped phase of `ρ_αβ(t) ∝ e^{−iωt}`.
pub fn fit_phase_rate(record: &TrajectoryRecord, alpha: usize, beta: usize) -> Result<f64> {
    let z = coherence_series(record, alpha, beta)?;
    let mut phase = Vec::with_capacity(z.len());
    let mut acc = z[0].arg();
    phase.push(acc);
    for w in z.windows(2) {
        acc += (w[1] / w[0]).arg();
        phase.push(acc);
    }
    Ok(-least_squares_slope(&record.times, &phase))
}

/// Least-squares decay rate of `ln |ρ_αβ(t)|`.
pub fn fit_decay_rate(record: &TrajectoryRecord, alpha: usize, beta: usize) -> Result<f64> {
    let z = coherence_series(record, alpha, beta)?;
    let logs: Vec<f64> = z.iter().map(|c| c.norm().ln()).collect();
    Ok(-least_squares_slope(&record.times, &logs))
}
