//! Quantum-jump unravelling of the assembled master equation.
//!
//! The coefficient matrix `C` is diagonalized into jump operators
//! `L_k = sqrt(λ_k) Σ u_k[α, α0] |α⟩⟨α0|`. Pure states evolve under
//! `H_eff = H − (i/2) Σ L_k†L_k` until the survival probability falls below
//! a uniform random threshold; the jump time is then located by bisection and
//! a channel drawn with probability `∝ ‖L_k ψ‖²`.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{AssembledGenerator, DensityMatrix, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::operator::{hermitian_part, max_abs, CMatrix, Operator, Superoperator};
use crate::rng::stream_rng;
use crate::scattering::ChannelSet;

/// Eigenvalues of the coefficient matrix below this fraction of its norm are dropped.
pub const EIGENVALUE_CUTOFF: f64 = 1e-12;
/// Bisection target for the survival probability at a jump.
pub const JUMP_TIME_TOLERANCE: f64 = 1e-10;
const TRAJECTORIES_PER_CHUNK: usize = 64;

#[derive(Clone, Debug)]
pub struct JumpOperatorSet {
    channels: ChannelSet,
    operators: Vec<CMatrix>,
    hamiltonian: CMatrix,
    h_eff: CMatrix,
}

/// Jump operators and effective Hamiltonian of an assembled generator.
pub fn lindblad_operators(gen: &AssembledGenerator) -> Result<JumpOperatorSet> {
    let rates = gen.rates();
    rates.validate()?;
    let n = gen.dim();
    let c = Operator::from_matrix_unchecked(hermitian_part(&rates.coefficient_matrix()));
    let eig = c.matrix().clone().symmetric_eigen();
    let norm = eig.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut operators = Vec::new();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= EIGENVALUE_CUTOFF * norm {
            continue;
        }
        let u = eig.eigenvectors.column(k);
        operators.push(CMatrix::from_column_slice(n, n, u.as_slice()) * Complex64::new(lambda.sqrt(), 0.0));
    }
    let hamiltonian = CMatrix::from_diagonal(&DVector::from_iterator(
        n,
        gen.shifted_energies().iter().map(|&e| Complex64::new(e, 0.0)),
    ));
    Ok(JumpOperatorSet::new(gen.channels().clone(), operators, hamiltonian))
}

impl JumpOperatorSet {
    pub fn new(channels: ChannelSet, operators: Vec<CMatrix>, hamiltonian: CMatrix) -> Self {
        let n = channels.len();
        let mut loss = CMatrix::zeros(n, n);
        for l in &operators {
            loss += l.adjoint() * l;
        }
        let h_eff = &hamiltonian - loss * Complex64::new(0.0, 0.5);
        Self { channels, operators, hamiltonian, h_eff }
    }

    pub fn channels(&self) -> &ChannelSet {
        &self.channels
    }

    pub fn operators(&self) -> &[CMatrix] {
        &self.operators
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.hamiltonian
    }

    pub fn effective_hamiltonian(&self) -> &CMatrix {
        &self.h_eff
    }

    /// Lindblad superoperator rebuilt from the jump operators.
    pub fn superoperator(&self) -> Superoperator {
        let n = self.channels.len();
        let id = CMatrix::identity(n, n);
        let i = Complex64::new(0.0, 1.0);
        let mut total = Superoperator::sandwich(&(&self.hamiltonian * -i), &id)
            .add(&Superoperator::sandwich(&id, &(&self.hamiltonian * i)));
        let mut loss = CMatrix::zeros(n, n);
        for l in &self.operators {
            total = total.add(&Superoperator::sandwich(l, &l.adjoint()));
            loss += l.adjoint() * l;
        }
        let half = loss * Complex64::new(-0.5, 0.0);
        total.add(&Superoperator::sandwich(&half, &id)).add(&Superoperator::sandwich(&id, &half))
    }

    /// `Σ_k L_k ρ L_k†`.
    pub fn gain(&self, rho: &CMatrix) -> CMatrix {
        let n = self.channels.len();
        self.operators.iter().fold(CMatrix::zeros(n, n), |acc, l| acc + l * rho * l.adjoint())
    }

    fn no_jump_propagator(&self, dt: f64) -> CMatrix {
        (&self.h_eff * Complex64::new(0.0, -dt)).exp()
    }
}

/// Normalized conditional states at the grid times and the jumps that occurred.
#[derive(Clone, Debug, PartialEq)]
pub struct PureTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<Complex64>>,
    /// `(time, operator index)` of every jump.
    pub jumps: Vec<(f64, usize)>,
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() || t_grid.iter().any(|t| !t.is_finite()) || t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("time grid must be non-empty, finite and strictly increasing".into()));
    }
    Ok(())
}

fn normalize(v: DVector<Complex64>) -> DVector<Complex64> {
    let n = v.norm();
    v / Complex64::new(n, 0.0)
}

struct Stepper<'a> {
    ops: &'a JumpOperatorSet,
    cache: Option<(f64, CMatrix)>,
}

impl Stepper<'_> {
    fn propagator(&mut self, dt: f64) -> CMatrix {
        if let Some((h, u)) = &self.cache {
            if *h == dt {
                return u.clone();
            }
        }
        let u = self.ops.no_jump_propagator(dt);
        self.cache = Some((dt, u.clone()));
        u
    }
}

fn run_trajectory<R: Rng>(ops: &JumpOperatorSet, psi0: &DVector<Complex64>, t_grid: &[f64], rng: &mut R) -> PureTrajectory {
    let mut stepper = Stepper { ops, cache: None };
    let mut psi = psi0.clone();
    let mut survival = 1.0;
    let mut threshold: f64 = rng.random();
    let mut t = t_grid[0];
    let mut states = vec![psi.clone()];
    let mut jumps = Vec::new();
    for &target in &t_grid[1..] {
        while t < target {
            let h = target - t;
            let phi = stepper.propagator(h) * &psi;
            let q = survival * phi.norm_squared();
            if q > threshold {
                psi = normalize(phi);
                survival = q;
                t = target;
                continue;
            }
            // survival(τ) decreases monotonically; bracket the crossing
            let (mut lo, mut hi) = (0.0, h);
            let mut tau = h;
            let mut at = phi;
            for _ in 0..200 {
                tau = 0.5 * (lo + hi);
                at = ops.no_jump_propagator(tau) * &psi;
                let q = survival * at.norm_squared();
                if (q - threshold).abs() <= JUMP_TIME_TOLERANCE {
                    break;
                }
                if q > threshold {
                    lo = tau;
                } else {
                    hi = tau;
                }
            }
            let before = normalize(at);
            let weights: Vec<f64> = ops.operators.iter().map(|l| (l * &before).norm_squared()).collect();
            let total: f64 = weights.iter().sum();
            assert!(total > 0.0, "jump triggered with vanishing jump rates");
            let mut pick = rng.random::<f64>() * total;
            let mut k = weights.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if pick < *w {
                    k = i;
                    break;
                }
                pick -= w;
            }
            psi = normalize(&ops.operators[k] * &before);
            t += tau;
            jumps.push((t, k));
            survival = 1.0;
            threshold = rng.random();
        }
        states.push(psi.clone());
    }
    PureTrajectory { times: t_grid.to_vec(), states, jumps }
}

fn check_psi(ops: &JumpOperatorSet, psi0: &DVector<Complex64>) -> Result<()> {
    if psi0.len() != ops.channels.len() {
        return Err(Error::DimensionMismatch { expected: ops.channels.len(), found: psi0.len() });
    }
    if (psi0.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidInput(format!("initial state has norm {}, expected 1", psi0.norm())));
    }
    Ok(())
}

/// One jump trajectory from a fixed seed.
pub fn simulate_trajectory(ops: &JumpOperatorSet, psi0: &DVector<Complex64>, t_grid: &[f64], seed: u64) -> Result<PureTrajectory> {
    check_grid(t_grid)?;
    check_psi(ops, psi0)?;
    Ok(run_trajectory(ops, psi0, t_grid, &mut ChaCha8Rng::seed_from_u64(seed)))
}

#[derive(Clone, Debug)]
pub enum InitialState {
    Pure(DVector<Complex64>),
    Mixed(DensityMatrix),
}

#[derive(Clone, Debug)]
pub struct EnsembleConfig {
    pub n_traj: usize,
    pub seed: u64,
    pub times: Vec<f64>,
}

/// Ensemble mean of `|ψ⟩⟨ψ|` with per-entry standard errors.
#[derive(Clone, Debug)]
pub struct EnsembleRecord {
    pub record: TrajectoryRecord,
    /// Standard error of the real part in `re`, of the imaginary part in `im`.
    pub stderr: Vec<CMatrix>,
    pub n_traj: usize,
}

impl EnsembleRecord {
    /// Whether every entry of `states` lies within `k` standard errors of the
    /// ensemble mean, with an absolute floor for entries without spread.
    pub fn agrees_with(&self, states: &[CMatrix], k: f64, floor: f64) -> bool {
        self.worst_deviation(states, floor) <= k
    }

    /// Largest component-wise deviation from `states` in standard errors,
    /// after discounting an absolute `floor`.
    pub fn worst_deviation(&self, states: &[CMatrix], floor: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for ((mean, err), x) in self.record.states.iter().zip(&self.stderr).zip(states) {
            for ((m, e), y) in mean.iter().zip(err.iter()).zip(x.iter()) {
                let dre = (m.re - y.re).abs();
                let dim = (m.im - y.im).abs();
                if dre > floor {
                    worst = worst.max(if e.re > 0.0 { (dre - floor) / e.re } else { f64::INFINITY });
                }
                if dim > floor {
                    worst = worst.max(if e.im > 0.0 { (dim - floor) / e.im } else { f64::INFINITY });
                }
            }
        }
        worst
    }
}

struct Moments {
    sum: Vec<CMatrix>,
    sq: Vec<CMatrix>,
}

impl Moments {
    fn new(n: usize, len: usize) -> Self {
        Self { sum: vec![CMatrix::zeros(n, n); len], sq: vec![CMatrix::zeros(n, n); len] }
    }

    fn add(&mut self, states: &[DVector<Complex64>]) {
        for (k, psi) in states.iter().enumerate() {
            let rho = psi * psi.adjoint();
            for (s, (q, z)) in self.sum[k].iter_mut().zip(self.sq[k].iter_mut().zip(rho.iter())) {
                *s += z;
                *q += Complex64::new(z.re * z.re, z.im * z.im);
            }
        }
    }

    fn merge(&mut self, other: &Moments) {
        for k in 0..self.sum.len() {
            self.sum[k] += &other.sum[k];
            self.sq[k] += &other.sq[k];
        }
    }
}

/// Averages `n_traj` trajectories. Trajectory `i` draws from the random
/// stream `(seed, i)`, and trajectories are accumulated in fixed chunks that
/// are reduced in order, so the result is bitwise independent of the number
/// of threads.
pub fn ensemble_average(ops: &JumpOperatorSet, initial: &InitialState, cfg: &EnsembleConfig) -> Result<EnsembleRecord> {
    check_grid(&cfg.times)?;
    if cfg.n_traj == 0 {
        return Err(Error::InvalidInput("n_traj must be at least 1".into()));
    }
    let n = ops.channels.len();
    let mixture: Vec<(f64, DVector<Complex64>)> = match initial {
        InitialState::Pure(psi) => {
            check_psi(ops, psi)?;
            vec![(1.0, psi.clone())]
        }
        InitialState::Mixed(rho) => {
            if rho.channels() != &ops.channels {
                return Err(Error::InvalidInput("initial state belongs to a different channel set".into()));
            }
            let eig = rho.matrix().clone().symmetric_eigen();
            (0..n)
                .filter(|&k| eig.eigenvalues[k] > 0.0)
                .map(|k| (eig.eigenvalues[k], normalize(eig.eigenvectors.column(k).into_owned())))
                .collect()
        }
    };
    let weight_total: f64 = mixture.iter().map(|m| m.0).sum();
    let len = cfg.times.len();
    let n_chunks = cfg.n_traj.div_ceil(TRAJECTORIES_PER_CHUNK);
    let chunks: Vec<Moments> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut moments = Moments::new(n, len);
            let end = ((c + 1) * TRAJECTORIES_PER_CHUNK).min(cfg.n_traj);
            for i in c * TRAJECTORIES_PER_CHUNK..end {
                let mut rng = stream_rng(cfg.seed, i as u64);
                let psi0 = if mixture.len() == 1 {
                    &mixture[0].1
                } else {
                    let mut pick = rng.random::<f64>() * weight_total;
                    let mut chosen = &mixture[mixture.len() - 1].1;
                    for (w, v) in &mixture {
                        if pick < *w {
                            chosen = v;
                            break;
                        }
                        pick -= w;
                    }
                    chosen
                };
                moments.add(&run_trajectory(ops, psi0, &cfg.times, &mut rng).states);
            }
            moments
        })
        .collect();
    let mut total = Moments::new(n, len);
    for c in &chunks {
        total.merge(c);
    }
    let nt = cfg.n_traj as f64;
    let mut means = Vec::with_capacity(len);
    let mut stderr = Vec::with_capacity(len);
    for k in 0..len {
        let mean = &total.sum[k] / Complex64::new(nt, 0.0);
        let err = CMatrix::from_fn(n, n, |i, j| {
            let m = mean[(i, j)];
            let q = total.sq[k][(i, j)];
            let se = |sq: f64, mu: f64| {
                if cfg.n_traj < 2 {
                    return 0.0;
                }
                ((sq / nt - mu * mu).max(0.0) * nt / (nt - 1.0) / nt).sqrt()
            };
            Complex64::new(se(q.re, m.re), se(q.im, m.im))
        });
        means.push(mean);
        stderr.push(err);
    }
    let record = TrajectoryRecord::from_states(cfg.times.clone(), means);
    Ok(EnsembleRecord { record, stderr, n_traj: cfg.n_traj })
}

/// Largest entrywise mismatch between `Σ_k L_k ρ L_k†` and the gain term of
/// the generator on `ρ`.
pub fn gain_reconstruction_residual(ops: &JumpOperatorSet, gen: &AssembledGenerator, rho: &CMatrix) -> f64 {
    let rates = gen.rates();
    let n = gen.dim();
    let direct = CMatrix::from_fn(n, n, |a, b| {
        let mut acc = Complex64::new(0.0, 0.0);
        for a0 in 0..n {
            for b0 in 0..n {
                acc += rates.get(a, b, a0, b0) * rho[(a0, b0)];
            }
        }
        acc
    });
    max_abs(&(ops.gain(rho) - direct))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{assemble, propagate, uniform_grid};
    use crate::random::{random_hermitian, random_kmatrix_model, random_pure_state};
    use crate::scattering::{KMatrixModel, ScatteringModel};
    use crate::thermal::{energy_shifts, rate_tensor, EnergyShifts, GasParameters, QuadratureConfig, RateTensor};
    use nalgebra::DMatrix;

    fn gas() -> GasParameters {
        GasParameters::new(0.4, 1.0, 1.0).unwrap()
    }

    fn build(model: &KMatrixModel) -> AssembledGenerator {
        let cfg = QuadratureConfig::default();
        let rates = rate_tensor(model, &gas(), &cfg).unwrap();
        let shifts = energy_shifts(model, &gas(), &cfg).unwrap();
        assemble(model.channels(), &shifts, &rates).unwrap()
    }

    fn elastic() -> KMatrixModel {
        let ch = ChannelSet::new(vec!["g".into(), "e".into()], vec![0.0, 0.6]).unwrap();
        KMatrixModel::new(ch, DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.3])), 1.0).unwrap()
    }

    #[test]
    fn zero_rates_give_no_operators() {
        let ch = ChannelSet::new(vec!["a".into(), "b".into()], vec![0.0, 1.0]).unwrap();
        let gen = assemble(&ch, &EnergyShifts::zero(2), &RateTensor::zero(ch.clone(), 1e-9)).unwrap();
        let ops = lindblad_operators(&gen).unwrap();
        assert!(ops.operators().is_empty());
        // pure unitary evolution under H
        let psi0 = DVector::from_element(2, Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0));
        let traj = simulate_trajectory(&ops, &psi0, &[0.0, 0.5, 2.0], 1).unwrap();
        assert!(traj.jumps.is_empty());
        for (t, psi) in traj.times.iter().zip(&traj.states) {
            assert!((psi[0] - psi0[0]).norm() < 1e-14);
            assert!((psi[1] - psi0[1] * Complex64::new(0.0, -t).exp()).norm() < 1e-13);
        }
    }

    #[test]
    fn elastic_operators_are_diagonal() {
        let ops = lindblad_operators(&build(&elastic())).unwrap();
        assert!(!ops.operators().is_empty());
        for l in ops.operators() {
            assert!(l[(0, 1)].norm() < 1e-14 && l[(1, 0)].norm() < 1e-14);
        }
    }

    #[test]
    fn reconstructs_generator() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gen = build(&random_kmatrix_model(&mut rng, &[0.0, 0.3, 0.8], 1.0, 1.0));
        let ops = lindblad_operators(&gen).unwrap();
        assert!(ops.operators().len() <= 9);
        assert!(ops.superoperator().max_abs_diff(gen.superoperator()) < 1e-10);
        for _ in 0..10 {
            let h = random_hermitian(&mut rng, 3).into_matrix();
            assert!(gain_reconstruction_residual(&ops, &gen, &h) < 1e-10);
        }
    }

    #[test]
    fn elastic_basis_state_stays_put() {
        let ops = lindblad_operators(&build(&elastic())).unwrap();
        let mut psi0 = DVector::zeros(2);
        psi0[1] = Complex64::new(1.0, 0.0);
        let traj = simulate_trajectory(&ops, &psi0, &uniform_grid(20.0, 50).unwrap(), 3).unwrap();
        assert!(!traj.jumps.is_empty());
        for psi in &traj.states {
            assert!(psi[0].norm() < 1e-12);
            assert!((psi[1].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn trajectories_are_reproducible_and_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = random_kmatrix_model(&mut rng, &[0.0, 0.3, 0.8], 1.0, 1.0);
        let ops = lindblad_operators(&build(&model)).unwrap();
        let psi0 = random_pure_state(&mut rng, 3);
        let grid = uniform_grid(10.0, 25).unwrap();
        let a = simulate_trajectory(&ops, &psi0, &grid, 17).unwrap();
        let b = simulate_trajectory(&ops, &psi0, &grid, 17).unwrap();
        assert_eq!(a, b);
        assert!(a.states.iter().all(|p| (p.norm() - 1.0).abs() < 1e-10));
    }

    #[test]
    fn single_trajectory_without_dissipation_is_a_projector() {
        let ch = ChannelSet::new(vec!["a".into(), "b".into()], vec![0.0, 1.0]).unwrap();
        let gen = assemble(&ch, &EnergyShifts::zero(2), &RateTensor::zero(ch.clone(), 1e-9)).unwrap();
        let ops = lindblad_operators(&gen).unwrap();
        let psi0 = DVector::from_element(2, Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0));
        let cfg = EnsembleConfig { n_traj: 1, seed: 0, times: vec![0.0, 1.0] };
        let ens = ensemble_average(&ops, &InitialState::Pure(psi0.clone()), &cfg).unwrap();
        let rho0 = DensityMatrix::pure(ch, &psi0).unwrap();
        let exact = propagate(&gen, &rho0, &cfg.times).unwrap();
        for (a, b) in ens.record.states.iter().zip(&exact.states) {
            assert!(max_abs(&(a - b)) < 1e-13);
        }
        assert!(ens.stderr.iter().all(|e| max_abs(e) == 0.0));
    }

    #[test]
    fn ensemble_matches_master_equation_and_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = random_kmatrix_model(&mut rng, &[0.0, 0.4], 1.0, 1.0);
        let gen = build(&model);
        let ops = lindblad_operators(&gen).unwrap();
        let rho0 = DensityMatrix::new(model.channels().clone(), crate::random::random_density_matrix(&mut rng, 2).into_matrix()).unwrap();
        let times = uniform_grid(4.0, 8).unwrap();
        let exact = propagate(&gen, &rho0, &times).unwrap();
        let small = EnsembleConfig { n_traj: 2000, seed: 11, times: times.clone() };
        let large = EnsembleConfig { n_traj: 4000, ..small.clone() };
        let a = ensemble_average(&ops, &InitialState::Mixed(rho0.clone()), &small).unwrap();
        let b = ensemble_average(&ops, &InitialState::Mixed(rho0), &large).unwrap();
        assert!(b.agrees_with(&exact.states, 4.0, 1e-12));
        let ratio = a.stderr[4][(0, 1)].re / b.stderr[4][(0, 1)].re;
        assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = random_kmatrix_model(&mut rng, &[0.0, 0.4], 1.0, 1.0);
        let ops = lindblad_operators(&build(&model)).unwrap();
        let psi0 = random_pure_state(&mut rng, 2);
        let cfg = EnsembleConfig { n_traj: 300, seed: 99, times: uniform_grid(3.0, 6).unwrap() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| ensemble_average(&ops, &InitialState::Pure(psi0.clone()), &cfg).unwrap())
        };
        let (one, four) = (run(1), run(4));
        assert_eq!(one.record.states, four.record.states);
        assert_eq!(one.stderr, four.stderr);
    }
}
