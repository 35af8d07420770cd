//! Collision monitoring on finite-dimensional system ⊗ environment models.
//!
//! A collision model is the triple `(S, Γ, ρ_env)`: the two-body scattering
//! operator, the positive rate operator and the single-particle environment
//! state. Writing `S = I + iT`, the generator acting on system states is
//!
//! ```text
//! 𝓛ρ = (i/2) Tr_env[T + T†, Γ^½ ϱ Γ^½] + Tr_env(T Γ^½ ϱ Γ^½ T†)
//!      − ½ Tr_env(Γ^½ T†T Γ^½ ϱ) − ½ Tr_env(ϱ Γ^½ T†T Γ^½),   ϱ = ρ ⊗ ρ_env.
//! ```
//!
//! The free system Hamiltonian is not part of this module.
//!
//! Any restriction of `Γ` to incoming two-body wave packets has to be encoded
//! in `Γ` itself; it is taken as given.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operator::{
    choi_negativity, max_abs, partial_trace_env, positive_sqrt, tensor_product, CMatrix, CompositeSpace, Operator,
    Superoperator, DEFAULT_TOLERANCE, I, ONE,
};

/// Trace tolerance for the environment state.
pub const ENV_TRACE_TOLERANCE: f64 = 1e-12;

/// Probe times, in units of `1/‖Γ‖`, for the semigroup positivity diagnostic.
pub const SEMIGROUP_PROBE_TIMES: [f64; 3] = [1e-3, 1.0, 10.0];

#[derive(Clone, Debug)]
pub struct CollisionModel {
    space: CompositeSpace,
    s: Operator,
    gamma: Operator,
    rho_env: Operator,
    gamma_sqrt: Operator,
    gamma_norm: f64,
}

impl CollisionModel {
    pub fn new(space: CompositeSpace, s: Operator, gamma: Operator, rho_env: Operator) -> Result<Self> {
        for op in [&s, &gamma] {
            if op.dim() != space.dim() {
                return Err(Error::DimensionMismatch { expected: space.dim(), found: op.dim() });
            }
        }
        if rho_env.dim() != space.dim_env {
            return Err(Error::DimensionMismatch { expected: space.dim_env, found: rho_env.dim() });
        }
        if !s.is_unitary(DEFAULT_TOLERANCE) {
            return Err(Error::NotUnitary { residual: t_unitarity_residual(&s) });
        }
        let gamma_sqrt = positive_sqrt(&gamma)?;
        if !rho_env.is_positive_semidefinite(DEFAULT_TOLERANCE) {
            return Err(Error::NotPositive { min_eigenvalue: rho_env.min_eigenvalue() });
        }
        let trace = rho_env.trace();
        if (trace - ONE).norm() > ENV_TRACE_TOLERANCE {
            return Err(Error::NotNormalized { trace: trace.re });
        }
        let gamma_norm = gamma.hermitian_eigenvalues().last().copied().unwrap_or(0.0).max(0.0);
        Ok(Self { space, s, gamma, rho_env, gamma_sqrt, gamma_norm })
    }

    pub fn space(&self) -> CompositeSpace {
        self.space
    }

    pub fn s(&self) -> &Operator {
        &self.s
    }

    pub fn gamma(&self) -> &Operator {
        &self.gamma
    }

    pub fn gamma_sqrt(&self) -> &Operator {
        &self.gamma_sqrt
    }

    pub fn rho_env(&self) -> &Operator {
        &self.rho_env
    }

    /// `‖Γ‖_op`.
    pub fn gamma_norm(&self) -> f64 {
        self.gamma_norm
    }

    /// `T = −i(S − I)`.
    pub fn t_matrix(&self) -> CMatrix {
        t_from_s(self.s.matrix())
    }

    fn check_step(&self, dt: f64) -> Result<()> {
        if !(dt >= 0.0) || !dt.is_finite() {
            return Err(Error::InvalidInput(format!("time step must be finite and nonnegative, got {dt}")));
        }
        if dt * self.gamma_norm > 1.0 + 1e-12 {
            return Err(Error::InadmissibleTimeStep { dt, bound: 1.0 / self.gamma_norm });
        }
        Ok(())
    }

    fn check_total(&self, rho_total: &Operator) -> Result<()> {
        if rho_total.dim() != self.space.dim() {
            return Err(Error::DimensionMismatch { expected: self.space.dim(), found: rho_total.dim() });
        }
        Ok(())
    }

    fn product_state(&self, rho: &CMatrix) -> CMatrix {
        rho.kronecker(self.rho_env.matrix())
    }
}

/// Generator of the traced collision dynamics plus its diagnostics.
#[derive(Clone, Debug)]
pub struct GeneratorReport {
    pub generator: Superoperator,
    pub t_unitarity_residual: f64,
    /// Worst Choi negativity of `exp(t𝓛)` over the probe times.
    pub semigroup_cptp_residual: f64,
}

fn t_from_s(s: &CMatrix) -> CMatrix {
    let n = s.nrows();
    (s - CMatrix::identity(n, n)) * (-I)
}

/// `‖i(T − T†) + T†T‖_max` with `T = −i(S − I)`; vanishes iff `S` is unitary.
pub fn t_unitarity_residual(s: &Operator) -> f64 {
    let t = t_from_s(s.matrix());
    let td = t.adjoint();
    max_abs(&((&t - &td) * I + &td * &t))
}

/// Probability `dt · tr(Γ (ρ ⊗ ρ_env))` that a collision happens within `dt`.
pub fn collision_probability(rho: &Operator, model: &CollisionModel, dt: f64) -> Result<f64> {
    model.check_step(dt)?;
    if rho.dim() != model.space.dim_sys {
        return Err(Error::DimensionMismatch { expected: model.space.dim_sys, found: rho.dim() });
    }
    let total = model.product_state(rho.matrix());
    Ok(dt * (model.gamma.matrix() * total).trace().re)
}

/// Unnormalized post-measurement states `(collided, not_collided)`:
/// `dt Γ^½ ϱ Γ^½` and `ϱ − dt Γ^½ ϱ Γ^½`.
pub fn measurement_maps(rho_total: &Operator, model: &CollisionModel, dt: f64) -> Result<(Operator, Operator)> {
    model.check_step(dt)?;
    model.check_total(rho_total)?;
    let g = model.gamma_sqrt.matrix();
    let collided = g * rho_total.matrix() * g * Complex64::new(dt, 0.0);
    let not_collided = rho_total.matrix() - &collided;
    Ok((Operator::from_matrix_unchecked(collided), Operator::from_matrix_unchecked(not_collided)))
}

/// Mixture of the scattered collided branch and the non-collided branch after `dt`:
/// `S Γ^½ ϱ Γ^½ S† dt + ϱ − Γ^½ ϱ Γ^½ dt`.
pub fn finite_dt_map(rho_total: &Operator, model: &CollisionModel, dt: f64) -> Result<Operator> {
    let (collided, not_collided) = measurement_maps(rho_total, model, dt)?;
    let s = model.s.matrix();
    Ok(Operator::from_matrix_unchecked(s * collided.matrix() * s.adjoint() + not_collided.matrix()))
}

/// [`finite_dt_map`] as a superoperator on the composite space.
pub fn finite_dt_superoperator(model: &CollisionModel, dt: f64) -> Result<Superoperator> {
    model.check_step(dt)?;
    let g = model.gamma_sqrt.matrix();
    let s = model.s.matrix();
    let sg = s * g;
    let dt = Complex64::new(dt, 0.0);
    Ok(Superoperator::from_map(model.space.dim(), |x| {
        let collided = g * x * g;
        &sg * x * sg.adjoint() * dt + x - collided * dt
    }))
}

/// System-level difference quotient `(Tr_env F_dt(ρ ⊗ ρ_env) − ρ) / dt`.
pub fn difference_quotient(model: &CollisionModel, dt: f64) -> Result<Superoperator> {
    model.check_step(dt)?;
    if dt == 0.0 {
        return Err(Error::InvalidInput("difference quotient needs dt > 0".into()));
    }
    Ok(Superoperator::from_map(model.space.dim_sys, |x| {
        let rho_total = Operator::from_matrix_unchecked(model.product_state(x));
        let stepped = finite_dt_map(&rho_total, model, dt).expect("step checked above");
        let reduced = partial_trace_env(&stepped, model.space).expect("composite dimension");
        (reduced.into_matrix() - x) / Complex64::new(dt, 0.0)
    }))
}

/// Builds `𝓛` from the four traced terms and evaluates its diagnostics.
pub fn build_generator(model: &CollisionModel) -> Result<GeneratorReport> {
    let t_res = t_unitarity_residual(&model.s);
    if t_res > DEFAULT_TOLERANCE {
        return Err(Error::NotUnitary { residual: t_res });
    }
    let generator = generator_superoperator(model);
    let scale = if model.gamma_norm > 0.0 { 1.0 / model.gamma_norm } else { 1.0 };
    let semigroup_cptp_residual = SEMIGROUP_PROBE_TIMES
        .iter()
        .map(|&t| choi_negativity(&generator.exp(t * scale)))
        .fold(0.0, f64::max);
    Ok(GeneratorReport { generator, t_unitarity_residual: t_res, semigroup_cptp_residual })
}

fn generator_superoperator(model: &CollisionModel) -> Superoperator {
    let space = model.space;
    let g = model.gamma_sqrt.matrix();
    let t = model.t_matrix();
    let td = t.adjoint();
    let re_t2 = &t + &td;
    let loss = g * &td * &t * g;
    let half = Complex64::new(0.5, 0.0);
    Superoperator::from_map(space.dim_sys, |x| {
        let rho_total = model.product_state(x);
        let weighted = g * &rho_total * g;
        let shift = (&re_t2 * &weighted - &weighted * &re_t2) * (I * half);
        let gain = &t * &weighted * &td;
        let decay = (&loss * &rho_total + &rho_total * &loss) * half;
        let total = Operator::from_matrix_unchecked(shift + gain - decay);
        partial_trace_env(&total, space).expect("composite dimension").into_matrix()
    })
}

/// Convenience: the product state `ρ ⊗ ρ_env`.
pub fn with_environment(rho: &Operator, model: &CollisionModel) -> Operator {
    tensor_product(rho, &model.rho_env)
}
