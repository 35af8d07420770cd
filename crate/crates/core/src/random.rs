//! Random test ensembles: Haar unitaries, Ginibre and Wishart matrices,
//! collision models and reactance-matrix models.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::monitoring::CollisionModel;
use crate::operator::{CompositeSpace, Operator};
use crate::scattering::{ChannelSet, KMatrixModel};

fn normal_complex<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Ginibre matrix with i.i.d. standard complex normal entries.
pub fn random_operator<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Operator {
    Operator::from_fn(dim, |_, _| normal_complex(rng))
}

pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Operator {
    let a = random_operator(rng, dim);
    a.add(&a.dagger()).scale(Complex64::new(0.5, 0.0))
}

/// Wishart-type `A†A`.
pub fn random_psd<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Operator {
    let a = random_operator(rng, dim);
    a.dagger().mul(&a)
}

pub fn random_density_matrix<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Operator {
    let g = random_psd(rng, dim);
    let tr = g.trace().re;
    g.scale(Complex64::new(1.0 / tr, 0.0))
}

pub fn random_pure_state<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<Complex64> {
    let v = DVector::from_fn(dim, |_, _| normal_complex(rng));
    let n = v.norm();
    v / Complex64::new(n, 0.0)
}

/// Haar-distributed unitary from the phase-corrected QR of a Ginibre matrix.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Operator {
    let qr = random_operator(rng, dim).into_matrix().qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        q.column_mut(j).iter_mut().for_each(|z| *z *= phase);
    }
    Operator::new(q).expect("square")
}

/// Generic collision model: Haar `S`, Wishart `Γ` scaled to `‖Γ‖ = rate_scale`,
/// random mixed environment state.
pub fn random_collision_model<R: Rng + ?Sized>(
    rng: &mut R,
    dim_sys: usize,
    dim_env: usize,
    rate_scale: f64,
) -> CollisionModel {
    let space = CompositeSpace::new(dim_sys, dim_env).expect("positive dims");
    let n = space.dim();
    let s = random_unitary(rng, n);
    let g = random_psd(rng, n);
    let g = g.scale(Complex64::new(rate_scale / g.op_norm(), 0.0));
    let rho_env = random_density_matrix(rng, dim_env);
    CollisionModel::new(space, s, g, rho_env).expect("random model is valid")
}

/// Collision model with a state-independent rate `Γ = γ I`.
pub fn random_scalar_rate_model<R: Rng + ?Sized>(
    rng: &mut R,
    dim_sys: usize,
    dim_env: usize,
    rate: f64,
) -> CollisionModel {
    let space = CompositeSpace::new(dim_sys, dim_env).expect("positive dims");
    let n = space.dim();
    let s = random_unitary(rng, n);
    let g = Operator::identity(n).scale(Complex64::new(rate, 0.0));
    let rho_env = random_density_matrix(rng, dim_env);
    CollisionModel::new(space, s, g, rho_env).expect("random model is valid")
}

/// Reactance-length matrix with entries uniform in `[-scale, scale]`, symmetrized.
pub fn random_reactance<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let x = scale * (2.0 * rng.random::<f64>() - 1.0);
            a[(i, j)] = x;
            a[(j, i)] = x;
        }
    }
    a
}

/// Random K-matrix model over the given channel energies.
pub fn random_kmatrix_model<R: Rng + ?Sized>(rng: &mut R, energies: &[f64], mass: f64, scale: f64) -> KMatrixModel {
    let labels = (0..energies.len()).map(|i| format!("c{i}")).collect();
    let channels = ChannelSet::new(labels, energies.to_vec()).expect("valid channels");
    KMatrixModel::new(channels, random_reactance(rng, energies.len(), scale), mass).expect("symmetric")
}

