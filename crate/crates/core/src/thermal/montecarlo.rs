//! Monte Carlo evaluation of the rate tensor as a three-dimensional momentum
//! integral over the Maxwell–Boltzmann distribution.
//!
//! Each sample draws the incoming momentum `p0` from `μ` and an outgoing
//! direction uniformly on the sphere; the energy delta fixes the outgoing
//! speed, leaving the estimator `n v_out 4π f_{αα0}(cosθ) f*_{ββ0}(cosθ)`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{check_mass, chi, outgoing_speed, GasParameters, RateTensor};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::scattering::ScatteringModel;

const CHUNK: usize = 4096;

#[derive(Clone, Debug)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    /// Orthogonal matrix applied to every sampled incoming momentum.
    pub rotation: Option<Matrix3<f64>>,
    pub energy_tolerance: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { samples: 1_000_000, seed: 0, rotation: None, energy_tolerance: 1e-9 }
    }
}

/// Sample mean with separate standard errors for real and imaginary parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub value: Complex64,
    pub stderr_re: f64,
    pub stderr_im: f64,
}

impl McEstimate {
    const ZERO: Self = Self { value: Complex64::new(0.0, 0.0), stderr_re: 0.0, stderr_im: 0.0 };

    /// Whether `x` lies within `k` standard errors in both components, with
    /// an absolute floor for components that have no sampling spread.
    pub fn agrees_with(&self, x: Complex64, k: f64, floor: f64) -> bool {
        (self.value.re - x.re).abs() <= k * self.stderr_re + floor
            && (self.value.im - x.im).abs() <= k * self.stderr_im + floor
    }
}

#[derive(Clone)]
struct Moments {
    sum: Vec<Complex64>,
    sq_re: Vec<f64>,
    sq_im: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self { sum: vec![Complex64::new(0.0, 0.0); len], sq_re: vec![0.0; len], sq_im: vec![0.0; len] }
    }

    fn add(&mut self, k: usize, z: Complex64) {
        self.sum[k] += z;
        self.sq_re[k] += z.re * z.re;
        self.sq_im[k] += z.im * z.im;
    }

    fn merge(&mut self, other: &Moments) {
        for k in 0..self.sum.len() {
            self.sum[k] += other.sum[k];
            self.sq_re[k] += other.sq_re[k];
            self.sq_im[k] += other.sq_im[k];
        }
    }

    fn estimate(&self, k: usize, n: usize) -> McEstimate {
        let nf = n as f64;
        let mean = self.sum[k] / nf;
        let var = |sq: f64, m: f64| ((sq / nf - m * m).max(0.0) * nf / (nf - 1.0).max(1.0) / nf).sqrt();
        McEstimate { value: mean, stderr_re: var(self.sq_re[k], mean.re), stderr_im: var(self.sq_im[k], mean.im) }
    }
}

fn isotropic_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    let z = 2.0 * rng.random::<f64>() - 1.0;
    let phi = 2.0 * PI * rng.random::<f64>();
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

fn sample_tuples<M: ScatteringModel + ?Sized>(
    model: &M,
    gas: &GasParameters,
    cfg: &McConfig,
    tuples: &[[usize; 4]],
) -> Result<Vec<McEstimate>> {
    check_mass(model, gas)?;
    if cfg.samples < 2 {
        return Err(Error::InvalidInput("Monte Carlo needs at least two samples".into()));
    }
    if let Some(r) = &cfg.rotation {
        if (r.transpose() * r - Matrix3::identity()).amax() > 1e-12 {
            return Err(Error::InvalidInput("sampling-frame rotation is not orthogonal".into()));
        }
    }
    let channels = model.channels();
    let n = channels.len();
    let e = channels.energies();
    let m = gas.mass;
    let sigma_p = (m / gas.beta).sqrt();
    let mut needed = vec![false; n];
    for t in tuples {
        needed[t[2]] = true;
        needed[t[3]] = true;
    }
    let n_chunks = cfg.samples.div_ceil(CHUNK);
    let chunks: Vec<Result<Moments>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = stream_rng(cfg.seed, chunk as u64);
            let count = CHUNK.min(cfg.samples - chunk * CHUNK);
            let mut moments = Moments::new(tuples.len());
            let mut cols = vec![None; n];
            for _ in 0..count {
                let mut p0 = Vector3::from_fn(|_, _| sigma_p * rng.sample::<f64, _>(StandardNormal));
                if let Some(r) = &cfg.rotation {
                    p0 = r * p0;
                }
                let out = isotropic_unit(&mut rng);
                let p = p0.norm();
                let v = p / m;
                let cos = (out.dot(&p0) / p).clamp(-1.0, 1.0);
                let kin = 0.5 * p * p / m;
                for a0 in 0..n {
                    cols[a0] = if needed[a0] { Some(model.amplitude_column(cos, e[a0] + kin, a0)?) } else { None };
                }
                for (k, &[a, b, a0, b0]) in tuples.iter().enumerate() {
                    let v_out = outgoing_speed(channels, m, a, a0, v);
                    let z = if v_out > 0.0 {
                        let (fa, fb) = (cols[a0].as_ref().unwrap()[a], cols[b0].as_ref().unwrap()[b]);
                        fa * fb.conj() * (gas.n_gas * v_out * 4.0 * PI)
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                    moments.add(k, z);
                }
            }
            Ok(moments)
        })
        .collect();
    let mut total = Moments::new(tuples.len());
    for c in chunks {
        total.merge(&c?);
    }
    Ok((0..tuples.len()).map(|k| total.estimate(k, cfg.samples)).collect())
}

/// Monte Carlo estimate of one rate-tensor entry.
pub fn rate_coefficient_m3_oracle<M: ScatteringModel + ?Sized>(
    model: &M,
    gas: &GasParameters,
    alpha: usize,
    beta: usize,
    alpha0: usize,
    beta0: usize,
    cfg: &McConfig,
) -> Result<McEstimate> {
    let n = model.channels().len();
    if [alpha, beta, alpha0, beta0].iter().any(|&i| i >= n) {
        return Err(Error::InvalidInput(format!("channel index out of range for {n} channels")));
    }
    if !chi(model.channels(), alpha, beta, alpha0, beta0, cfg.energy_tolerance) {
        return Ok(McEstimate::ZERO);
    }
    Ok(sample_tuples(model, gas, cfg, &[[alpha, beta, alpha0, beta0]])?[0])
}

/// Monte Carlo estimates of all entries from one shared sample set, in
/// [`RateTensor::index`] order.
pub fn rate_tensor_m3_oracle<M: ScatteringModel + ?Sized>(model: &M, gas: &GasParameters, cfg: &McConfig) -> Result<Vec<McEstimate>> {
    let channels = model.channels();
    let n = channels.len();
    let mut tuples = Vec::new();
    for a in 0..n {
        for b in 0..n {
            for a0 in 0..n {
                for b0 in 0..n {
                    if chi(channels, a, b, a0, b0, cfg.energy_tolerance) {
                        tuples.push([a, b, a0, b0]);
                    }
                }
            }
        }
    }
    let estimates = sample_tuples(model, gas, cfg, &tuples)?;
    let mut out = vec![McEstimate::ZERO; n.pow(4)];
    for (&[a, b, a0, b0], est) in tuples.iter().zip(estimates) {
        out[RateTensor::index(n, a, b, a0, b0)] = est;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::random_kmatrix_model;
    use crate::scattering::{ChannelSet, KMatrixModel};
    use crate::thermal::{rate_coefficient, QuadratureConfig};
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gas() -> GasParameters {
        GasParameters::new(0.5, 1.0, 1.0).unwrap()
    }

    #[test]
    fn free_model_is_exactly_zero() {
        let ch = ChannelSet::new(vec!["g".into()], vec![0.0]).unwrap();
        let m = KMatrixModel::new(ch, DMatrix::zeros(1, 1), 1.0).unwrap();
        let cfg = McConfig { samples: 10_000, ..McConfig::default() };
        let est = rate_coefficient_m3_oracle(&m, &gas(), 0, 0, 0, 0, &cfg).unwrap();
        assert_eq!(est, McEstimate::ZERO);
    }

    #[test]
    fn agrees_with_quadrature_on_single_tuples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = random_kmatrix_model(&mut rng, &[0.0, 0.6], 1.0, 0.8);
        let cfg = McConfig { samples: 200_000, seed: 5, ..McConfig::default() };
        for t in [[0, 0, 0, 0], [1, 1, 0, 0], [0, 1, 0, 1], [0, 0, 1, 1]] {
            let q = rate_coefficient(&m, &gas(), t[0], t[1], t[2], t[3], &QuadratureConfig::default()).unwrap();
            let est = rate_coefficient_m3_oracle(&m, &gas(), t[0], t[1], t[2], t[3], &cfg).unwrap();
            assert!(est.agrees_with(q, 4.0, 1e-12), "{t:?}: {q} vs {est:?}");
        }
    }

    #[test]
    fn rotated_frame_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = random_kmatrix_model(&mut rng, &[0.0, 0.6], 1.0, 0.8);
        let base = McConfig { samples: 100_000, seed: 9, ..McConfig::default() };
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0).into_inner();
        let rotated = McConfig { rotation: Some(rot), ..base.clone() };
        let a = rate_tensor_m3_oracle(&m, &gas(), &base).unwrap();
        let b = rate_tensor_m3_oracle(&m, &gas(), &rotated).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let s_re = (x.stderr_re.powi(2) + y.stderr_re.powi(2)).sqrt();
            let s_im = (x.stderr_im.powi(2) + y.stderr_im.powi(2)).sqrt();
            assert!((x.value.re - y.value.re).abs() <= 4.0 * s_re + 1e-12);
            assert!((x.value.im - y.value.im).abs() <= 4.0 * s_im + 1e-12);
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let m = random_kmatrix_model(&mut rng, &[0.0, 0.6], 1.0, 0.8);
        let cfg = McConfig { samples: 20_000, seed: 1, ..McConfig::default() };
        assert_eq!(rate_tensor_m3_oracle(&m, &gas(), &cfg).unwrap(), rate_tensor_m3_oracle(&m, &gas(), &cfg).unwrap());
    }
}
