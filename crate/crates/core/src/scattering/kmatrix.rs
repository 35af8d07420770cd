use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{open_channels, ChannelSet, OpenChannel, ScatteringModel};
use crate::error::{Error, Result};
use crate::operator::{CMatrix, I, ONE, ZERO};

/// Upper bound on the condition number of `I − iK` before the Cayley
/// transform is refused.
const MAX_CONDITION: f64 = 1e12;

/// s-wave multichannel model from energy-independent reactance lengths.
///
/// Over the open channels at total energy `E` the reactance matrix is
/// `K_{βα} = −sqrt(p_β) a_{βα} sqrt(p_α)` and the S-matrix its Cayley
/// transform `S = (I + iK)(I − iK)⁻¹`, unitary and symmetric for any real
/// symmetric `a`. Closed channels are dropped before any square root is taken.
#[derive(Clone, Debug)]
pub struct KMatrixModel {
    channels: ChannelSet,
    a: DMatrix<f64>,
    mass: f64,
}

/// S-matrix restricted to the open channels, in channel-index order.
#[derive(Clone, Debug)]
pub struct OpenSMatrix {
    pub open: Vec<OpenChannel>,
    pub s: CMatrix,
}

impl KMatrixModel {
    pub fn new(channels: ChannelSet, a: DMatrix<f64>, mass: f64) -> Result<Self> {
        let n = channels.len();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: a.nrows() });
        }
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidInput(format!("mass must be positive, got {mass}")));
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("reactance lengths must be finite".into()));
        }
        let scale = a.amax().max(1.0);
        let asym = (&a - a.transpose()).amax();
        if asym > 1e-14 * scale {
            return Err(Error::InvalidInput(format!("reactance matrix is not symmetric (residual {asym:e})")));
        }
        Ok(Self { channels, a, mass })
    }

    pub fn reactance(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn s_matrix(&self, e_total: f64) -> Result<OpenSMatrix> {
        let open = open_channels(self, e_total);
        if open.is_empty() {
            return Err(Error::NoOpenChannels { energy: e_total });
        }
        let n = open.len();
        let sqrt_p: Vec<f64> = open.iter().map(|c| c.momentum.sqrt()).collect();
        let k = DMatrix::from_fn(n, n, |i, j| -sqrt_p[i] * self.a[(open[i].index, open[j].index)] * sqrt_p[j]);

        // I − iK is normal with singular values sqrt(1 + k_i²) ≥ 1.
        let condition = (1.0 + k.norm_squared()).sqrt();
        if condition > MAX_CONDITION {
            return Err(Error::IllConditioned { condition });
        }
        let ik = k.map(|x| Complex64::new(0.0, x));
        let id = CMatrix::identity(n, n);
        let lu = (&id - &ik).lu();
        let s = lu.solve(&(&id + &ik)).ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
        Ok(OpenSMatrix { open, s })
    }
}

impl ScatteringModel for KMatrixModel {
    fn channels(&self) -> &ChannelSet {
        &self.channels
    }

    fn mass(&self) -> f64 {
        self.mass
    }

    fn is_isotropic(&self) -> bool {
        true
    }

    /// `f_{αα0} = (S_{αα0} − δ_{αα0}) / (2i sqrt(p_α p_α0))`, independent of angle.
    fn amplitude_matrix(&self, _cos_theta: f64, e_total: f64) -> Result<CMatrix> {
        let n = self.channels.len();
        let mut f = CMatrix::zeros(n, n);
        let sm = match self.s_matrix(e_total) {
            Ok(sm) => sm,
            Err(Error::NoOpenChannels { .. }) => return Ok(f),
            Err(e) => return Err(e),
        };
        for (i, ci) in sm.open.iter().enumerate() {
            for (j, cj) in sm.open.iter().enumerate() {
                let delta = if i == j { ONE } else { ZERO };
                let denom = I * (2.0 * (ci.momentum * cj.momentum).sqrt());
                f[(ci.index, cj.index)] = (sm.s[(i, j)] - delta) / denom;
            }
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::random_kmatrix_model;
    use crate::scattering::{
        amplitude, channel_total_cross_section, optical_theorem_residual, pair_cross_section,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn single(a1: f64, mass: f64) -> KMatrixModel {
        let ch = ChannelSet::new(vec!["g".into()], vec![0.0]).unwrap();
        KMatrixModel::new(ch, DMatrix::from_element(1, 1, a1), mass).unwrap()
    }

    fn two_channel(a: [[f64; 2]; 2], gap: f64) -> KMatrixModel {
        let ch = ChannelSet::new(vec!["g".into(), "e".into()], vec![0.0, gap]).unwrap();
        KMatrixModel::new(ch, DMatrix::from_fn(2, 2, |i, j| a[i][j]), 1.0).unwrap()
    }

    fn max_abs(m: &CMatrix) -> f64 {
        m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
    }

    #[test]
    fn open_channel_selection() {
        let m = two_channel([[0.1, 0.0], [0.0, 0.2]], 2.0);
        assert!(open_channels(&m, -1.0).is_empty());
        assert!(open_channels(&m, 0.0).is_empty());
        let open = open_channels(&m, 1.0);
        assert_eq!(open.len(), 1);
        assert_eq!(open[0].index, 0);
        let s = single(0.1, 2.0);
        let p = 1.3;
        let open = open_channels(&s, p * p / (2.0 * 2.0));
        assert!((open[0].momentum - p).abs() < 1e-15);
    }

    #[test]
    fn free_model_has_trivial_s_and_zero_amplitude() {
        let m = two_channel([[0.0, 0.0], [0.0, 0.0]], 0.5);
        let sm = m.s_matrix(2.0).unwrap();
        assert!(max_abs(&(&sm.s - CMatrix::identity(2, 2))) == 0.0);
        assert_eq!(max_abs(&m.amplitude_matrix(0.3, 2.0).unwrap()), 0.0);
        assert_eq!(pair_cross_section(&m, 1, 0, 2.0).unwrap(), 0.0);
        assert_eq!(channel_total_cross_section(&m, 0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn single_channel_closed_forms() {
        let mass = 1.7;
        for &(a1, p) in &[(0.4, 0.3), (-1.2, 2.0), (3.0, 0.05)] {
            let m = single(a1, mass);
            let e = p * p / (2.0 * mass);
            let s = m.s_matrix(e).unwrap().s[(0, 0)];
            let oracle = Complex64::new(1.0, -p * a1) / Complex64::new(1.0, p * a1);
            assert!((s - oracle).norm() < 1e-15);
            assert!((s.norm() - 1.0).abs() < 1e-15);
            let f = amplitude(&m, 0, 0, 0.2, e).unwrap();
            assert!((f - Complex64::new(-a1, 0.0) / Complex64::new(1.0, p * a1)).norm() < 1e-14 * a1.abs());
            let sigma = pair_cross_section(&m, 0, 0, e).unwrap();
            let oracle = 4.0 * PI * a1 * a1 / (1.0 + p * p * a1 * a1);
            assert!((sigma - oracle).abs() < 1e-12 * oracle);
        }
    }

    #[test]
    fn low_energy_limits() {
        let a1 = 0.7;
        let m = single(a1, 1.0);
        let e = 1e-14;
        let f = amplitude(&m, 0, 0, 1.0, e).unwrap();
        assert!((f.re + a1).abs() < 1e-6);
        let sigma = pair_cross_section(&m, 0, 0, e).unwrap();
        assert!((sigma - 4.0 * PI * a1 * a1).abs() < 1e-6);
    }

    #[test]
    fn closed_channel_is_rejected() {
        let m = two_channel([[0.1, 0.05], [0.05, 0.2]], 1.0);
        let err = amplitude(&m, 1, 0, 1.0, 0.5).unwrap_err();
        assert!(matches!(err, Error::ClosedChannel { channel: 1, .. }));
        // exactly at threshold: closed, no NaN
        let f = m.amplitude_matrix(1.0, 1.0).unwrap();
        assert!(f.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        assert_eq!(f[(1, 0)], ZERO);
        assert!(matches!(m.s_matrix(-0.1), Err(Error::NoOpenChannels { .. })));
    }

    #[test]
    fn random_s_matrices_are_unitary_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let m = random_kmatrix_model(&mut rng, &[0.0, 0.4, 1.1], 1.0, 2.0);
            for _ in 0..20 {
                let e = 3.0 * rng.random::<f64>();
                let Ok(sm) = m.s_matrix(e) else { continue };
                let n = sm.open.len();
                assert!(max_abs(&(sm.s.adjoint() * &sm.s - CMatrix::identity(n, n))) < 1e-12);
                assert!(max_abs(&(&sm.s - sm.s.transpose())) < 1e-12);
            }
        }
    }

    #[test]
    fn reciprocity_of_flux_weighted_amplitudes() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let m = random_kmatrix_model(&mut rng, &[0.0, 0.3, 0.9], 1.0, 1.0);
        let e = 1.5;
        let open = open_channels(&m, e);
        let f = m.amplitude_matrix(0.0, e).unwrap();
        for a in &open {
            for b in &open {
                let ab = f[(a.index, b.index)] * (a.momentum * b.momentum).sqrt();
                let ba = f[(b.index, a.index)] * (a.momentum * b.momentum).sqrt();
                assert!((ab - ba).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn optical_theorem_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let m = random_kmatrix_model(&mut rng, &[0.0, 0.5, 1.2], 1.3, 1.5);
            for _ in 0..20 {
                let e = 0.01 + 4.0 * rng.random::<f64>();
                for c in open_channels(&m, e) {
                    assert!(optical_theorem_residual(&m, c.index, e).unwrap() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn off_diagonal_coupling_against_brute_force_cayley() {
        let a12 = 0.8;
        let m = two_channel([[0.0, a12], [a12, 0.0]], 0.6);
        let e = 1.4;
        let open = open_channels(&m, e);
        let (p1, p2) = (open[0].momentum, open[1].momentum);
        // independent 2x2 Cayley transform written out by hand
        let k12 = -(p1 * p2).sqrt() * a12;
        let det = Complex64::new(1.0 + k12 * k12, 0.0);
        let s11 = Complex64::new(1.0 - k12 * k12, 0.0) / det;
        let s21 = Complex64::new(0.0, 2.0 * k12) / det;
        let brute_11 = PI * (s11 - ONE).norm_sqr() / (p1 * p1);
        let brute_21 = PI * s21.norm_sqr() / (p1 * p2);
        let sigma11 = pair_cross_section(&m, 0, 0, e).unwrap();
        let sigma21 = pair_cross_section(&m, 1, 0, e).unwrap();
        assert!((sigma11 - brute_11).abs() < 1e-12 * brute_11);
        assert!((sigma21 - brute_21).abs() < 1e-12 * brute_21);
        // elastic part is second order in the coupling
        assert!(sigma11 < sigma21 * (p1 * p2 * a12 * a12) * 2.0);
        let total = channel_total_cross_section(&m, 0, e).unwrap();
        assert!((total - (brute_11 + p2 / p1 * brute_21)).abs() < 1e-12 * total);
    }

    #[test]
    fn rejects_asymmetric_reactance() {
        let ch = ChannelSet::new(vec!["a".into(), "b".into()], vec![0.0, 1.0]).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.1]);
        assert!(KMatrixModel::new(ch, a, 1.0).is_err());
    }
}
