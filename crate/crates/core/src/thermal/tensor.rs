use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::chi;
use crate::error::{Error, Result};
use crate::operator::{hermitian_part, CMatrix, Operator};
use crate::scattering::ChannelSet;

/// Relative tolerance of the Hermiticity pairing `M_{αβ}^{α0β0} = conj M_{βα}^{β0α0}`.
pub const PAIRING_TOLERANCE: f64 = 1e-10;
/// Eigenvalue floor of the coefficient matrix relative to its norm.
pub const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RateDiagnostics {
    pub psd_min_eig: f64,
    pub hermiticity_residual: f64,
    pub quadrature_residual: f64,
}

/// Rate tensor `M_{αβ}^{α0β0}` over a channel set.
#[derive(Clone, Debug, PartialEq)]
pub struct RateTensor {
    channels: ChannelSet,
    entries: Vec<Complex64>,
    chi_mask: Vec<bool>,
    energy_tolerance: f64,
    diagnostics: RateDiagnostics,
}

impl RateTensor {
    /// Flat index of `M_{αβ}^{α0β0}`.
    pub fn index(n: usize, alpha: usize, beta: usize, alpha0: usize, beta0: usize) -> usize {
        ((alpha * n + beta) * n + alpha0) * n + beta0
    }

    /// Builds and validates: zero outside the selection rule, Hermitian
    /// pairing, positive semidefinite coefficient matrix.
    pub fn new(channels: ChannelSet, entries: Vec<Complex64>, energy_tolerance: f64, quadrature_residual: f64) -> Result<Self> {
        let t = Self::from_parts_unchecked(channels, entries, energy_tolerance, quadrature_residual)?;
        t.validate()?;
        Ok(t)
    }

    /// Builds without the pairing and positivity checks; diagnostics are
    /// still computed. Use [`RateTensor::validate`] to check later.
    pub fn from_parts_unchecked(
        channels: ChannelSet,
        entries: Vec<Complex64>,
        energy_tolerance: f64,
        quadrature_residual: f64,
    ) -> Result<Self> {
        let n = channels.len();
        if entries.len() != n.pow(4) {
            return Err(Error::DimensionMismatch { expected: n.pow(4), found: entries.len() });
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("rate tensor has non-finite entries".into()));
        }
        let mut chi_mask = vec![false; entries.len()];
        for a in 0..n {
            for b in 0..n {
                for a0 in 0..n {
                    for b0 in 0..n {
                        chi_mask[Self::index(n, a, b, a0, b0)] = chi(&channels, a, b, a0, b0, energy_tolerance);
                    }
                }
            }
        }
        let mut t = Self { channels, entries, chi_mask, energy_tolerance, diagnostics: RateDiagnostics::default() };
        t.diagnostics = RateDiagnostics {
            psd_min_eig: Operator::from_matrix_unchecked(hermitian_part(&t.coefficient_matrix())).min_eigenvalue(),
            hermiticity_residual: t.hermiticity_residual(),
            quadrature_residual,
        };
        Ok(t)
    }

    pub fn zero(channels: ChannelSet, energy_tolerance: f64) -> Self {
        let n = channels.len();
        Self::new(channels, vec![Complex64::new(0.0, 0.0); n.pow(4)], energy_tolerance, 0.0).expect("zero tensor is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let scale = self.max_abs();
        for (k, z) in self.entries.iter().enumerate() {
            if !self.chi_mask[k] && z.norm() > 0.0 {
                return Err(Error::InvalidInput(format!(
                    "rate tensor entry {k} is nonzero ({z}) outside the energy selection rule"
                )));
            }
        }
        if self.diagnostics.hermiticity_residual > PAIRING_TOLERANCE * scale {
            return Err(Error::InvalidInput(format!(
                "rate tensor violates M_ab^a0b0 = conj M_ba^b0a0 (residual {:e})",
                self.diagnostics.hermiticity_residual
            )));
        }
        let tolerance = PSD_TOLERANCE * self.coefficient_norm();
        if self.diagnostics.psd_min_eig < -tolerance {
            return Err(Error::RateTensorNotPositive { min_eigenvalue: self.diagnostics.psd_min_eig, tolerance });
        }
        Ok(())
    }

    pub fn channels(&self) -> &ChannelSet {
        &self.channels
    }

    pub fn dim(&self) -> usize {
        self.channels.len()
    }

    pub fn get(&self, alpha: usize, beta: usize, alpha0: usize, beta0: usize) -> Complex64 {
        self.entries[Self::index(self.dim(), alpha, beta, alpha0, beta0)]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn chi_mask(&self) -> &[bool] {
        &self.chi_mask
    }

    pub fn energy_tolerance(&self) -> f64 {
        self.energy_tolerance
    }

    pub fn diagnostics(&self) -> &RateDiagnostics {
        &self.diagnostics
    }

    pub fn set_quadrature_residual(&mut self, residual: f64) {
        self.diagnostics.quadrature_residual = residual;
    }

    /// `C[(α + α0 n), (β + β0 n)] = M_{αβ}^{α0β0}`.
    pub fn coefficient_matrix(&self) -> CMatrix {
        let n = self.dim();
        let mut c = CMatrix::zeros(n * n, n * n);
        for a in 0..n {
            for b in 0..n {
                for a0 in 0..n {
                    for b0 in 0..n {
                        c[(a + a0 * n, b + b0 * n)] = self.get(a, b, a0, b0);
                    }
                }
            }
        }
        c
    }

    /// Spectral norm of the coefficient matrix.
    pub fn coefficient_norm(&self) -> f64 {
        let h = Operator::from_matrix_unchecked(hermitian_part(&self.coefficient_matrix()));
        let ev = h.hermitian_eigenvalues();
        ev[0].abs().max(ev[ev.len() - 1].abs())
    }

    fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    fn hermiticity_residual(&self) -> f64 {
        let n = self.dim();
        let mut r: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                for a0 in 0..n {
                    for b0 in 0..n {
                        r = r.max((self.get(a, b, a0, b0) - self.get(b, a, b0, a0).conj()).norm());
                    }
                }
            }
        }
        r
    }

    /// `Σ_γ M_{γγ}^{α0α}`, the matrix appearing in the anticommutator terms.
    pub fn loss_matrix(&self) -> CMatrix {
        let n = self.dim();
        CMatrix::from_fn(n, n, |a0, a| (0..n).map(|g| self.get(g, g, a0, a)).sum())
    }
}
