//! Multichannel scattering amplitudes `f_{αα0}(cosθ; E)` and cross sections.
//!
//! Channel `α` is open at total energy `E` when `E > E_α`; its momentum is
//! `p_α = sqrt(2m(E − E_α))` (ħ = 1). Amplitudes follow the convention in
//! which the low-energy s-wave limit is `f → −a`.
//!
//! Two carriers are provided: the reactance-matrix model [`KMatrixModel`]
//! (s-wave, exactly unitary) and interpolated data in [`AmplitudeTable`].

mod kmatrix;
mod table;

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operator::CMatrix;
use crate::quadrature::gauss_legendre;

pub use kmatrix::{KMatrixModel, OpenSMatrix};
pub use table::{AmplitudeTable, TableUnits};

/// Default number of Gauss–Legendre nodes in `cosθ`.
pub const DEFAULT_COS_NODES: usize = 64;

/// Default absolute tolerance for energy comparisons.
pub const DEFAULT_ENERGY_TOLERANCE: f64 = 1e-9;

/// Internal levels `E_α` of the immobile system, one per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    labels: Vec<String>,
    energies: Vec<f64>,
}

impl ChannelSet {
    pub fn new(labels: Vec<String>, energies: Vec<f64>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidInput("at least one channel is required".into()));
        }
        if labels.len() != energies.len() {
            return Err(Error::InvalidInput(format!(
                "{} channel labels but {} energies",
                labels.len(),
                energies.len()
            )));
        }
        if let Some(e) = energies.iter().find(|e| !e.is_finite()) {
            return Err(Error::InvalidInput(format!("channel energy {e} is not finite")));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::InvalidInput(format!("duplicate channel label {l:?}")));
            }
        }
        Ok(Self { labels, energies })
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn energy(&self, alpha: usize) -> f64 {
        self.energies[alpha]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Smallest pairwise level spacing (infinite for a single channel).
    pub fn min_gap(&self) -> f64 {
        let mut gap = f64::INFINITY;
        for (i, a) in self.energies.iter().enumerate() {
            for b in &self.energies[i + 1..] {
                gap = gap.min((a - b).abs());
            }
        }
        gap
    }

    pub fn is_non_degenerate(&self, energy_tolerance: f64) -> bool {
        self.min_gap() > energy_tolerance
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpenChannel {
    pub index: usize,
    pub momentum: f64,
}

/// Source of multichannel scattering amplitudes.
pub trait ScatteringModel: Send + Sync {
    fn channels(&self) -> &ChannelSet;

    /// Mass of the scattered gas particle.
    fn mass(&self) -> f64;

    /// Whether amplitudes are independent of the scattering angle.
    fn is_isotropic(&self) -> bool;

    /// `f_{αα0}(cosθ; E)` for every ordered channel pair, zero wherever either
    /// channel is closed at `e_total`.
    fn amplitude_matrix(&self, cos_theta: f64, e_total: f64) -> Result<CMatrix>;

    /// Column `f_{·α0}(cosθ; E)` of the amplitude matrix.
    fn amplitude_column(&self, cos_theta: f64, e_total: f64, alpha0: usize) -> Result<DVector<Complex64>> {
        Ok(self.amplitude_matrix(cos_theta, e_total)?.column(alpha0).into_owned())
    }

    /// Quadrature rule on `[-1, 1]` for angular integrals of amplitude products.
    fn cos_rule(&self, nodes: usize) -> Vec<(f64, f64)> {
        if self.is_isotropic() {
            return vec![(1.0, 2.0)];
        }
        let rule = gauss_legendre(nodes);
        rule.nodes.iter().copied().zip(rule.weights.iter().copied()).collect()
    }

    /// Collision energies (incoming kinetic energy) at which amplitudes are
    /// not smooth, besides channel thresholds.
    fn kinetic_breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Channels with `E_α < e_total` and their momenta.
pub fn open_channels<M: ScatteringModel + ?Sized>(model: &M, e_total: f64) -> Vec<OpenChannel> {
    let m = model.mass();
    model
        .channels()
        .energies()
        .iter()
        .enumerate()
        .filter(|(_, &e)| e < e_total)
        .map(|(index, &e)| OpenChannel { index, momentum: (2.0 * m * (e_total - e)).sqrt() })
        .collect()
}

fn momentum<M: ScatteringModel + ?Sized>(model: &M, channel: usize, e_total: f64) -> Result<f64> {
    let channels = model.channels();
    if channel >= channels.len() {
        return Err(Error::InvalidInput(format!("channel index {channel} out of range")));
    }
    let threshold = channels.energy(channel);
    if e_total <= threshold {
        return Err(Error::ClosedChannel { channel, energy: e_total, threshold });
    }
    Ok((2.0 * model.mass() * (e_total - threshold)).sqrt())
}

/// `f_{α←α0}(cosθ; E)`; both channels must be open.
pub fn amplitude<M: ScatteringModel + ?Sized>(
    model: &M,
    alpha: usize,
    alpha0: usize,
    cos_theta: f64,
    e_total: f64,
) -> Result<Complex64> {
    if !(-1.0..=1.0).contains(&cos_theta) {
        return Err(Error::InvalidInput(format!("cos_theta = {cos_theta} outside [-1, 1]")));
    }
    momentum(model, alpha, e_total)?;
    momentum(model, alpha0, e_total)?;
    Ok(model.amplitude_column(cos_theta, e_total, alpha0)?[alpha])
}

/// `σ_{αα0}(E) = 2π ∫ |f_{αα0}|² dcosθ`.
///
/// No outgoing flux factor is included; the rate expressions supply `v_out`
/// explicitly.
pub fn pair_cross_section<M: ScatteringModel + ?Sized>(model: &M, alpha: usize, alpha0: usize, e_total: f64) -> Result<f64> {
    momentum(model, alpha, e_total)?;
    momentum(model, alpha0, e_total)?;
    let mut acc = 0.0;
    for (c, w) in model.cos_rule(DEFAULT_COS_NODES) {
        acc += w * model.amplitude_column(c, e_total, alpha0)?[alpha].norm_sqr();
    }
    Ok(2.0 * PI * acc)
}

/// Total cross section out of channel `α0`:
/// `σ(p, α0) = Σ_{α open} (p_α / p_α0) σ_{αα0}`.
///
/// The flux ratio makes this the quantity constrained by the optical theorem.
pub fn channel_total_cross_section<M: ScatteringModel + ?Sized>(model: &M, alpha0: usize, e_total: f64) -> Result<f64> {
    let p0 = momentum(model, alpha0, e_total)?;
    let rule = model.cos_rule(DEFAULT_COS_NODES);
    let mut amps = Vec::with_capacity(rule.len());
    for &(c, w) in &rule {
        amps.push((w, model.amplitude_column(c, e_total, alpha0)?));
    }
    let mut total = 0.0;
    for open in open_channels(model, e_total) {
        let pair: f64 = amps.iter().map(|(w, f)| w * f[open.index].norm_sqr()).sum();
        total += open.momentum / p0 * 2.0 * PI * pair;
    }
    Ok(total)
}

/// Relative violation of `σ(p, α0) = (4π/p_α0) Im f_{α0α0}(forward)`.
pub fn optical_theorem_residual<M: ScatteringModel + ?Sized>(model: &M, alpha0: usize, e_total: f64) -> Result<f64> {
    let p0 = momentum(model, alpha0, e_total)?;
    let sigma = channel_total_cross_section(model, alpha0, e_total)?;
    let forward = model.amplitude_column(1.0, e_total, alpha0)?[alpha0];
    let optical = 4.0 * PI / p0 * forward.im;
    let scale = sigma.abs().max(optical.abs());
    Ok(if scale == 0.0 { 0.0 } else { (sigma - optical).abs() / scale })
}
