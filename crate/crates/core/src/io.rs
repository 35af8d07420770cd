//! File formats: rate-tensor JSON and trajectory CSV.
//!
//! Floats are written in their shortest round-trip form, so a rate file read
//! back reproduces the in-memory tensor bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::operator::CMatrix;
use crate::scattering::ChannelSet;
use crate::thermal::{EnergyShifts, RateTensor};

/// Unit labels attached to every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub energy: String,
    pub length: String,
    pub mass: String,
    pub time: String,
}

impl Default for Units {
    fn default() -> Self {
        let s = || "arbitrary".to_string();
        Self { energy: s(), length: s(), mass: s(), time: "hbar/energy".into() }
    }
}

/// A complex number given either as a real scalar or as `[re, im]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComplexValue {
    Real(f64),
    Pair([f64; 2]),
}

impl From<ComplexValue> for Complex64 {
    fn from(v: ComplexValue) -> Self {
        match v {
            ComplexValue::Real(x) => Complex64::new(x, 0.0),
            ComplexValue::Pair([re, im]) => Complex64::new(re, im),
        }
    }
}

/// Row-major nested lists into a square matrix.
pub fn complex_matrix(rows: &[Vec<ComplexValue>]) -> Result<CMatrix> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput("matrix must be a non-empty square list of rows".into()));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| rows[i][j].into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub label: String,
    pub energy: f64,
}

pub fn channel_specs(channels: &ChannelSet) -> Vec<ChannelSpec> {
    channels
        .labels()
        .iter()
        .zip(channels.energies())
        .map(|(l, e)| ChannelSpec { label: l.clone(), energy: *e })
        .collect()
}

pub fn channel_set(specs: &[ChannelSpec]) -> Result<ChannelSet> {
    ChannelSet::new(specs.iter().map(|c| c.label.clone()).collect(), specs.iter().map(|c| c.energy).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateEntry {
    pub a: String,
    pub b: String,
    pub a0: String,
    pub b0: String,
    pub re: f64,
    pub im: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureResiduals {
    pub rates: f64,
    pub shifts: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateFileDiagnostics {
    pub psd_min_eig: f64,
    pub hermiticity_residual: f64,
    pub quadrature_residuals: QuadratureResiduals,
}

/// On-disk form of a rate tensor with its energy shifts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateFile {
    pub units: Units,
    /// Resolved configuration that produced the file.
    pub config: serde_json::Value,
    pub channels: Vec<ChannelSpec>,
    pub energy_tolerance: f64,
    #[serde(rename = "M")]
    pub m: Vec<RateEntry>,
    pub epsilon: Vec<f64>,
    pub diagnostics: RateFileDiagnostics,
}

impl RateFile {
    pub fn new(units: Units, config: serde_json::Value, rates: &RateTensor, shifts: &EnergyShifts) -> Self {
        let channels = rates.channels();
        let labels = channels.labels();
        let n = channels.len();
        let mut m = Vec::with_capacity(n.pow(4));
        for a in 0..n {
            for b in 0..n {
                for a0 in 0..n {
                    for b0 in 0..n {
                        let z = rates.get(a, b, a0, b0);
                        m.push(RateEntry {
                            a: labels[a].clone(),
                            b: labels[b].clone(),
                            a0: labels[a0].clone(),
                            b0: labels[b0].clone(),
                            re: z.re,
                            im: z.im,
                        });
                    }
                }
            }
        }
        let d = rates.diagnostics();
        Self {
            units,
            config,
            channels: channel_specs(channels),
            energy_tolerance: rates.energy_tolerance(),
            m,
            epsilon: shifts.epsilon.clone(),
            diagnostics: RateFileDiagnostics {
                psd_min_eig: d.psd_min_eig,
                hermiticity_residual: d.hermiticity_residual,
                quadrature_residuals: QuadratureResiduals { rates: d.quadrature_residual, shifts: shifts.quadrature_residual },
            },
        }
    }

    pub fn channel_set(&self) -> Result<ChannelSet> {
        channel_set(&self.channels)
    }

    /// Tensor exactly as stored; missing entries are zero. Invariants are not
    /// checked, see [`RateTensor::validate`].
    pub fn rate_tensor_unchecked(&self) -> Result<RateTensor> {
        let channels = self.channel_set()?;
        let n = channels.len();
        let mut entries = vec![Complex64::new(0.0, 0.0); n.pow(4)];
        let idx = |l: &str| channels.index_of(l).ok_or_else(|| Error::InvalidInput(format!("unknown channel {l:?} in M")));
        for e in &self.m {
            let k = RateTensor::index(n, idx(&e.a)?, idx(&e.b)?, idx(&e.a0)?, idx(&e.b0)?);
            entries[k] = Complex64::new(e.re, e.im);
        }
        RateTensor::from_parts_unchecked(channels, entries, self.energy_tolerance, self.diagnostics.quadrature_residuals.rates)
    }

    pub fn rate_tensor(&self) -> Result<RateTensor> {
        let t = self.rate_tensor_unchecked()?;
        t.validate()?;
        Ok(t)
    }

    pub fn shifts(&self) -> Result<EnergyShifts> {
        if self.epsilon.len() != self.channels.len() {
            return Err(Error::DimensionMismatch { expected: self.channels.len(), found: self.epsilon.len() });
        }
        Ok(EnergyShifts { epsilon: self.epsilon.clone(), quadrature_residual: self.diagnostics.quadrature_residuals.shifts })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn push_float(line: &mut String, x: f64) {
    write!(line, ",{x:?}").expect("writing to a String");
}

/// CSV with columns `t, re_rho_a_b, im_rho_a_b, …` (row-major over `a, b`)
/// and, when `stderr` is given, `stderr_re_rho_a_b, stderr_im_rho_a_b, …`.
/// The first line is a `#` comment carrying the units.
pub fn trajectory_csv(record: &TrajectoryRecord, stderr: Option<&[CMatrix]>, units: &Units) -> String {
    let n = record.states.first().map_or(0, |s| s.nrows());
    let mut out = format!("# units: time={}, energy={}\n", units.time, units.energy);
    let mut header = String::from("t");
    for a in 0..n {
        for b in 0..n {
            write!(header, ",re_rho_{a}_{b},im_rho_{a}_{b}").unwrap();
        }
    }
    if stderr.is_some() {
        for a in 0..n {
            for b in 0..n {
                write!(header, ",stderr_re_rho_{a}_{b},stderr_im_rho_{a}_{b}").unwrap();
            }
        }
    }
    out.push_str(&header);
    out.push('\n');
    for (k, (t, rho)) in record.times.iter().zip(&record.states).enumerate() {
        let mut line = format!("{t:?}");
        for a in 0..n {
            for b in 0..n {
                push_float(&mut line, rho[(a, b)].re);
                push_float(&mut line, rho[(a, b)].im);
            }
        }
        if let Some(err) = stderr {
            for a in 0..n {
                for b in 0..n {
                    push_float(&mut line, err[k][(a, b)].re);
                    push_float(&mut line, err[k][(a, b)].im);
                }
            }
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Parses [`trajectory_csv`] output back into times and density matrices.
pub fn parse_trajectory_csv(text: &str) -> Result<(Vec<f64>, Vec<CMatrix>)> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| Error::InvalidInput("empty trajectory file".into()))?;
    let cols = header.split(',').filter(|c| c.starts_with("re_rho_")).count();
    let n = (cols as f64).sqrt().round() as usize;
    if n * n != cols {
        return Err(Error::InvalidInput("trajectory header does not describe a square matrix".into()));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for line in lines {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| Error::InvalidInput(format!("bad number {v:?}: {e}"))))
            .collect::<Result<_>>()?;
        if vals.len() < 1 + 2 * cols {
            return Err(Error::InvalidInput("short trajectory row".into()));
        }
        times.push(vals[0]);
        states.push(CMatrix::from_fn(n, n, |a, b| {
            let k = 1 + 2 * (a * n + b);
            Complex64::new(vals[k], vals[k + 1])
        }));
    }
    Ok((times, states))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::TrajectoryRecord;
    use crate::random::random_kmatrix_model;
    use crate::scattering::ScatteringModel;
    use crate::thermal::{energy_shifts, rate_tensor, GasParameters, QuadratureConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rate_file_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = random_kmatrix_model(&mut rng, &[0.0, 0.3, 0.7], 1.0, 1.0);
        let gas = GasParameters::new(0.2, 1.0, 1.5).unwrap();
        let cfg = QuadratureConfig::default();
        let rates = rate_tensor(&model, &gas, &cfg).unwrap();
        let shifts = energy_shifts(&model, &gas, &cfg).unwrap();
        let file = RateFile::new(Units::default(), serde_json::json!({"note": "test"}), &rates, &shifts);
        let text = serde_json::to_string_pretty(&file).unwrap();
        let back: RateFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.rate_tensor().unwrap().entries(), rates.entries());
        assert_eq!(back.shifts().unwrap().epsilon, shifts.epsilon);
        assert_eq!(back.channel_set().unwrap(), *model.channels());
    }

    #[test]
    fn complex_values_accept_both_forms() {
        let rows: Vec<Vec<ComplexValue>> = serde_json::from_str("[[1, [0, 2]], [[0, -2], 3.5]]").unwrap();
        let m = complex_matrix(&rows).unwrap();
        assert_eq!(m[(0, 1)], Complex64::new(0.0, 2.0));
        assert_eq!(m[(1, 1)], Complex64::new(3.5, 0.0));
        assert!(complex_matrix(&rows[..1]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let states = vec![
            CMatrix::from_fn(2, 2, |i, j| Complex64::new(0.1 * (i + 1) as f64, 1e-17 * j as f64)),
            CMatrix::from_fn(2, 2, |i, j| Complex64::new(1.0 / 3.0, -(i as f64) + j as f64 * 2e-300)),
        ];
        let rec = TrajectoryRecord::from_states(vec![0.0, 0.25], states.clone());
        let text = trajectory_csv(&rec, None, &Units::default());
        assert!(text.lines().nth(1).unwrap().starts_with("t,re_rho_0_0,im_rho_0_0,re_rho_0_1"));
        let (t, back) = parse_trajectory_csv(&text).unwrap();
        assert_eq!(t, vec![0.0, 0.25]);
        assert_eq!(back, states);
        let with_err = trajectory_csv(&rec, Some(&states), &Units::default());
        assert!(with_err.contains("stderr_im_rho_1_1"));
    }
}
