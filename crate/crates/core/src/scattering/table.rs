use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{open_channels, ChannelSet, ScatteringModel};
use crate::error::{Error, Result};
use crate::operator::{CMatrix, ZERO};

/// Free-form unit labels carried along with tabulated data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TableUnits {
    #[serde(default)]
    pub energy: String,
    #[serde(default)]
    pub length: String,
    #[serde(default)]
    pub mass: String,
}

#[derive(Serialize, Deserialize)]
struct ChannelEntry {
    label: String,
    energy: f64,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    #[serde(default)]
    units: TableUnits,
    channels: Vec<ChannelEntry>,
    #[serde(rename = "E_grid")]
    e_grid: Vec<f64>,
    cos_theta_grid: Vec<f64>,
    amplitudes: BTreeMap<String, Vec<[f64; 2]>>,
}

/// Amplitudes sampled on a grid of incoming kinetic energy and `cosθ`,
/// bilinearly interpolated.
///
/// The amplitude for `α ← α0` at total energy `E` is read at kinetic energy
/// `E − E_α0`. Pairs absent from the data are zero. No unitarity repair is
/// attempted; [`AmplitudeTable::max_optical_residual`] reports how far the
/// data are from satisfying the optical theorem.
#[derive(Clone, Debug)]
pub struct AmplitudeTable {
    channels: ChannelSet,
    mass: f64,
    units: TableUnits,
    e_grid: Vec<f64>,
    cos_grid: Vec<f64>,
    // indexed by alpha * n + alpha0, row-major over (E, cosθ)
    samples: Vec<Option<Vec<Complex64>>>,
}

fn strictly_increasing(name: &str, grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidInput(format!("{name} needs at least two points")));
    }
    if grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(format!("{name} must be finite and strictly increasing")));
    }
    Ok(())
}

/// Cell index `i` and fraction `t` with `x = (1 − t) g[i] + t g[i+1]`.
fn locate(grid: &[f64], x: f64) -> (usize, f64) {
    let i = grid.partition_point(|&g| g <= x).clamp(1, grid.len() - 1) - 1;
    (i, (x - grid[i]) / (grid[i + 1] - grid[i]))
}

impl AmplitudeTable {
    pub fn new(
        channels: ChannelSet,
        mass: f64,
        units: TableUnits,
        e_grid: Vec<f64>,
        cos_grid: Vec<f64>,
        amplitudes: BTreeMap<(usize, usize), Vec<Complex64>>,
    ) -> Result<Self> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidInput(format!("mass must be positive, got {mass}")));
        }
        strictly_increasing("E_grid", &e_grid)?;
        strictly_increasing("cos_theta_grid", &cos_grid)?;
        if e_grid[0] < 0.0 {
            return Err(Error::InvalidInput("E_grid holds kinetic energies and must be nonnegative".into()));
        }
        if cos_grid[0] != -1.0 || cos_grid[cos_grid.len() - 1] != 1.0 {
            return Err(Error::InvalidInput("cos_theta_grid must span [-1, 1]".into()));
        }
        let n = channels.len();
        let size = e_grid.len() * cos_grid.len();
        let mut samples = vec![None; n * n];
        for ((a, a0), values) in amplitudes {
            if a >= n || a0 >= n {
                return Err(Error::InvalidInput(format!("amplitude pair ({a}, {a0}) out of range")));
            }
            if values.len() != size {
                return Err(Error::InvalidInput(format!(
                    "amplitude pair ({a}, {a0}) has {} samples, expected {size}",
                    values.len()
                )));
            }
            if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::InvalidInput(format!("amplitude pair ({a}, {a0}) has non-finite samples")));
            }
            samples[a * n + a0] = Some(values);
        }
        Ok(Self { channels, mass, units, e_grid, cos_grid, samples })
    }

    pub fn from_json_str(json: &str, mass: f64) -> Result<Self> {
        let file: TableFile = serde_json::from_str(json)?;
        let channels = ChannelSet::new(
            file.channels.iter().map(|c| c.label.clone()).collect(),
            file.channels.iter().map(|c| c.energy).collect(),
        )?;
        let mut amplitudes = BTreeMap::new();
        for (key, values) in file.amplitudes {
            let (a, a0) = key
                .split_once("<-")
                .ok_or_else(|| Error::InvalidInput(format!("amplitude key {key:?} is not of the form \"a<-a0\"")))?;
            let idx = |l: &str| {
                channels
                    .index_of(l.trim())
                    .ok_or_else(|| Error::InvalidInput(format!("unknown channel {l:?} in amplitude key {key:?}")))
            };
            let pair = (idx(a)?, idx(a0)?);
            amplitudes.insert(pair, values.iter().map(|[re, im]| Complex64::new(*re, *im)).collect());
        }
        Self::new(channels, mass, file.units, file.e_grid, file.cos_theta_grid, amplitudes)
    }

    pub fn from_path(path: impl AsRef<Path>, mass: f64) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?, mass)
    }

    pub fn to_json_string(&self) -> String {
        let n = self.channels.len();
        let labels = self.channels.labels();
        let mut amplitudes = BTreeMap::new();
        for (k, s) in self.samples.iter().enumerate() {
            if let Some(values) = s {
                let key = format!("{}<-{}", labels[k / n], labels[k % n]);
                amplitudes.insert(key, values.iter().map(|z| [z.re, z.im]).collect());
            }
        }
        let file = TableFile {
            units: self.units.clone(),
            channels: labels
                .iter()
                .zip(self.channels.energies())
                .map(|(l, e)| ChannelEntry { label: l.clone(), energy: *e })
                .collect(),
            e_grid: self.e_grid.clone(),
            cos_theta_grid: self.cos_grid.clone(),
            amplitudes,
        };
        serde_json::to_string_pretty(&file).expect("table serializes")
    }

    /// Samples `model` on the given grids. A zero kinetic energy grid point is
    /// sampled just above threshold.
    pub fn tabulate<M: ScatteringModel + ?Sized>(model: &M, e_grid: Vec<f64>, cos_grid: Vec<f64>) -> Result<Self> {
        strictly_increasing("E_grid", &e_grid)?;
        let channels = model.channels().clone();
        let n = channels.len();
        let mut amplitudes: BTreeMap<(usize, usize), Vec<Complex64>> = BTreeMap::new();
        for a in 0..n {
            for a0 in 0..n {
                amplitudes.insert((a, a0), Vec::with_capacity(e_grid.len() * cos_grid.len()));
            }
        }
        for &kin in &e_grid {
            let kin = if kin > 0.0 { kin } else { 1e-8 * e_grid[1] };
            for &c in &cos_grid {
                for a0 in 0..n {
                    let col = model.amplitude_column(c, channels.energy(a0) + kin, a0)?;
                    for a in 0..n {
                        amplitudes.get_mut(&(a, a0)).unwrap().push(col[a]);
                    }
                }
            }
        }
        Self::new(channels, model.mass(), TableUnits::default(), e_grid, cos_grid, amplitudes)
    }

    pub fn units(&self) -> &TableUnits {
        &self.units
    }

    pub fn energy_grid(&self) -> &[f64] {
        &self.e_grid
    }

    pub fn cos_grid(&self) -> &[f64] {
        &self.cos_grid
    }

    fn interpolate(&self, pair: usize, kinetic: f64, cos_theta: f64) -> Result<Complex64> {
        let Some(values) = &self.samples[pair] else {
            return Ok(ZERO);
        };
        let (lo, hi) = (self.e_grid[0], self.e_grid[self.e_grid.len() - 1]);
        if !(lo..=hi).contains(&kinetic) {
            return Err(Error::OutOfTableRange { energy: kinetic, min: lo, max: hi });
        }
        let nc = self.cos_grid.len();
        let (i, t) = locate(&self.e_grid, kinetic);
        let (j, u) = locate(&self.cos_grid, cos_theta.clamp(-1.0, 1.0));
        let at = |i: usize, j: usize| values[i * nc + j];
        Ok(at(i, j) * ((1.0 - t) * (1.0 - u))
            + at(i + 1, j) * (t * (1.0 - u))
            + at(i, j + 1) * ((1.0 - t) * u)
            + at(i + 1, j + 1) * (t * u))
    }

    /// Largest optical-theorem violation over grid energies and open channels.
    pub fn max_optical_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a0 in 0..self.channels.len() {
            for &kin in &self.e_grid {
                if kin <= 0.0 {
                    continue;
                }
                if let Ok(r) = super::optical_theorem_residual(self, a0, self.channels.energy(a0) + kin) {
                    worst = worst.max(r);
                }
            }
        }
        worst
    }
}

impl ScatteringModel for AmplitudeTable {
    fn channels(&self) -> &ChannelSet {
        &self.channels
    }

    fn mass(&self) -> f64 {
        self.mass
    }

    fn is_isotropic(&self) -> bool {
        false
    }

    fn amplitude_matrix(&self, cos_theta: f64, e_total: f64) -> Result<CMatrix> {
        let n = self.channels.len();
        let mut f = CMatrix::zeros(n, n);
        for a0 in open_channels(self, e_total) {
            let col = self.amplitude_column(cos_theta, e_total, a0.index)?;
            f.set_column(a0.index, &col);
        }
        Ok(f)
    }

    fn amplitude_column(&self, cos_theta: f64, e_total: f64, alpha0: usize) -> Result<DVector<Complex64>> {
        let n = self.channels.len();
        let mut col = DVector::from_element(n, ZERO);
        let e0 = self.channels.energy(alpha0);
        if e_total <= e0 {
            return Ok(col);
        }
        for a in open_channels(self, e_total) {
            col[a.index] = self.interpolate(a.index * n + alpha0, e_total - e0, cos_theta)?;
        }
        Ok(col)
    }

    /// Two-point Gauss–Legendre per `cosθ` cell, exact for products of two
    /// bilinearly interpolated amplitudes.
    fn cos_rule(&self, _nodes: usize) -> Vec<(f64, f64)> {
        let x = 0.5 / 3f64.sqrt();
        let mut rule = Vec::with_capacity(2 * self.cos_grid.len());
        for w in self.cos_grid.windows(2) {
            let (mid, half) = (0.5 * (w[0] + w[1]), w[1] - w[0]);
            rule.push((mid - x * half, 0.5 * half));
            rule.push((mid + x * half, 0.5 * half));
        }
        rule
    }

    fn kinetic_breakpoints(&self) -> Vec<f64> {
        self.e_grid.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::random_kmatrix_model;
    use crate::scattering::{amplitude, channel_total_cross_section, pair_cross_section, KMatrixModel};
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const SAMPLE: &str = r#"{
        "units": {"energy": "K", "length": "a0", "mass": "u"},
        "channels": [{"label": "g", "energy": 0.0}, {"label": "e", "energy": 1.0}],
        "E_grid": [0.0, 1.0, 3.0],
        "cos_theta_grid": [-1.0, 0.0, 1.0],
        "amplitudes": {
            "g<-g": [[1,0],[2,0],[3,0],[4,0],[5,0],[6,0],[7,0],[8,0],[9,0]],
            "e<-g": [[0,1],[0,1],[0,1],[0,2],[0,2],[0,2],[0,3],[0,3],[0,3]]
        }
    }"#;

    #[test]
    fn parses_and_interpolates_bilinearly() {
        let t = AmplitudeTable::from_json_str(SAMPLE, 1.0).unwrap();
        assert_eq!(t.units().energy, "K");
        // g<-g sample = 1 + 3 i_E + j_cos on the index grid
        let f = amplitude(&t, 0, 0, 0.5, 2.0).unwrap();
        assert!((f - Complex64::new(4.0 + 1.5 + 1.5, 0.0)).norm() < 1e-14);
        // e<-g read at kinetic energy of the incoming channel
        let f = amplitude(&t, 1, 0, -0.3, 2.0).unwrap();
        assert!((f - Complex64::new(0.0, 2.5)).norm() < 1e-14);
        // missing pairs are zero
        assert_eq!(amplitude(&t, 0, 1, 0.0, 2.0).unwrap(), ZERO);
        assert_eq!(amplitude(&t, 1, 1, 0.0, 2.0).unwrap(), ZERO);
    }

    #[test]
    fn out_of_range_energy_is_an_error() {
        let t = AmplitudeTable::from_json_str(SAMPLE, 1.0).unwrap();
        assert!(matches!(amplitude(&t, 0, 0, 0.0, 3.5), Err(Error::OutOfTableRange { .. })));
    }

    #[test]
    fn rejects_malformed_tables() {
        let bad_grid = SAMPLE.replace("[-1.0, 0.0, 1.0]", "[-0.5, 0.0, 1.0]");
        assert!(AmplitudeTable::from_json_str(&bad_grid, 1.0).is_err());
        let unsorted = SAMPLE.replace("[0.0, 1.0, 3.0]", "[0.0, 3.0, 1.0]");
        assert!(AmplitudeTable::from_json_str(&unsorted, 1.0).is_err());
        let bad_key = SAMPLE.replace("e<-g", "x<-g");
        assert!(AmplitudeTable::from_json_str(&bad_key, 1.0).is_err());
        let short = SAMPLE.replace("[[1,0],[2,0],", "[");
        assert!(AmplitudeTable::from_json_str(&short, 1.0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let t = AmplitudeTable::from_json_str(SAMPLE, 2.0).unwrap();
        let back = AmplitudeTable::from_json_str(&t.to_json_string(), 2.0).unwrap();
        for c in [-1.0, -0.2, 0.7] {
            for e in [1.5, 2.5, 2.9] {
                assert_eq!(t.amplitude_matrix(c, e).unwrap(), back.amplitude_matrix(c, e).unwrap());
            }
        }
    }

    #[test]
    fn cell_rule_is_exact_for_bilinear_products() {
        // |1 + 3i_E + j|² along cosθ is piecewise quadratic
        let t = AmplitudeTable::from_json_str(SAMPLE, 1.0).unwrap();
        let sigma = pair_cross_section(&t, 0, 0, 1.0).unwrap();
        // at E = 1: f = 4 + (1 + c) on [-1, 1], ∫ (5 + c)² dc = 50 + 2/3
        assert!((sigma - 2.0 * PI * (50.0 + 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn tabulated_kmatrix_reproduces_cross_sections() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = random_kmatrix_model(&mut rng, &[0.0, 0.5], 1.0, 0.8);
        let e_grid: Vec<f64> = (0..=400).map(|i| 0.01 * i as f64).collect();
        let table = AmplitudeTable::tabulate(&model, e_grid, vec![-1.0, 1.0]).unwrap();
        for e in [0.7, 1.3, 2.9] {
            for (a, a0) in [(0, 0), (1, 0), (1, 1)] {
                let exact = pair_cross_section(&model, a, a0, e).unwrap();
                let interp = pair_cross_section(&table, a, a0, e).unwrap();
                assert!((exact - interp).abs() < 1e-3 * exact.max(1e-3), "{a}{a0} {exact} {interp}");
            }
            let exact = channel_total_cross_section(&model, 0, e).unwrap();
            assert!((exact - channel_total_cross_section(&table, 0, e).unwrap()).abs() < 1e-3 * exact);
        }
        assert!(table.max_optical_residual() < 1e-6);
    }

    #[test]
    fn optical_residual_flags_non_unitary_data() {
        let ch = ChannelSet::new(vec!["g".into()], vec![0.0]).unwrap();
        let model = KMatrixModel::new(ch, DMatrix::from_element(1, 1, 0.5), 1.0).unwrap();
        let table = AmplitudeTable::tabulate(&model, vec![0.0, 1.0, 2.0], vec![-1.0, 1.0]).unwrap();
        assert!(table.max_optical_residual() < 1e-12);
        let mut json: serde_json::Value = serde_json::from_str(&table.to_json_string()).unwrap();
        json["amplitudes"]["g<-g"][2] = serde_json::json!([-0.5, 0.0]);
        json["amplitudes"]["g<-g"][3] = serde_json::json!([-0.5, 0.0]);
        let bad = AmplitudeTable::from_json_str(&json.to_string(), 1.0).unwrap();
        assert!(bad.max_optical_residual() > 0.1);
    }
}
