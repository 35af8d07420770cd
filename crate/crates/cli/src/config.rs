use std::fmt;
use std::path::{Path, PathBuf};

use collisional::dynamics::DensityMatrix;
use collisional::io::{channel_set, complex_matrix, ChannelSpec, ComplexValue, Units};
use collisional::scattering::{AmplitudeTable, ChannelSet, KMatrixModel, ScatteringModel};
use collisional::thermal::{GasParameters, QuadratureConfig};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// A configuration problem located by its field path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl fmt::Display) -> Self {
        Self { path: path.into(), message: message.to_string() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "config: {}", self.message)
        } else {
            write!(f, "config field `{}`: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub units: Units,
    pub channels: Vec<ChannelSpec>,
    pub gas: GasParameters,
    pub scattering: ScatteringSpec,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evolve: Option<EvolveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<TrajectorySpec>,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScatteringSpec {
    KMatrix { a: Vec<Vec<f64>> },
    Table { path: PathBuf },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveSpec {
    pub t_max: f64,
    pub n_steps: usize,
    pub initial: InitialSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    DensityMatrix(Vec<Vec<ComplexValue>>),
    Pure(Vec<ComplexValue>),
    /// Channel label.
    Basis(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub n_traj: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    pub collision_models: Vec<CollisionFixture>,
    pub rate_files: Vec<PathBuf>,
    pub mc_samples: usize,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self { collision_models: Vec::new(), rate_files: Vec::new(), mc_samples: 200_000 }
    }
}

/// An explicit monitoring model to check, matrices as rows of complex entries.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollisionFixture {
    pub dim_sys: usize,
    pub dim_env: usize,
    pub s: Vec<Vec<ComplexValue>>,
    pub gamma: Vec<Vec<ComplexValue>>,
    pub rho_env: Vec<Vec<ComplexValue>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    pub rates: String,
    pub trajectory: String,
    pub ensemble: String,
    pub verify: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: None,
            rates: "rates.json".into(),
            trajectory: "trajectory.csv".into(),
            ensemble: "ensemble.csv".into(),
            verify: "verify.json".into(),
        }
    }
}

/// Parses a config, reporting the failing field path on error.
pub fn parse(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| ConfigError::new(e.path().to_string(), e.inner()))
}

/// A config with every input checked and its model built.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub channels: ChannelSet,
    pub model: Box<dyn ScatteringModel>,
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario").field("config", &self.config).finish_non_exhaustive()
    }
}

pub fn load(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
    let config = parse(&text)?;
    resolve(config, path.parent().unwrap_or(Path::new(".")))
}

/// Validates a parsed config; relative paths are taken from `base`.
pub fn resolve(mut config: ScenarioConfig, base: &Path) -> Result<Scenario, ConfigError> {
    let channels = channel_set(&config.channels).map_err(|e| ConfigError::new("channels", e))?;
    config.gas.validate().map_err(|e| ConfigError::new("gas", e))?;
    config.quadrature.validate().map_err(|e| ConfigError::new("quadrature", e))?;
    let n = channels.len();
    let model: Box<dyn ScatteringModel> = match &mut config.scattering {
        ScatteringSpec::KMatrix { a } => {
            if a.len() != n || a.iter().any(|r| r.len() != n) {
                return Err(ConfigError::new("scattering.k_matrix.a", format!("expected a {n}x{n} matrix")));
            }
            let m = DMatrix::from_fn(n, n, |i, j| a[i][j]);
            Box::new(KMatrixModel::new(channels.clone(), m, config.gas.mass).map_err(|e| ConfigError::new("scattering.k_matrix.a", e))?)
        }
        ScatteringSpec::Table { path } => {
            if path.is_relative() {
                *path = base.join(&*path);
            }
            let table = AmplitudeTable::from_path(&*path, config.gas.mass).map_err(|e| ConfigError::new("scattering.table.path", e))?;
            if table.channels() != &channels {
                return Err(ConfigError::new("scattering.table.path", "table channels differ from the configured channels"));
            }
            Box::new(table)
        }
    };
    if let Some(ev) = &config.evolve {
        collisional::dynamics::uniform_grid(ev.t_max, ev.n_steps).map_err(|e| ConfigError::new("evolve", e))?;
        initial_state(&ev.initial, &channels)?;
    }
    if let Some(tr) = &config.trajectories {
        if tr.n_traj == 0 {
            return Err(ConfigError::new("trajectories.n_traj", "must be at least 1"));
        }
    }
    if config.verify.mc_samples < 2 {
        return Err(ConfigError::new("verify.mc_samples", "must be at least 2"));
    }
    for (k, fx) in config.verify.collision_models.iter().enumerate() {
        fixture_matrices(fx).map_err(|e| ConfigError::new(format!("verify.collision_models[{k}]"), e))?;
    }
    for p in &mut config.verify.rate_files {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    if let Some(dir) = &mut config.output.dir {
        if dir.is_relative() {
            *dir = base.join(&*dir);
        }
    }
    Ok(Scenario { config, channels, model })
}

/// The configured initial state, as a pure vector when one was given.
pub enum Initial {
    Pure(DVector<Complex64>, DensityMatrix),
    Mixed(DensityMatrix),
}

impl Initial {
    pub fn density(&self) -> &DensityMatrix {
        match self {
            Initial::Pure(_, rho) | Initial::Mixed(rho) => rho,
        }
    }
}

pub fn initial_state(spec: &InitialSpec, channels: &ChannelSet) -> Result<Initial, ConfigError> {
    let err = |e: collisional::Error| ConfigError::new("evolve.initial", e);
    match spec {
        InitialSpec::DensityMatrix(rows) => {
            let rho = complex_matrix(rows).map_err(err)?;
            Ok(Initial::Mixed(DensityMatrix::new(channels.clone(), rho).map_err(err)?))
        }
        InitialSpec::Pure(v) => {
            let psi = DVector::from_iterator(v.len(), v.iter().map(|&z| Complex64::from(z)));
            if psi.len() != channels.len() {
                return Err(ConfigError::new("evolve.initial.pure", format!("expected {} components", channels.len())));
            }
            let rho = DensityMatrix::pure(channels.clone(), &psi).map_err(err)?;
            Ok(Initial::Pure(psi, rho))
        }
        InitialSpec::Basis(label) => {
            let k = channels
                .index_of(label)
                .ok_or_else(|| ConfigError::new("evolve.initial.basis", format!("unknown channel {label:?}")))?;
            let mut psi = DVector::zeros(channels.len());
            psi[k] = Complex64::new(1.0, 0.0);
            let rho = DensityMatrix::pure(channels.clone(), &psi).map_err(err)?;
            Ok(Initial::Pure(psi, rho))
        }
    }
}

pub(crate) struct FixtureMatrices {
    pub s: collisional::CMatrix,
    pub gamma: collisional::CMatrix,
    pub rho_env: collisional::CMatrix,
}

pub(crate) fn fixture_matrices(fx: &CollisionFixture) -> collisional::Result<FixtureMatrices> {
    let total = fx.dim_sys * fx.dim_env;
    let s = complex_matrix(&fx.s)?;
    let gamma = complex_matrix(&fx.gamma)?;
    let rho_env = complex_matrix(&fx.rho_env)?;
    for (m, d) in [(&s, total), (&gamma, total), (&rho_env, fx.dim_env)] {
        if m.nrows() != d {
            return Err(collisional::Error::DimensionMismatch { expected: d, found: m.nrows() });
        }
    }
    Ok(FixtureMatrices { s, gamma, rho_env })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "channels": [{"label": "g", "energy": 0.0}, {"label": "e", "energy": 0.5}],
        "gas": {"n_gas": 0.1, "mass": 1.0, "beta": 1.0},
        "scattering": {"k_matrix": {"a": [[0.3, 0.1], [0.1, -0.2]]}},
        "evolve": {"t_max": 1.0, "n_steps": 4, "initial": {"basis": "e"}}
    }"#;

    #[test]
    fn minimal_config_resolves() {
        let s = resolve(parse(MINIMAL).unwrap(), Path::new(".")).unwrap();
        assert_eq!(s.channels.len(), 2);
        assert_eq!(s.config.quadrature, QuadratureConfig::default());
        assert_eq!(s.config.output.rates, "rates.json");
    }

    #[test]
    fn unknown_field_reports_its_path() {
        let text = MINIMAL.replace("\"beta\"", "\"temperature\"");
        let err = parse(&text).unwrap_err();
        assert_eq!(err.path, "gas.temperature");
        assert!(err.message.contains("temperature"), "{err}");
        let text = MINIMAL.replace("\"n_steps\": 4", "\"n_steps\": -4");
        assert_eq!(parse(&text).unwrap_err().path, "evolve.n_steps");
    }

    #[test]
    fn semantic_errors_report_their_field() {
        let bad = [
            (MINIMAL.replace("[0.1, -0.2]", "[0.2, -0.2]"), "scattering.k_matrix.a"),
            (MINIMAL.replace("\"n_gas\": 0.1", "\"n_gas\": -1"), "gas"),
            (MINIMAL.replace("\"basis\": \"e\"", "\"basis\": \"x\""), "evolve.initial.basis"),
            (MINIMAL.replace("\"label\": \"e\"", "\"label\": \"g\""), "channels"),
            (MINIMAL.replace("{\"basis\": \"e\"}", "{\"pure\": [1, 1]}"), "evolve.initial"),
        ];
        for (text, path) in bad {
            let err = resolve(parse(&text).unwrap(), Path::new(".")).unwrap_err();
            assert_eq!(err.path, path, "{err}");
        }
    }

    #[test]
    fn m_is_accepted_for_mass() {
        let text = MINIMAL.replace("\"mass\"", "\"m\"");
        assert_eq!(parse(&text).unwrap().gas.mass, 1.0);
    }
}
