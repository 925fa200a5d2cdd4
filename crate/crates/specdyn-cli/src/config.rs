//! Run configuration: one JSON document with a section per pipeline
//! stage. Unknown fields are rejected and every random draw is seeded
//! explicitly, so a stored config reproduces its run byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use specdyn_core::simulator::{PotentialSpec, DEFAULT_BURN_IN, DEFAULT_INNER_DT};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimation: Option<EstimationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clustering: Option<ClusteringConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkConfig>,
    #[serde(default)]
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub potential: PotentialSpec,
    pub x0: Vec<f64>,
    #[serde(default = "default_inner_dt")]
    pub inner_dt: f64,
    pub n_samples: usize,
    pub stride: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub bandwidth: f64,
    pub n_features: usize,
    pub drop_tol: f64,
    pub left_seed: u64,
    pub right_seed: u64,
    pub left_quadrature_seed: u64,
    pub right_quadrature_seed: u64,
    /// Fractional padding of the data bounding box defining the uniform
    /// reference measure for the right feature map.
    #[serde(default = "default_box_padding")]
    pub box_padding: f64,
    /// Cap on Monte-Carlo samples per orthogonalization Gram matrix;
    /// defaults to 20x the raw feature count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gram_sample_cap: Option<usize>,
}

impl FeatureConfig {
    pub fn gram_cap(&self) -> usize {
        self.gram_sample_cap.unwrap_or(20 * self.n_features)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    pub rank: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringConfig {
    /// Cluster counts to fit; one labels file is written per value.
    pub m_values: Vec<usize>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    pub seed: u64,
    /// Compare against gradient-descent basins of the simulated potential
    /// (1-d only) and report the misclassification rate.
    #[serde(default)]
    pub compare_to_basins: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub n_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub rank: usize,
    /// Quadrature grid for the reference projection.
    pub grid_lower: f64,
    pub grid_upper: f64,
    pub grid_nodes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default = "default_trajectory_path")]
    pub trajectory: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig { trajectory: default_trajectory_path() }
    }
}

fn default_inner_dt() -> f64 {
    DEFAULT_INNER_DT
}

fn default_burn_in() -> u64 {
    DEFAULT_BURN_IN
}

fn default_box_padding() -> f64 {
    0.1
}

fn default_restarts() -> usize {
    specdyn_core::clustering::DEFAULT_RESTARTS
}

fn default_max_iter() -> usize {
    specdyn_core::clustering::DEFAULT_MAX_ITER
}

fn default_trajectory_path() -> String {
    "trajectory.spdy".to_string()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Field-level checks beyond what the schema can express.
    pub fn validate(&self) -> Result<()> {
        if let Some(sim) = &self.simulation {
            if sim.x0.len() != sim.potential.dim() {
                return Err(CliError::config("x0 dimension does not match the potential"));
            }
            if sim.n_samples == 0 || sim.stride == 0 {
                return Err(CliError::config("n_samples and stride must be positive"));
            }
            if !(sim.inner_dt.is_finite() && sim.inner_dt > 0.0) {
                return Err(CliError::config("inner_dt must be finite and positive"));
            }
        }
        if let Some(f) = &self.features {
            if !(f.bandwidth.is_finite() && f.bandwidth > 0.0) {
                return Err(CliError::config("bandwidth must be finite and positive"));
            }
            if f.n_features == 0 {
                return Err(CliError::config("n_features must be positive"));
            }
            if !(f.drop_tol.is_finite() && f.drop_tol > 0.0 && f.drop_tol < 1.0) {
                return Err(CliError::config("drop_tol must lie in (0, 1)"));
            }
            if !(f.box_padding.is_finite() && f.box_padding >= 0.0) {
                return Err(CliError::config("box_padding must be finite and nonnegative"));
            }
            if f.gram_cap() == 0 {
                return Err(CliError::config("gram_sample_cap must be positive"));
            }
        }
        if let Some(e) = &self.estimation {
            if e.rank == 0 {
                return Err(CliError::config("estimation rank must be at least 1"));
            }
        }
        if let Some(c) = &self.clustering {
            if c.m_values.is_empty() || c.m_values.contains(&0) {
                return Err(CliError::config("m_values must be nonempty positive counts"));
            }
            if c.restarts == 0 || c.max_iter == 0 {
                return Err(CliError::config("restarts and max_iter must be positive"));
            }
        }
        if let Some(b) = &self.benchmark {
            if b.n_values.is_empty() || b.seeds.is_empty() {
                return Err(CliError::config("benchmark needs n_values and seeds"));
            }
            if b.n_values.iter().any(|&n| n < 2) {
                return Err(CliError::config("benchmark n_values must be at least 2"));
            }
            if b.rank == 0 {
                return Err(CliError::config("benchmark rank must be at least 1"));
            }
            if !(b.grid_lower.is_finite() && b.grid_upper.is_finite() && b.grid_lower < b.grid_upper)
            {
                return Err(CliError::config("benchmark grid bounds must be finite and ordered"));
            }
            if b.grid_nodes < 2 {
                return Err(CliError::config("benchmark grid needs at least 2 nodes"));
            }
        }
        Ok(())
    }

    pub fn simulation(&self) -> Result<&SimulationConfig> {
        self.simulation.as_ref().ok_or_else(|| CliError::config("missing `simulation` section"))
    }

    pub fn features(&self) -> Result<&FeatureConfig> {
        self.features.as_ref().ok_or_else(|| CliError::config("missing `features` section"))
    }

    pub fn estimation(&self) -> Result<&EstimationConfig> {
        self.estimation.as_ref().ok_or_else(|| CliError::config("missing `estimation` section"))
    }

    pub fn clustering(&self) -> Result<&ClusteringConfig> {
        self.clustering.as_ref().ok_or_else(|| CliError::config("missing `clustering` section"))
    }

    pub fn benchmark_section(&self) -> Result<&BenchmarkConfig> {
        self.benchmark.as_ref().ok_or_else(|| CliError::config("missing `benchmark` section"))
    }
}
