//! Scenario configuration (JSON) and its resolution into a grid model,
//! covariances and an injection profile.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::block::{ArithConfig, Precision};
use crate::error::{Error, Result};
use crate::grid::{
    default_pmu_placement, synthetic_feeder, BusId, FeederSpec, GridModel, NetworkFile,
};
use crate::loadflow::{InjectionProfile, LoadFlowOptions, SyntheticProfile};
use crate::noise::{
    build_measurement_covariance, build_process_covariance, CovarianceDiag, NoiseSource,
    PolarUncertainty,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Maximum magnitude error, pu (three standard deviations).
    pub e_rho: f64,
    /// Maximum phase error, rad (three standard deviations).
    pub e_phi: f64,
    /// Process-noise variance per state, pu².
    pub q: f64,
    /// Current magnitude at which the current-channel variances are projected.
    pub nominal_current: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            e_rho: 1e-3,
            e_phi: 1.5e-3,
            q: 1e-6,
            nominal_current: 1.0,
            seed: 1,
        }
    }
}

/// ```json
/// {
///   "network": "feeder.json",
///   "pmu": [1, 3, 5],
///   "injections": "injections.csv",
///   "noise": { "e_rho": 1e-3, "e_phi": 1.5e-3, "q": 1e-6, "seed": 7 },
///   "horizon": 2000,
///   "parallelism": 4,
///   "precision": "binary32"
/// }
/// ```
///
/// Without `network` a synthetic feeder is built from `feeder`; without
/// `pmu` the network file's list (or an automatic observable placement) is
/// used; without `injections` a random-walk profile is drawn from `profile`.
/// Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub network: Option<PathBuf>,
    pub feeder: FeederSpec,
    pub pmu: Option<Vec<BusId>>,
    pub injections: Option<PathBuf>,
    pub profile: SyntheticProfile,
    pub noise: NoiseConfig,
    pub horizon: usize,
    pub parallelism: usize,
    pub precision: Precision,
    pub arith: ArithConfig,
    pub loadflow: LoadFlowOptions,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            network: None,
            feeder: FeederSpec::default(),
            pmu: None,
            injections: None,
            profile: SyntheticProfile::default(),
            noise: NoiseConfig::default(),
            horizon: 2000,
            parallelism: 4,
            precision: Precision::Binary32,
            arith: ArithConfig::default(),
            loadflow: LoadFlowOptions::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: ScenarioConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.network, &mut cfg.injections]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::InvalidInput("parallelism must be at least 1".into()));
        }
        let n = &self.noise;
        if !(n.e_rho >= 0.0 && n.e_phi >= 0.0 && n.nominal_current > 0.0) {
            return Err(Error::InvalidInput(
                "noise: e_rho, e_phi must be >= 0 and nominal_current > 0".into(),
            ));
        }
        if !(self.loadflow.tolerance > 0.0) || self.loadflow.max_iterations == 0 {
            return Err(Error::InvalidInput(
                "loadflow: tolerance > 0 and max_iterations >= 1 required".into(),
            ));
        }
        self.arith.validate()
    }
}

/// A configuration resolved into everything the stimuli generator needs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub grid: GridModel,
    pub r: CovarianceDiag,
    pub q: CovarianceDiag,
    pub injections: InjectionProfile,
}

impl Scenario {
    pub fn build(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let (network, file_pmu) = match &config.network {
            Some(path) => {
                let file = NetworkFile::load(path)?;
                (file.to_network()?, file.pmu)
            }
            None => (synthetic_feeder(&config.feeder)?, Vec::new()),
        };
        let pmu = match &config.pmu {
            Some(p) => p.clone(),
            None if !file_pmu.is_empty() => file_pmu,
            None => default_pmu_placement(&network)?,
        };
        let grid = GridModel::new(network, &pmu)?;
        // Noise-free stimuli still need a positive definite R; the floor keeps
        // W = HPHᵀ + R well conditioned.
        let polar = PolarUncertainty::from_max_errors(
            config.noise.e_rho.max(1e-6),
            config.noise.e_phi.max(1e-6),
        );
        let r = build_measurement_covariance(
            &grid.network,
            &grid.selector,
            polar,
            config.noise.nominal_current,
        )?;
        let q = build_process_covariance(grid.network.state_count(), config.noise.q)?;
        let injections = match &config.injections {
            Some(path) => InjectionProfile::from_csv(path, &grid.network, Some(config.horizon))?,
            None => config.profile.generate(
                &grid.network,
                config.horizon,
                &NoiseSource::new(config.noise.seed),
            )?,
        };
        Ok(Scenario {
            config: config.clone(),
            grid,
            r,
            q,
            injections,
        })
    }
}
