use std::path::Path;

use anyhow::{bail, Context};
use beamtrack::sim_harness::{GainModel, PriorCenter, Scheme, SimConfig};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Run configuration as read from JSON. Every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub n_tx: usize,
    pub n_rx: usize,
    pub spacing_ratio: f64,
    pub grid_size: usize,
    pub estimation_grid: usize,
    pub sigma_p: f64,
    pub snr_db_list: Vec<f64>,
    pub horizon: usize,
    pub trials: usize,
    /// `proposed`, `cycling:N`, `fixed:K` or `all`.
    pub scheme: String,
    pub seed: u64,
    /// Trial index traced by `track`.
    pub trial: u64,
    pub cold_start_beams: usize,
    pub warmup: usize,
    pub genie_feedback: bool,
    pub unit_modulus_gain: bool,
    pub on_grid: bool,
    pub lut_sigmas: Vec<f64>,
    pub lut_noise_var: f64,
    pub crlb_curve: CurveConfig,
}

/// Beam pair and operating point for `crlb-curve`. Without explicit
/// indices the lookup-table pair for `sigma_p` centered at 0 is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveConfig {
    pub beam_i: Option<usize>,
    pub beam_j: Option<usize>,
    pub noise_var: f64,
    pub gain_power: f64,
    pub points: usize,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            beam_i: None,
            beam_j: None,
            noise_var: 0.05,
            gain_power: 1.0,
            points: 1536,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            schema_version: SCHEMA_VERSION,
            n_tx: sim.n_tx,
            n_rx: sim.n_rx,
            spacing_ratio: sim.spacing_ratio,
            grid_size: sim.grid_size,
            estimation_grid: sim.estimation_grid,
            sigma_p: sim.sigma_p,
            snr_db_list: sim.snr_db_list,
            horizon: sim.horizon,
            trials: sim.trials,
            scheme: "all".into(),
            seed: sim.seed,
            trial: 0,
            cold_start_beams: sim.cold_start_beams,
            warmup: sim.warmup,
            genie_feedback: false,
            unit_modulus_gain: false,
            on_grid: false,
            lut_sigmas: sim.lut_sigmas,
            lut_noise_var: sim.lut_noise_var,
            crlb_curve: CurveConfig::default(),
        }
    }
}

/// Configuration problems; reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(|e| config_err(format!("{e:#}")))?;
        Self::parse(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                anyhow::anyhow!("{}", e.inner())
            } else {
                anyhow::anyhow!("field `{path}`: {}", e.inner())
            }
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            bail!(
                "field `schema_version`: unsupported version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            );
        }
        Ok(cfg)
    }

    pub fn schemes(&self) -> anyhow::Result<Vec<Scheme>> {
        if self.scheme.trim() == "all" {
            return Ok(Scheme::standard_set().to_vec());
        }
        self.scheme
            .parse::<Scheme>()
            .map(|s| vec![s])
            .map_err(|e| config_err(format!("field `scheme`: {e}")))
    }

    /// Simulation settings for `scheme`, validated.
    pub fn sim_config(&self, scheme: Scheme) -> anyhow::Result<SimConfig> {
        let cfg = SimConfig {
            n_tx: self.n_tx,
            n_rx: self.n_rx,
            spacing_ratio: self.spacing_ratio,
            grid_size: self.grid_size,
            estimation_grid: self.estimation_grid,
            sigma_p: self.sigma_p,
            snr_db_list: self.snr_db_list.clone(),
            horizon: self.horizon,
            trials: self.trials,
            scheme,
            seed: self.seed,
            cold_start_beams: self.cold_start_beams,
            warmup: self.warmup,
            prior_center: if self.genie_feedback {
                PriorCenter::PreviousTruth
            } else {
                PriorCenter::PreviousEstimate
            },
            gain_model: if self.unit_modulus_gain {
                GainModel::UnitModulus
            } else {
                GainModel::Rayleigh
            },
            on_grid: self.on_grid,
            injected_jump: None,
            lut_sigmas: self.lut_sigmas.clone(),
            lut_noise_var: self.lut_noise_var,
        };
        if self.snr_db_list.is_empty() {
            return Err(config_err("field `snr_db_list`: must not be empty"));
        }
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }
}
