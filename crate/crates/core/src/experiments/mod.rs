//! Experiment configuration, the three experiment drivers and result emission.
//!
//! Every random choice in a run is drawn from a ChaCha8 stream derived from
//! the run seed and a fixed per-purpose tag, so a (config, seed) pair fully
//! determines the emitted files.

mod delivery;
mod feasibility;
mod prediction;
mod table;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delay::DelayError;
use crate::mdp::MdpError;
use crate::mixture::{ChainConfig, Hyperparameters, MixtureError};
use crate::timebase::{visit_set, DataError, Grouped};
use crate::world::{sample_observations, sample_world, WorldConfig, WorldError, WorldSpec};

pub use delivery::run_delivery;
pub use feasibility::run_feasibility;
pub use prediction::run_prediction;
pub use table::{emit, result_schema, Histogram, ResultRow, ResultTable, CSV_COLUMNS};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("result table: {0}")]
    Table(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Delay(#[from] DelayError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
}

impl ExperimentError {
    /// Stable short name of the error class, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) | Self::Toml(_) => "config",
            Self::Table(_) => "table",
            Self::Io(_) => "io",
            Self::Json(_) => "json",
            Self::Csv(_) | Self::Data(_) => "data",
            Self::World(_) => "world",
            Self::Delay(_) => "delay",
            Self::Mdp(_) => "mdp",
            Self::Mixture(_) => "mixture",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Feasibility,
    Prediction,
    Delivery,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Feasibility => "feasibility",
            Self::Prediction => "prediction",
            Self::Delivery => "delivery",
        }
    }
}

/// Which destinations problems are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DestinationMode {
    Uniform,
    Rural,
    /// Uniform and rural problems sharing the same sources.
    Both,
}

impl DestinationMode {
    pub fn modes(self) -> &'static [&'static str] {
        match self {
            Self::Uniform => &["uniform"],
            Self::Rural => &["rural"],
            Self::Both => &["uniform", "rural"],
        }
    }
}

/// Presence profiles that delivery planning and simulation run on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSource {
    #[default]
    GroundTruth,
    /// Posterior predictive of a mixture fitted to each participant's sightings.
    Fitted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Set in experiment files to guard against running one under the wrong command.
    pub kind: Option<ExperimentKind>,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// A saved world document; replaces generation from `world`.
    pub world_path: Option<PathBuf>,
    pub world: WorldConfig,
    pub duration_days: u32,
    pub pool_sizes: Vec<usize>,
    /// Defaults to 1000 for feasibility and 20 for delivery.
    pub problem_count: Option<usize>,
    /// Defaults to both for feasibility and rural for delivery.
    pub destinations: Option<DestinationMode>,
    /// Simulations per plan and problem.
    pub runs: usize,
    pub eval_sweeps: usize,
    pub profiles: ProfileSource,
    /// Rurality: fewer than `rural_threshold` other towers within `rural_radius` km.
    pub rural_radius: f64,
    pub rural_threshold: usize,
    pub hyper: Hyperparameters,
    pub chain: ChainConfig,
    pub histogram_bin_days: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: None,
            seed: 1,
            out_dir: PathBuf::from("results"),
            world_path: None,
            world: WorldConfig::default(),
            duration_days: 14,
            pool_sizes: vec![10, 18, 32, 56, 100, 178, 316],
            problem_count: None,
            destinations: None,
            runs: 500,
            eval_sweeps: crate::mdp::DEFAULT_EVAL_SWEEPS,
            profiles: ProfileSource::GroundTruth,
            rural_radius: 8.0,
            rural_threshold: 3,
            hyper: Hyperparameters::default(),
            chain: ChainConfig::default(),
            histogram_bin_days: 2.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn problem_count_for(&self, kind: ExperimentKind) -> usize {
        self.problem_count.unwrap_or(match kind {
            ExperimentKind::Delivery => 20,
            _ => 1000,
        })
    }

    pub fn destinations_for(&self, kind: ExperimentKind) -> DestinationMode {
        self.destinations.unwrap_or(match kind {
            ExperimentKind::Delivery => DestinationMode::Rural,
            _ => DestinationMode::Both,
        })
    }

    pub fn validate(&self, kind: ExperimentKind) -> Result<(), ExperimentError> {
        let fail = |m: String| Err(ExperimentError::Config(m));
        if let Some(k) = self.kind {
            if k != kind {
                return fail(format!("config is for {}, not {}", k.name(), kind.name()));
            }
        }
        if self.pool_sizes.is_empty() || self.pool_sizes[0] == 0 {
            return fail("pool sizes must be non-empty and positive".into());
        }
        if self.pool_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return fail("pool sizes must be strictly increasing".into());
        }
        if self.problem_count_for(kind) == 0 {
            return fail("problem_count must be at least 1".into());
        }
        if self.runs == 0 || self.eval_sweeps == 0 || self.duration_days == 0 {
            return fail("runs, eval_sweeps and duration_days must be at least 1".into());
        }
        if !(self.histogram_bin_days > 0.0 && self.histogram_bin_days.is_finite()) {
            return fail("histogram_bin_days must be positive".into());
        }
        if kind == ExperimentKind::Delivery && self.destinations_for(kind) == DestinationMode::Both
        {
            return fail("delivery draws one destination mode, uniform or rural".into());
        }
        self.world.validate()?;
        self.hyper.validate()?;
        self.chain.validate()?;
        Ok(())
    }
}

/// Purposes that get their own random stream.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub(crate) enum Stream {
    World = 1,
    Observations = 2,
    Split = 3,
    Pools = 4,
    Problems = 5,
    Simulation = 6,
    Chains = 7,
}

/// Independent seed for `stream` of a run seeded with `seed`.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

pub(crate) fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream as u64))
}

/// The run's world: loaded from `world_path` or generated from `world`.
pub fn load_or_generate_world(config: &ExperimentConfig) -> Result<WorldSpec, ExperimentError> {
    match &config.world_path {
        Some(path) => {
            let world: WorldSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            Ok(world)
        }
        None => Ok(sample_world(
            &config.world,
            derive_seed(config.seed, Stream::World as u64),
        )?),
    }
}

pub fn observe(world: &WorldSpec, config: &ExperimentConfig) -> Grouped {
    sample_observations(
        world,
        config.duration_days,
        derive_seed(config.seed, Stream::Observations as u64),
    )
}

/// Observed tower sets in world participant order; empty for unseen participants.
pub fn visit_sets(world: &WorldSpec, observations: &Grouped) -> Vec<BTreeSet<u32>> {
    world
        .participants
        .iter()
        .map(|p| {
            observations
                .get(&p.id)
                .map(|r| visit_set(r))
                .unwrap_or_default()
        })
        .collect()
}

/// Chain settings for the `index`-th fitted participant.
pub fn participant_chain(config: &ExperimentConfig, index: usize) -> ChainConfig {
    let base = derive_seed(config.seed ^ config.chain.seed, Stream::Chains as u64);
    ChainConfig {
        seed: derive_seed(base, index as u64),
        ..config.chain
    }
}

/// Wilson score interval at 95%.
pub(crate) fn wilson(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.96_f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Mean and 1.96 standard errors.
pub(crate) fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}
