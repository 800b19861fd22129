//! Per-participant Dirichlet-process mixture over (tower, day, hour)
//! observations, its posterior predictive, and the comparison baselines.

mod baselines;
mod component;
mod gibbs;
mod predictive;

pub use baselines::{
    component_count_summary, heldout_loglik, ComponentSummary, HeldoutDensity, LoglikSummary,
    MarkovBaseline, RandomBaseline, DENSITY_FLOOR,
};
pub use component::{
    ComponentModel, MobilityComponent, MobilityObs, MobilityStats, NigPrior, StudentT,
};
pub use gibbs::{
    gibbs_init, gibbs_init_singletons, gibbs_sweep, run_chain, Cluster, MixtureState, Retained,
};
pub use predictive::{MobilityModel, ModelDocument, ModelSample, MODEL_FORMAT, MODEL_VERSION};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MixtureError {
    #[error("no observations to fit")]
    EmptyData,
    #[error("invalid hyperparameters: {0}")]
    Hyperparameters(String),
    #[error("invalid chain configuration: {0}")]
    Chain(String),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("model document: {0}")]
    Document(String),
}

/// Prior settings shared by every participant's mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    /// DP concentration.
    pub alpha: f64,
    /// Symmetric Dirichlet concentration over towers.
    pub tower_conc: f64,
    /// Symmetric Dirichlet concentration over days of the week.
    pub day_conc: f64,
    /// Prior pseudo-count on the hour mean.
    pub kappa0: f64,
    /// Prior hour mean.
    pub mu0: f64,
    /// Degrees of freedom of the hour precision prior.
    pub nu0: f64,
    /// Reciprocal of the prior mean hour precision.
    pub s0: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            tower_conc: 1.0,
            day_conc: 1.0,
            kappa0: 0.01,
            mu0: 12.0,
            nu0: 0.01,
            s0: 3.0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<(), MixtureError> {
        let fields = [
            ("alpha", self.alpha),
            ("tower_conc", self.tower_conc),
            ("day_conc", self.day_conc),
            ("kappa0", self.kappa0),
            ("nu0", self.nu0),
            ("s0", self.s0),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(MixtureError::Hyperparameters(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if !(self.mu0 > 0.0 && self.mu0.is_finite()) {
            return Err(MixtureError::Hyperparameters(format!(
                "mu0 must be positive, got {}",
                self.mu0
            )));
        }
        Ok(())
    }
}

/// Starting partition of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainInit {
    /// Every observation in one cluster.
    #[default]
    SingleCluster,
    /// Every observation in its own cluster.
    Singletons,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub burn_in: usize,
    pub thinning: usize,
    /// Number of retained samples.
    pub samples: usize,
    pub seed: u64,
    pub init: ChainInit,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            burn_in: 500,
            thinning: 5,
            samples: 100,
            seed: 0,
            init: ChainInit::SingleCluster,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<(), MixtureError> {
        if self.samples == 0 {
            return Err(MixtureError::Chain(
                "at least one sample must be retained".into(),
            ));
        }
        if self.thinning == 0 {
            return Err(MixtureError::Chain("thinning must be at least 1".into()));
        }
        Ok(())
    }
}
