//! Synthetic ground-truth worlds and delivery simulation against them.
//!
//! Each participant splits time among a few latent places. A place has a
//! preferred hour, day-of-week weights and a spread over 2 to 4 nearby towers,
//! so sightings carry tower allocation noise.

mod generate;
mod simulate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::MdpError;

pub use generate::{
    epoch, label_rurality, sample_observations, sample_world, LatentLocation, LocationRole,
    ParticipantTruth, RuralityLabel, Tower, WorldSpec,
};
pub use simulate::{
    run_monte_carlo, simulate_delivery, DelaySummary, DeliveryOutcome, MonteCarloResult, Plan,
    PlanOutcomes, PlanSet, DAYS_PER_SLOT, MAX_WAIT_SLOTS,
};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Plan(#[from] MdpError),
    #[error("carrier {participant} not seen at location {location} within {slots} slots")]
    Stalled {
        participant: usize,
        location: usize,
        slots: u64,
    },
    #[error("plan does not match problem: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub tower_count: usize,
    pub participant_count: usize,
    pub urban_clusters: usize,
    pub rural_fraction: f64,
    /// Side of the square region, km.
    pub area_side: f64,
    /// Standard deviation of urban towers around their cluster centre, km.
    pub cluster_spread: f64,
    /// Relative chance of an urban tower being someone's home.
    pub urban_home_weight: f64,
    /// Latent place count is `min_locations` plus a geometric draw, capped.
    pub min_locations: usize,
    pub location_count_p: f64,
    pub max_locations: usize,
    /// Gamma shape of the raw place weights; larger is more even.
    pub weight_shape: f64,
    /// Extra weight on the home place.
    pub home_boost: f64,
    /// Chance a non-home place is anywhere rather than near home.
    pub travel_probability: f64,
    /// Nearby places are centred among this many towers closest to home.
    pub neighbourhood: usize,
    pub emission_min: usize,
    pub emission_max: usize,
    /// Work day weight on Saturday and Sunday relative to a weekday.
    pub weekend_work_weight: f64,
    pub rate_per_day: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            tower_count: 200,
            participant_count: 500,
            urban_clusters: 4,
            rural_fraction: 0.3,
            area_side: 100.0,
            cluster_spread: 4.0,
            urban_home_weight: 2.0,
            min_locations: 2,
            location_count_p: 1.0 / 3.1,
            max_locations: 12,
            weight_shape: 2.0,
            home_boost: 2.0,
            travel_probability: 0.15,
            neighbourhood: 12,
            emission_min: 2,
            emission_max: 4,
            weekend_work_weight: 0.15,
            rate_per_day: 7.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let fail = |m: &str| Err(WorldError::Config(m.to_string()));
        if self.tower_count < 2 {
            return fail("need at least two towers");
        }
        if self.urban_clusters == 0 && self.rural_fraction < 1.0 {
            return fail("urban towers need at least one cluster");
        }
        if !(0.0..=1.0).contains(&self.rural_fraction) {
            return fail("rural_fraction outside [0, 1]");
        }
        if !(self.area_side > 0.0 && self.cluster_spread > 0.0 && self.urban_home_weight > 0.0) {
            return fail("area_side, cluster_spread and urban_home_weight must be positive");
        }
        if self.min_locations == 0 || self.max_locations < self.min_locations {
            return fail("need 1 <= min_locations <= max_locations");
        }
        if !(self.location_count_p > 0.0 && self.location_count_p <= 1.0) {
            return fail("location_count_p outside (0, 1]");
        }
        if !(self.weight_shape > 0.0) {
            return fail("weight_shape must be positive");
        }
        if !(self.home_boost > 0.0 && (0.0..=1.0).contains(&self.travel_probability)) {
            return fail("home_boost must be positive and travel_probability in [0, 1]");
        }
        if self.neighbourhood == 0
            || self.emission_min == 0
            || self.emission_max < self.emission_min
        {
            return fail("need neighbourhood >= 1 and 1 <= emission_min <= emission_max");
        }
        if !(self.weekend_work_weight >= 0.0) {
            return fail("weekend_work_weight must be non-negative");
        }
        if !(self.rate_per_day > 0.0 && self.rate_per_day.is_finite()) {
            return fail("rate_per_day must be positive");
        }
        Ok(())
    }
}
