use serde::{Deserialize, Serialize};

use super::{
    run_chain, ChainConfig, Cluster, ComponentModel, Hyperparameters, MixtureError, MixtureState,
    MobilityComponent, MobilityObs, MobilityStats,
};
use crate::timebase::{ObservationRecord, SlotIndex};

pub const MODEL_FORMAT: &str = "crowdship.mobility-model";
pub const MODEL_VERSION: u32 = 1;

/// A retained posterior state: cluster sizes and sufficient statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSample {
    pub sweep: usize,
    pub clusters: Vec<Cluster<MobilityStats>>,
}

impl ModelSample {
    pub fn from_state(sweep: usize, state: MixtureState<MobilityStats>) -> Self {
        Self {
            sweep,
            clusters: state.clusters,
        }
    }

    pub fn observation_count(&self) -> usize {
        self.clusters.iter().map(|c| c.size).sum()
    }

    /// Mixing weights `n_k / (N + alpha)` followed by the new-cluster mass.
    fn weights(&self, alpha: f64) -> (Vec<f64>, f64) {
        let denom = self.observation_count() as f64 + alpha;
        (
            self.clusters
                .iter()
                .map(|c| c.size as f64 / denom)
                .collect(),
            alpha / denom,
        )
    }

    fn density(&self, comp: &MobilityComponent, prior: &MobilityStats, obs: &MobilityObs) -> f64 {
        let (weights, fresh) = self.weights(comp.hyper.alpha);
        let mut total = fresh * comp.ln_predictive(prior, obs).exp();
        for (w, c) in weights.iter().zip(&self.clusters) {
            total += w * comp.ln_predictive(&c.stats, obs).exp();
        }
        total
    }

    /// Unnormalised tower density at `day`, averaged over `hours`.
    fn tower_profile(
        &self,
        comp: &MobilityComponent,
        prior: &MobilityStats,
        day: u8,
        hours: &[f64],
        out: &mut [f64],
    ) {
        let (weights, fresh) = self.weights(comp.hyper.alpha);
        let a = comp.hyper.tower_conc;
        let towers = f64::from(comp.tower_count);
        let hour_mean = |stats: &MobilityStats| {
            let t = comp.hour_predictive(stats);
            hours.iter().map(|&h| t.pdf(h)).sum::<f64>() / hours.len() as f64
        };

        let mut baseline = fresh * comp.day_predictive(prior, day) * hour_mean(prior) / towers;
        for (w, c) in weights.iter().zip(&self.clusters) {
            let factor = w * comp.day_predictive(&c.stats, day) * hour_mean(&c.stats)
                / (c.stats.n as f64 + towers * a);
            baseline += factor * a;
            for (&tower, &count) in &c.stats.towers {
                out[tower as usize] += factor * f64::from(count);
            }
        }
        for v in out.iter_mut() {
            *v += baseline;
        }
    }
}

/// Posterior samples of one participant's mixture.
#[derive(Debug, Clone)]
pub struct MobilityModel {
    pub participant: String,
    pub chain: ChainConfig,
    component: MobilityComponent,
    prior_stats: MobilityStats,
    samples: Vec<ModelSample>,
}

impl MobilityModel {
    pub fn fit(
        participant: &str,
        records: &[ObservationRecord],
        hyper: Hyperparameters,
        tower_count: u32,
        chain: &ChainConfig,
    ) -> Result<Self, MixtureError> {
        hyper.validate()?;
        let component = MobilityComponent::new(hyper, tower_count);
        let data: Vec<MobilityObs> = records.iter().map(MobilityObs::from).collect();
        let retained = run_chain(&component, &data, hyper.alpha, chain)?;
        let samples = retained
            .into_iter()
            .map(|r| ModelSample::from_state(r.sweep, r.state))
            .collect();
        Ok(Self::from_samples(participant, component, *chain, samples))
    }

    pub fn from_samples(
        participant: &str,
        component: MobilityComponent,
        chain: ChainConfig,
        samples: Vec<ModelSample>,
    ) -> Self {
        Self {
            participant: participant.to_string(),
            chain,
            prior_stats: component.empty_stats(),
            component,
            samples,
        }
    }

    pub fn component(&self) -> &MobilityComponent {
        &self.component
    }

    pub fn samples(&self) -> &[ModelSample] {
        &self.samples
    }

    pub fn tower_count(&self) -> u32 {
        self.component.tower_count
    }

    /// Posterior predictive density of a (tower, day, hour) observation,
    /// averaged over retained samples.
    pub fn density(&self, tower: u32, day: u8, hour: f64) -> f64 {
        let obs = MobilityObs { tower, day, hour };
        self.samples
            .iter()
            .map(|s| s.density(&self.component, &self.prior_stats, &obs))
            .sum::<f64>()
            / self.samples.len() as f64
    }

    /// Distribution over towers for a slot: the predictive density at the
    /// slot's day and its two quarter-point hours, averaged and normalised.
    pub fn tower_given_slot(&self, slot: SlotIndex) -> Vec<f64> {
        let mut out = vec![0.0; self.component.tower_count as usize];
        let hours = slot.quarter_hours();
        for sample in &self.samples {
            sample.tower_profile(
                &self.component,
                &self.prior_stats,
                slot.day(),
                &hours,
                &mut out,
            );
        }
        let total: f64 = out.iter().sum();
        for v in &mut out {
            *v /= total;
        }
        out
    }

    pub fn mean_cluster_count(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.clusters.len() as f64)
            .sum::<f64>()
            / self.samples.len() as f64
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            participant: self.participant.clone(),
            tower_count: self.component.tower_count,
            hyper: self.component.hyper,
            chain: self.chain,
            samples: self.samples.clone(),
        }
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self, MixtureError> {
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(MixtureError::Document(format!(
                "unsupported format {} v{}",
                doc.format, doc.version
            )));
        }
        doc.hyper.validate()?;
        if doc.samples.is_empty() {
            return Err(MixtureError::Document("no samples".into()));
        }
        let component = MobilityComponent::new(doc.hyper, doc.tower_count);
        let mut samples = doc.samples;
        for cluster in samples.iter_mut().flat_map(|s| s.clusters.iter_mut()) {
            if cluster.stats.days.iter().sum::<u32>() != cluster.stats.n
                || cluster.size != cluster.stats.n as usize
                || cluster.stats.towers.keys().any(|&t| t >= doc.tower_count)
            {
                return Err(MixtureError::Document(
                    "inconsistent cluster statistics".into(),
                ));
            }
            component.refresh(&mut cluster.stats);
        }
        Ok(Self::from_samples(
            &doc.participant,
            component,
            doc.chain,
            samples,
        ))
    }
}

/// Versioned JSON form of a fitted participant model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub participant: String,
    pub tower_count: u32,
    pub hyper: Hyperparameters,
    pub chain: ChainConfig,
    pub samples: Vec<ModelSample>,
}
