//! Collapsed Gibbs sampling for Dirichlet-process mixtures.
//!
//! Mixing weights and component parameters are integrated out; the chain
//! state is the partition alone, carried as per-cluster sufficient statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ChainConfig, ChainInit, ComponentModel, MixtureError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cluster<S> {
    pub size: usize,
    pub stats: S,
}

#[derive(Debug, Clone)]
pub struct MixtureState<S> {
    /// Cluster label per observation, contiguous in `0..clusters.len()`.
    pub assignments: Vec<usize>,
    pub clusters: Vec<Cluster<S>>,
}

impl<S> MixtureState<S> {
    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    /// The partition in canonical form: labels renumbered by first appearance.
    pub fn canonical_labels(&self) -> Vec<usize> {
        let mut map = vec![usize::MAX; self.clusters.len()];
        let mut next = 0;
        self.assignments
            .iter()
            .map(|&k| {
                if map[k] == usize::MAX {
                    map[k] = next;
                    next += 1;
                }
                map[k]
            })
            .collect()
    }
}

/// State after a retained sweep.
#[derive(Debug, Clone)]
pub struct Retained<S> {
    /// 1-based sweep number.
    pub sweep: usize,
    pub state: MixtureState<S>,
}

pub fn gibbs_init<M: ComponentModel>(
    model: &M,
    data: &[M::Datum],
) -> Result<MixtureState<M::Stats>, MixtureError> {
    if data.is_empty() {
        return Err(MixtureError::EmptyData);
    }
    let mut stats = model.empty_stats();
    for datum in data {
        model.observe(&mut stats, datum);
    }
    Ok(MixtureState {
        assignments: vec![0; data.len()],
        clusters: vec![Cluster {
            size: data.len(),
            stats,
        }],
    })
}

pub fn gibbs_init_singletons<M: ComponentModel>(
    model: &M,
    data: &[M::Datum],
) -> Result<MixtureState<M::Stats>, MixtureError> {
    if data.is_empty() {
        return Err(MixtureError::EmptyData);
    }
    let clusters = data
        .iter()
        .map(|datum| {
            let mut stats = model.empty_stats();
            model.observe(&mut stats, datum);
            Cluster { size: 1, stats }
        })
        .collect();
    Ok(MixtureState {
        assignments: (0..data.len()).collect(),
        clusters,
    })
}

/// One systematic-scan sweep reseating every observation in turn.
pub fn gibbs_sweep<M: ComponentModel, R: Rng + ?Sized>(
    state: &mut MixtureState<M::Stats>,
    model: &M,
    data: &[M::Datum],
    alpha: f64,
    rng: &mut R,
) {
    let ln_alpha = alpha.ln();
    let empty = model.empty_stats();
    let mut ln_weights: Vec<f64> = Vec::with_capacity(state.clusters.len() + 1);

    for (i, datum) in data.iter().enumerate() {
        let old = state.assignments[i];
        let cluster = &mut state.clusters[old];
        cluster.size -= 1;
        model.forget(&mut cluster.stats, datum);
        if cluster.size == 0 {
            remove_cluster(state, old);
        }

        ln_weights.clear();
        ln_weights.extend(
            state
                .clusters
                .iter()
                .map(|c| (c.size as f64).ln() + model.ln_predictive(&c.stats, datum)),
        );
        ln_weights.push(ln_alpha + model.ln_predictive(&empty, datum));

        let choice = sample_log_categorical(&mut ln_weights, rng);
        if choice == state.clusters.len() {
            state.clusters.push(Cluster {
                size: 0,
                stats: empty.clone(),
            });
        }
        let cluster = &mut state.clusters[choice];
        cluster.size += 1;
        model.observe(&mut cluster.stats, datum);
        state.assignments[i] = choice;
    }
}

fn remove_cluster<S>(state: &mut MixtureState<S>, label: usize) {
    let last = state.clusters.len() - 1;
    state.clusters.swap_remove(label);
    if label != last {
        for z in state.assignments.iter_mut().filter(|z| **z == last) {
            *z = label;
        }
    }
}

/// Draws an index with probability proportional to `exp(ln_weights[i])`.
/// The slice is overwritten with unnormalised weights.
pub(crate) fn sample_log_categorical<R: Rng + ?Sized>(
    ln_weights: &mut [f64],
    rng: &mut R,
) -> usize {
    let max = ln_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for w in ln_weights.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
    }
    let mut u = rng.random::<f64>() * total;
    for (i, w) in ln_weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    ln_weights.len() - 1
}

/// Runs a chain from `config.init`, discarding `burn_in` sweeps and
/// then keeping every `thinning`-th state until `samples` are collected.
pub fn run_chain<M: ComponentModel>(
    model: &M,
    data: &[M::Datum],
    alpha: f64,
    config: &ChainConfig,
) -> Result<Vec<Retained<M::Stats>>, MixtureError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = match config.init {
        ChainInit::SingleCluster => gibbs_init(model, data)?,
        ChainInit::Singletons => gibbs_init_singletons(model, data)?,
    };
    let mut kept = Vec::with_capacity(config.samples);
    let mut sweep = 0;
    for _ in 0..config.burn_in {
        gibbs_sweep(&mut state, model, data, alpha, &mut rng);
        sweep += 1;
    }
    while kept.len() < config.samples {
        for _ in 0..config.thinning {
            gibbs_sweep(&mut state, model, data, alpha, &mut rng);
            sweep += 1;
        }
        kept.push(Retained {
            sweep,
            state: state.clone(),
        });
    }
    Ok(kept)
}
