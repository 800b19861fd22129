use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{
    derive_seed, load_or_generate_world, observe, participant_chain, ExperimentConfig,
    ExperimentError, ExperimentKind, Histogram, ResultTable, Stream,
};
use crate::mixture::{
    component_count_summary, heldout_loglik, LoglikSummary, MarkovBaseline, MobilityModel,
    RandomBaseline,
};
use crate::timebase::{skip_report, split_holdout};

/// Held-out log-likelihood of the per-participant mixture against the
/// first-order Markov and random baselines, one held-out record per person.
pub fn run_prediction(config: &ExperimentConfig) -> Result<ResultTable, ExperimentError> {
    let kind = ExperimentKind::Prediction;
    config.validate(kind)?;
    let world = load_or_generate_world(config)?;
    let tower_count = world.tower_count() as u32;
    let observations = observe(&world, config);
    let split = split_holdout(
        &observations,
        derive_seed(config.seed, Stream::Split as u64),
    );
    if split.test.is_empty() {
        return Err(ExperimentError::Config(
            "no participant has two or more sightings".into(),
        ));
    }

    let index: BTreeMap<&str, usize> = world
        .participants
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.as_str(), i))
        .collect();
    let fitted: Vec<(String, MobilityModel)> = split
        .train
        .par_iter()
        .map(|(id, records)| {
            let chain = participant_chain(config, index.get(id.as_str()).copied().unwrap_or(0));
            MobilityModel::fit(id, records, config.hyper, tower_count, &chain)
                .map(|m| (id.clone(), m))
        })
        .collect::<Result<_, _>>()?;
    let models: BTreeMap<String, MobilityModel> = fitted.into_iter().collect();

    let dp = heldout_loglik(&models, &split.test)?;
    let markov = heldout_loglik(&MarkovBaseline::fit(&split.train, tower_count), &split.test)?;
    let random = heldout_loglik(&RandomBaseline { tower_count }, &split.test)?;

    let mut table = ResultTable::new(kind.name());
    table.describe(
        "mean_loglik",
        "mean held-out log density in nats, 95% normal interval",
    );
    table.describe("test_records", "held-out records scored");
    table.describe(
        "clamped",
        "held-out records whose density fell below the floor",
    );
    table.describe(
        "gap",
        "mean_loglik difference; condition is <model>_minus_<model>",
    );
    table.describe(
        "k_mean",
        "mean of per-participant posterior-mean component counts",
    );
    table.describe("k_mode", "mode of rounded per-participant component counts");
    table.describe(
        "k_std",
        "standard deviation of per-participant component counts",
    );
    table.describe("participants", "participants fitted");
    table.describe("skipped", "participants with fewer than two sightings");
    table.describe(
        "records_per_participant",
        "mean sightings per observed participant",
    );

    let mut push_model = |name: &str, s: &LoglikSummary| {
        table.push_ci(
            name,
            "mean_loglik",
            s.mean,
            Some((s.mean - s.half_width, s.mean + s.half_width)),
        );
        table.push(name, "test_records", s.count as f64);
        table.push(name, "clamped", s.clamped as f64);
    };
    push_model("dp", &dp);
    push_model("markov", &markov);
    push_model("random", &random);
    table.push("dp_minus_markov", "gap", dp.mean - markov.mean);
    table.push("markov_minus_random", "gap", markov.mean - random.mean);

    let fitted_k: Vec<f64> = models
        .values()
        .map(MobilityModel::mean_cluster_count)
        .collect();
    let true_k: Vec<f64> = models
        .keys()
        .filter_map(|id| index.get(id.as_str()))
        .map(|&i| world.participants[i].locations.len() as f64)
        .collect();
    for (name, counts) in [("dp", &fitted_k), ("truth", &true_k)] {
        if let Some(s) = component_count_summary(counts) {
            table.push(name, "k_mean", s.mean);
            table.push(name, "k_mode", s.mode as f64);
            table.push(name, "k_std", s.std);
        }
        let rounded: Vec<f64> = counts.iter().map(|k| k.round()).collect();
        table.histograms.push(Histogram::from_values(
            "components",
            name,
            0.0,
            1.0,
            &rounded,
        ));
    }

    let records: usize = observations.values().map(Vec::len).sum();
    table.push("data", "participants", models.len() as f64);
    table.push("data", "skipped", split.skipped.len() as f64);
    table.push(
        "data",
        "records_per_participant",
        records as f64 / observations.len().max(1) as f64,
    );
    table
        .reports
        .insert("skipped".into(), skip_report(&split.skipped));
    Ok(table)
}
