use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use super::{
    derive_seed, load_or_generate_world, mean_ci, observe, participant_chain, stream_rng,
    visit_sets, DestinationMode, ExperimentConfig, ExperimentError, ExperimentKind, Histogram,
    ProfileSource, ResultTable, Stream,
};
use crate::delay::{presence_from_model, PresenceProfile};
use crate::mdp::{
    build_graph, plan_heuristic, plan_shortest_path, solve_modified_policy_iteration,
    ActionCatalog, DeliveryMdp, DeliveryProblem, FixedRoute, Policy,
};
use crate::mixture::MobilityModel;
use crate::timebase::{Grouped, SlotIndex, H};
use crate::world::{label_rurality, run_monte_carlo, Plan, PlanSet, WorldSpec, DAYS_PER_SLOT};

/// Attempts per requested problem before giving up on finding feasible ones.
const ATTEMPTS_PER_PROBLEM: usize = 50;

fn profiles(
    world: &WorldSpec,
    observations: &Grouped,
    config: &ExperimentConfig,
) -> Result<Vec<PresenceProfile>, ExperimentError> {
    match config.profiles {
        ProfileSource::GroundTruth => Ok(world.presence_profiles()),
        ProfileSource::Fitted => {
            let n = world.tower_count();
            world
                .participants
                .par_iter()
                .enumerate()
                .map(|(i, p)| match observations.get(&p.id) {
                    Some(records) => {
                        let chain = participant_chain(config, i);
                        let model =
                            MobilityModel::fit(&p.id, records, config.hyper, n as u32, &chain)?;
                        Ok(presence_from_model(&model))
                    }
                    None => Ok(PresenceProfile::new(p.id.clone(), vec![[0.0; H]; n])?),
                })
                .collect::<Result<Vec<_>, ExperimentError>>()
        }
    }
}

/// Optimal policy, fixed-route heuristic and fewest-hop routing compared by
/// simulated delivery time on common random numbers.
///
/// Planning and simulation use the same presence profiles; the location
/// graph comes from the observed sightings. Problems draw a destination per
/// the destination mode, a uniform source and a uniform start slot; draws
/// with no path under the MDP are counted and replaced.
pub fn run_delivery(config: &ExperimentConfig) -> Result<ResultTable, ExperimentError> {
    let kind = ExperimentKind::Delivery;
    config.validate(kind)?;
    let world = load_or_generate_world(config)?;
    let observations = observe(&world, config);
    let n = world.tower_count();
    let graph = build_graph(&visit_sets(&world, &observations), n);
    let profiles = profiles(&world, &observations, config)?;
    let catalog = Arc::new(ActionCatalog::build(&graph, &profiles)?);

    let destinations: Vec<usize> = match config.destinations_for(kind) {
        DestinationMode::Rural => {
            label_rurality(&world, config.rural_radius, config.rural_threshold)?.rural_towers()
        }
        _ => (0..n).collect(),
    };
    if destinations.is_empty() {
        return Err(ExperimentError::Config("no candidate destinations".into()));
    }

    let wanted = config.problem_count_for(kind);
    let mut rng = stream_rng(config.seed, Stream::Problems);
    let mut mdps: BTreeMap<usize, DeliveryMdp> = BTreeMap::new();
    let mut problems = Vec::new();
    let mut infeasible = 0usize;
    for _ in 0..wanted * ATTEMPTS_PER_PROBLEM {
        if problems.len() == wanted {
            break;
        }
        let destination = destinations[rng.random_range(0..destinations.len())];
        let source = rng.random_range(0..n);
        let start = SlotIndex::from_zero_based(rng.random_range(0..H));
        if source == destination {
            continue;
        }
        let problem = DeliveryProblem::new(source, destination, start)?;
        let mdp = mdps
            .entry(destination)
            .or_insert_with(|| DeliveryMdp::for_destination(catalog.clone(), destination));
        if mdp.check_feasible(&problem).is_ok() {
            problems.push(problem);
        } else {
            infeasible += 1;
        }
    }
    if problems.is_empty() {
        return Err(ExperimentError::Config(format!(
            "no feasible problem among {infeasible} draws"
        )));
    }
    mdps.retain(|d, _| problems.iter().any(|p| p.destination == *d));

    let solved: BTreeMap<usize, Policy> = mdps
        .par_iter()
        .map(|(&d, mdp)| solve_modified_policy_iteration(mdp, config.eval_sweeps).map(|p| (d, p)))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .collect();
    let heuristic: Vec<FixedRoute> = problems
        .iter()
        .map(|p| plan_heuristic(&mdps[&p.destination], p))
        .collect::<Result<_, _>>()?;
    let shortest: Vec<FixedRoute> = problems
        .iter()
        .map(|p| plan_shortest_path(&graph, p))
        .collect::<Result<_, _>>()?;

    let sets = [
        PlanSet {
            label: "optimal".into(),
            plans: problems
                .iter()
                .map(|p| Plan::Policy(&solved[&p.destination]))
                .collect(),
        },
        PlanSet {
            label: "heuristic".into(),
            plans: heuristic.iter().map(Plan::Route).collect(),
        },
        PlanSet {
            label: "shortest_path".into(),
            plans: shortest.iter().map(Plan::Route).collect(),
        },
    ];
    let result = run_monte_carlo(
        &profiles,
        &sets,
        &problems,
        config.runs,
        derive_seed(config.seed, Stream::Simulation as u64),
    )?;

    let mut table = ResultTable::new(kind.name());
    table.describe(
        "mean_days",
        "mean simulated delivery time in days, 95% normal interval",
    );
    for (metric, what) in [
        ("median_days", "median"),
        ("q10_days", "10th percentile"),
        ("q25_days", "25th percentile"),
        ("q75_days", "75th percentile"),
        ("q90_days", "90th percentile"),
        ("max_days", "maximum"),
    ] {
        table.describe(
            metric,
            &format!("{what} of simulated delivery time in days"),
        );
    }
    table.describe(
        "planned_days",
        "mean planning-time estimate in days (fewest-hop routes: none)",
    );
    table.describe("mean_hops", "mean locations visited after the source");
    table.describe(
        "reduction_vs_shortest_path",
        "1 - mean_days / shortest-path mean_days",
    );
    table.describe("gap_vs_optimal", "mean_days / optimal mean_days - 1");
    table.describe("feasible", "problems simulated");
    table.describe("infeasible", "problem draws rejected for lacking a path");
    table.describe("runs_per_problem", "simulations per plan and problem");
    table.describe("deliveries", "simulated deliveries per plan");
    table.describe(
        "actions",
        "(location, slot, next, carrier) actions in the shared catalogue",
    );

    let planned: BTreeMap<&str, f64> = [
        (
            "optimal",
            problems
                .iter()
                .map(|p| solved[&p.destination].value(p.start_state()))
                .sum::<f64>(),
        ),
        (
            "heuristic",
            heuristic.iter().map(|r| r.planned_cost).sum::<f64>(),
        ),
    ]
    .into_iter()
    .map(|(k, v)| (k, v * DAYS_PER_SLOT / problems.len() as f64))
    .collect();
    let means: BTreeMap<&str, f64> = result
        .plans
        .iter()
        .map(|p| (p.label.as_str(), p.summary.mean))
        .collect();
    let bin = config.histogram_bin_days;
    for plan in &result.plans {
        let label = plan.label.as_str();
        let days: Vec<f64> = plan.outcomes.iter().map(|o| o.total_days()).collect();
        let hops: Vec<f64> = plan
            .outcomes
            .iter()
            .map(|o| o.route.len() as f64 - 1.0)
            .collect();
        let s = &plan.summary;
        let (mean, half) = mean_ci(&days);
        table.push_ci(label, "mean_days", mean, Some((mean - half, mean + half)));
        table.push(label, "median_days", s.median);
        table.push(label, "q10_days", s.q10);
        table.push(label, "q25_days", s.q25);
        table.push(label, "q75_days", s.q75);
        table.push(label, "q90_days", s.q90);
        table.push(label, "max_days", s.max);
        if let Some(&p) = planned.get(label) {
            table.push(label, "planned_days", p);
        }
        table.push(label, "mean_hops", mean_ci(&hops).0);
        table.push(
            label,
            "reduction_vs_shortest_path",
            1.0 - s.mean / means["shortest_path"],
        );
        table.push(label, "gap_vs_optimal", s.mean / means["optimal"] - 1.0);
        table
            .histograms
            .push(Histogram::from_values("delay", label, 0.0, bin, &days));
    }
    table.push("problems", "feasible", problems.len() as f64);
    table.push("problems", "infeasible", infeasible as f64);
    table.push("problems", "runs_per_problem", config.runs as f64);
    table.push(
        "problems",
        "deliveries",
        (problems.len() * config.runs) as f64,
    );
    table.push("problems", "actions", catalog.action_count() as f64);
    Ok(table)
}
