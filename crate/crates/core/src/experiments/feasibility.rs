use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::{
    load_or_generate_world, mean_ci, observe, stream_rng, visit_sets, wilson, ExperimentConfig,
    ExperimentError, ExperimentKind, Histogram, ResultTable, Stream,
};
use crate::mdp::{build_graph, hop_tree};
use crate::world::label_rurality;

struct Cell {
    mode: &'static str,
    pool: usize,
    edges: usize,
    feasible: usize,
    hops: Vec<f64>,
}

/// Coverage and hop length of sampled problems as the participant pool grows.
///
/// Pools are prefixes of one seeded shuffle, so each pool contains every
/// smaller one. Every pool sees the same problems, and the uniform and rural
/// problem lists share their sources.
pub fn run_feasibility(config: &ExperimentConfig) -> Result<ResultTable, ExperimentError> {
    let kind = ExperimentKind::Feasibility;
    config.validate(kind)?;
    let world = load_or_generate_world(config)?;
    let observations = observe(&world, config);
    let sets = visit_sets(&world, &observations);
    let n = world.tower_count();
    let largest = *config.pool_sizes.last().expect("validated non-empty");
    if largest > sets.len() {
        return Err(ExperimentError::Config(format!(
            "pool of {largest} exceeds the world's {} participants",
            sets.len()
        )));
    }
    let rural = label_rurality(&world, config.rural_radius, config.rural_threshold)?.rural_towers();
    let modes = config.destinations_for(kind).modes();
    if modes.contains(&"rural") && rural.is_empty() {
        return Err(ExperimentError::Config(
            "the world has no rural towers".into(),
        ));
    }

    let mut order: Vec<usize> = (0..sets.len()).collect();
    order.shuffle(&mut stream_rng(config.seed, Stream::Pools));

    let mut rng = stream_rng(config.seed, Stream::Problems);
    let count = config.problem_count_for(kind);
    let mut problems: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
    for _ in 0..count {
        let source = rng.random_range(0..n);
        let uniform = loop {
            let d = rng.random_range(0..n);
            if d != source {
                break d;
            }
        };
        // a lone rural tower equal to the source drops that rural problem
        let rural_dest = loop {
            let d = rural[rng.random_range(0..rural.len())];
            if d != source || rural.len() == 1 {
                break d;
            }
        };
        for &mode in modes {
            let d = if mode == "rural" { rural_dest } else { uniform };
            if d != source {
                problems.entry(mode).or_default().push((source, d));
            }
        }
    }

    let cells: Vec<Vec<Cell>> = config
        .pool_sizes
        .par_iter()
        .map(|&pool| {
            let members: Vec<_> = order[..pool].iter().map(|&i| sets[i].clone()).collect();
            let graph = build_graph(&members, n);
            let mut trees = BTreeMap::new();
            modes
                .iter()
                .map(|&mode| {
                    let mut hops = Vec::new();
                    for &(s, d) in problems.get(mode).map_or(&[][..], Vec::as_slice) {
                        let tree = trees.entry(s).or_insert_with(|| hop_tree(&graph, s));
                        if let Some((h, _)) = tree[d] {
                            hops.push(h as f64);
                        }
                    }
                    Cell {
                        mode,
                        pool,
                        edges: graph.edge_count(),
                        feasible: hops.len(),
                        hops,
                    }
                })
                .collect()
        })
        .collect();

    let mut table = ResultTable::new(kind.name());
    table.describe(
        "pool_size",
        "participants in the pool; condition is <mode>/<pool size>",
    );
    table.describe("problems", "sampled (source, destination) problems");
    table.describe("edges", "location pairs joined by at least one pool member");
    table.describe(
        "coverage",
        "fraction of problems with a path, 95% Wilson interval",
    );
    table.describe(
        "mean_hops",
        "mean fewest-hop length over feasible problems, 95% normal interval",
    );
    table.describe(
        "knee_pool",
        "smallest pool reaching half the largest pool's coverage; condition is <mode>",
    );
    for &mode in modes {
        let total = problems.get(mode).map_or(0, Vec::len);
        let mut curve = Vec::new();
        for cell in cells.iter().flatten().filter(|c| c.mode == mode) {
            let cond = format!("{mode}/{}", cell.pool);
            let coverage = if total == 0 {
                0.0
            } else {
                cell.feasible as f64 / total as f64
            };
            table.push(&cond, "pool_size", cell.pool as f64);
            table.push(&cond, "problems", total as f64);
            table.push(&cond, "edges", cell.edges as f64);
            table.push_ci(
                &cond,
                "coverage",
                coverage,
                Some(wilson(cell.feasible, total)),
            );
            if !cell.hops.is_empty() {
                let (mean, half) = mean_ci(&cell.hops);
                table.push_ci(&cond, "mean_hops", mean, Some((mean - half, mean + half)));
            }
            table
                .histograms
                .push(Histogram::from_values("hops", &cond, 0.0, 1.0, &cell.hops));
            curve.push((cell.pool, coverage));
        }
        let top = curve.last().map_or(0.0, |c| c.1);
        if let Some(&(knee, _)) = curve.iter().find(|c| top > 0.0 && c.1 >= 0.5 * top) {
            table.push(mode, "knee_pool", knee as f64);
        }
    }
    Ok(table)
}
