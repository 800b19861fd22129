use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crowdship::delay::presence_from_model;
use crowdship::experiments::{
    emit, load_or_generate_world, observe, participant_chain, run_delivery, run_feasibility,
    run_prediction, DestinationMode, ExperimentConfig, ExperimentError, ExperimentKind,
};
use crowdship::mixture::MobilityModel;
use crowdship::timebase::{parse_records, write_records};
use crowdship::world::label_rurality;

/// Mobility models and delivery routing experiments on synthetic worlds.
#[derive(Parser)]
#[command(name = "crowdship", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed of the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a world and write world.json, observations.csv and rurality.json.
    GenWorld {
        #[command(flatten)]
        common: Common,
    },
    /// Fit a mobility mixture per participant of a sightings CSV.
    Fit {
        #[command(flatten)]
        common: Common,
        /// CSV with columns participant,tower,timestamp.
        #[arg(long)]
        input: PathBuf,
    },
    /// Coverage and hop length against participant pool size.
    Feasibility {
        #[command(flatten)]
        common: Common,
        /// Sample rural destinations only.
        #[arg(long)]
        rural: bool,
    },
    /// Held-out log-likelihood of the mixture and the baselines.
    Prediction {
        #[command(flatten)]
        common: Common,
    },
    /// Simulated delivery time of optimal, heuristic and fewest-hop routing.
    Delivery {
        #[command(flatten)]
        common: Common,
        /// Simulations per plan and problem.
        #[arg(long)]
        runs: Option<usize>,
        /// Sample rural destinations (the default for delivery).
        #[arg(long)]
        rural: bool,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, ExperimentError> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    fs::write(path, serde_json::to_string(value)? + "\n")?;
    Ok(())
}

fn gen_world(config: &ExperimentConfig) -> Result<(), ExperimentError> {
    config.world.validate()?;
    let world = load_or_generate_world(config)?;
    let observations = observe(&world, config);
    let rurality = label_rurality(&world, config.rural_radius, config.rural_threshold)?;
    fs::create_dir_all(&config.out_dir)?;
    write_json(&config.out_dir.join("world.json"), &world)?;
    write_json(&config.out_dir.join("rurality.json"), &rurality)?;
    write_records(
        fs::File::create(config.out_dir.join("observations.csv"))?,
        &observations,
    )?;
    Ok(())
}

fn fit(config: &ExperimentConfig, input: &Path) -> Result<(), ExperimentError> {
    config.hyper.validate()?;
    config.chain.validate()?;
    let tower_count = config.world.tower_count as u32;
    let groups = parse_records(fs::File::open(input)?, tower_count)?;
    let entries: Vec<_> = groups.iter().collect();
    let models: Vec<MobilityModel> = entries
        .par_iter()
        .enumerate()
        .map(|(i, (id, records))| {
            MobilityModel::fit(
                id,
                records,
                config.hyper,
                tower_count,
                &participant_chain(config, i),
            )
        })
        .collect::<Result<_, _>>()?;
    let dir = config.out_dir.join("models");
    fs::create_dir_all(&dir)?;
    let mut summary = String::from("participant,records,mean_components\n");
    let mut profiles = Vec::with_capacity(models.len());
    for model in &models {
        let stem: String = model
            .participant
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        write_json(&dir.join(format!("{stem}.json")), &model.to_document())?;
        let records = groups[&model.participant].len();
        summary.push_str(&format!(
            "{},{},{}\n",
            model.participant,
            records,
            model.mean_cluster_count()
        ));
        profiles.push(presence_from_model(model));
    }
    fs::write(config.out_dir.join("fit_summary.csv"), summary)?;
    write_json(&config.out_dir.join("presence.json"), &profiles)?;
    Ok(())
}

fn run(command: Command) -> Result<(), ExperimentError> {
    let (kind, config) = match command {
        Command::GenWorld { common } => return gen_world(&load(&common)?),
        Command::Fit { common, input } => return fit(&load(&common)?, &input),
        Command::Feasibility { common, rural } => {
            let mut config = load(&common)?;
            if rural {
                config.destinations = Some(DestinationMode::Rural);
            }
            (ExperimentKind::Feasibility, config)
        }
        Command::Prediction { common } => (ExperimentKind::Prediction, load(&common)?),
        Command::Delivery {
            common,
            runs,
            rural,
        } => {
            let mut config = load(&common)?;
            if let Some(runs) = runs {
                config.runs = runs;
            }
            if rural {
                config.destinations = Some(DestinationMode::Rural);
            }
            (ExperimentKind::Delivery, config)
        }
    };
    let table = match kind {
        ExperimentKind::Feasibility => run_feasibility(&config)?,
        ExperimentKind::Prediction => run_prediction(&config)?,
        ExperimentKind::Delivery => run_delivery(&config)?,
    };
    emit(&table, &config.out_dir)?;
    Ok(())
}

fn report(kind: &str, message: &str) {
    eprintln!(
        "{}",
        serde_json::json!({ "error": kind, "message": message })
    );
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", e.to_string().lines().next().unwrap_or_default());
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
