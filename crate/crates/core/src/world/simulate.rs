use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::WorldError;
use crate::delay::PresenceProfile;
use crate::mdp::{policy_query, DeliveryProblem, FixedRoute, Policy, State};
use crate::timebase::SlotIndex;

pub const DAYS_PER_SLOT: f64 = 0.5;
/// A single pickup or drop-off wait longer than this aborts the run.
pub const MAX_WAIT_SLOTS: u64 = 50_000_000;

/// Something that says where the package goes next.
#[derive(Debug, Clone, Copy)]
pub enum Plan<'a> {
    Policy(&'a Policy),
    Route(&'a FixedRoute),
}

/// One simulated journey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryOutcome {
    pub problem: DeliveryProblem,
    /// Locations visited, source first and destination last.
    pub route: Vec<usize>,
    /// Carrier of each leg.
    pub participants: Vec<usize>,
    pub pickup_delays: Vec<u64>,
    pub dropoff_delays: Vec<u64>,
    pub total_slots: u64,
    /// Always false; packages are never lost.
    pub lost: bool,
}

impl DeliveryOutcome {
    pub fn total_days(&self) -> f64 {
        self.total_slots as f64 * DAYS_PER_SLOT
    }
}

/// Slots until the carrier is first seen at `location`, trials starting the
/// slot after `from`.
fn wait<R: Rng + ?Sized>(
    profile: &PresenceProfile,
    participant: usize,
    location: usize,
    from: SlotIndex,
    rng: &mut R,
) -> Result<(u64, SlotIndex), WorldError> {
    let row = profile.row(location);
    if row.iter().all(|p| *p <= 0.0) {
        return Err(WorldError::Stalled {
            participant,
            location,
            slots: 0,
        });
    }
    let mut slot = from;
    for d in 1..=MAX_WAIT_SLOTS {
        slot = slot.advance(1);
        if rng.random::<f64>() < row[slot.zero_based()] {
            return Ok((d, slot));
        }
    }
    Err(WorldError::Stalled {
        participant,
        location,
        slots: MAX_WAIT_SLOTS,
    })
}

/// Runs one delivery under ground-truth presence `profiles`, indexed by
/// participant. Each leg waits for the carrier at the current location, then
/// at the next; the plan is consulted again at every drop-off.
pub fn simulate_delivery<R: Rng + ?Sized>(
    profiles: &[PresenceProfile],
    plan: Plan<'_>,
    problem: &DeliveryProblem,
    rng: &mut R,
) -> Result<DeliveryOutcome, WorldError> {
    let mut outcome = DeliveryOutcome {
        problem: *problem,
        route: vec![problem.source],
        participants: Vec::new(),
        pickup_delays: Vec::new(),
        dropoff_delays: Vec::new(),
        total_slots: 0,
        lost: false,
    };
    if let Plan::Route(route) = plan {
        if route.locations.first() != Some(&problem.source)
            || route.locations.last() != Some(&problem.destination)
        {
            return Err(WorldError::Mismatch(format!(
                "route {:?} does not join {} to {}",
                route.locations, problem.source, problem.destination
            )));
        }
    }
    let mut state = problem.start_state();
    while state.location != problem.destination {
        let leg = outcome.participants.len();
        let (next, carrier) = match plan {
            Plan::Policy(policy) => {
                let a = policy_query(policy, state)?;
                (a.next, a.participant)
            }
            Plan::Route(route) => (
                route.locations[leg + 1],
                route.carrier(leg, state.slot, rng),
            ),
        };
        let profile = profiles.get(carrier).ok_or_else(|| {
            WorldError::Mismatch(format!(
                "carrier {carrier} outside {} profiles",
                profiles.len()
            ))
        })?;
        let (pickup, picked_at) = wait(profile, carrier, state.location, state.slot, rng)?;
        let (dropoff, dropped_at) = wait(profile, carrier, next, picked_at, rng)?;
        outcome.route.push(next);
        outcome.participants.push(carrier);
        outcome.pickup_delays.push(pickup);
        outcome.dropoff_delays.push(dropoff);
        outcome.total_slots += pickup + dropoff;
        state = State::new(next, dropped_at);
    }
    Ok(outcome)
}

/// Plans for each problem under one label; `plans[i]` serves `problems[i]`.
#[derive(Debug, Clone)]
pub struct PlanSet<'a> {
    pub label: String,
    pub plans: Vec<Plan<'a>>,
}

/// Distribution of total delay in days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelaySummary {
    pub runs: usize,
    pub mean: f64,
    pub median: f64,
    pub q10: f64,
    pub q25: f64,
    pub q75: f64,
    pub q90: f64,
    pub max: f64,
}

impl DelaySummary {
    /// Quantiles interpolate linearly between order statistics.
    pub fn from_days(days: &[f64]) -> Option<Self> {
        if days.is_empty() {
            return None;
        }
        let mut sorted = days.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (sorted.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        };
        Some(Self {
            runs: days.len(),
            mean: days.iter().sum::<f64>() / days.len() as f64,
            median: q(0.5),
            q10: q(0.1),
            q25: q(0.25),
            q75: q(0.75),
            q90: q(0.9),
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcomes {
    pub label: String,
    /// Problem-major: all runs of problem 0, then problem 1, ...
    pub outcomes: Vec<DeliveryOutcome>,
    pub summary: DelaySummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub runs_per_problem: usize,
    pub plans: Vec<PlanOutcomes>,
}

/// The generator of run `run` of problem `problem`: shared by every plan so
/// plans are compared on common random numbers.
fn run_rng(seed: u64, problem: usize, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((problem as u64) << 32) | run as u64);
    rng
}

/// `n_runs` simulations of every plan on every problem.
pub fn run_monte_carlo(
    profiles: &[PresenceProfile],
    plans: &[PlanSet<'_>],
    problems: &[DeliveryProblem],
    n_runs: usize,
    seed: u64,
) -> Result<MonteCarloResult, WorldError> {
    if n_runs == 0 {
        return Err(WorldError::Mismatch("n_runs must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(plans.len());
    for set in plans {
        if set.plans.len() != problems.len() {
            return Err(WorldError::Mismatch(format!(
                "plan set {} has {} plans for {} problems",
                set.label,
                set.plans.len(),
                problems.len()
            )));
        }
        let outcomes = (0..problems.len() * n_runs)
            .into_par_iter()
            .map(|k| {
                let (p, run) = (k / n_runs, k % n_runs);
                simulate_delivery(
                    profiles,
                    set.plans[p],
                    &problems[p],
                    &mut run_rng(seed, p, run),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let days: Vec<f64> = outcomes.iter().map(DeliveryOutcome::total_days).collect();
        out.push(PlanOutcomes {
            label: set.label.clone(),
            summary: DelaySummary::from_days(&days).expect("at least one outcome"),
            outcomes,
        });
    }
    Ok(MonteCarloResult {
        runs_per_problem: n_runs,
        plans: out,
    })
}
