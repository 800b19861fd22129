//! Periodic delivery planning over `(location, slot)` states.
//!
//! An action hands the package to one participant for one leg, so choosing the
//! carrier is part of the MDP's own minimisation. Costs are expected slots and
//! the destination is absorbing at every slot.

mod graph;
mod heuristic;
mod model;
mod solve;

use thiserror::Error;

use crate::delay::DelayError;

pub use graph::{build_graph, hop_tree, shortest_route, LocationGraph};
pub use heuristic::{plan_heuristic, plan_shortest_path, FixedRoute, ParticipantRule};
pub use model::{assemble_mdp, Action, ActionCatalog, DeliveryMdp, DeliveryProblem, State};
pub use solve::{
    policy_query, solve_modified_policy_iteration, Policy, PolicyDocument, PolicyEntry,
    BELLMAN_TOLERANCE, DEFAULT_EVAL_SWEEPS, DIVERGENCE_BOUND, POLICY_FORMAT, POLICY_VERSION,
};

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("invalid problem: {0}")]
    Problem(String),
    #[error("no delivery path from {from} to {to}")]
    Infeasible { from: usize, to: usize },
    #[error("policy value diverged at location {location}, slot {slot}")]
    ImproperPolicy { location: usize, slot: u8 },
    #[error("policy iteration stopped after {iterations} rounds with residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("state at location {location}, slot {slot} is the destination")]
    TerminalState { location: usize, slot: u8 },
    #[error("state at location {location}, slot {slot} is not in the policy")]
    UnknownState { location: usize, slot: u8 },
    #[error("policy document: {0}")]
    Document(String),
    #[error(transparent)]
    Delay(#[from] DelayError),
}
