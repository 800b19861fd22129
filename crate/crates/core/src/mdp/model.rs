use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LocationGraph, MdpError};
use crate::delay::{combine_leg, LocationLaws, PresenceProfile};
use crate::timebase::{SlotIndex, H};

/// A package at a location, available from the start of a slot's trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct State {
    pub location: usize,
    pub slot: SlotIndex,
}

impl State {
    pub fn new(location: usize, slot: SlotIndex) -> Self {
        Self { location, slot }
    }

    pub fn index(self) -> usize {
        self.location * H + self.slot.zero_based()
    }

    pub fn from_index(index: usize) -> Self {
        Self {
            location: index / H,
            slot: SlotIndex::from_zero_based(index % H),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryProblem {
    pub source: usize,
    pub destination: usize,
    pub start: SlotIndex,
}

impl DeliveryProblem {
    pub fn new(source: usize, destination: usize, start: SlotIndex) -> Result<Self, MdpError> {
        if source == destination {
            return Err(MdpError::Problem(format!(
                "source and destination are both {source}"
            )));
        }
        Ok(Self {
            source,
            destination,
            start,
        })
    }

    pub fn start_state(&self) -> State {
        State::new(self.source, self.start)
    }
}

/// Hand the package to `participant` for carriage to `next`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub next: usize,
    pub participant: usize,
    /// Expected slots until drop-off.
    pub cost: f64,
    /// Drop-off slot law over states `(next, slot)`, zero-based slots.
    pub arrival: [f64; H],
}

impl Action {
    pub fn successors(&self) -> impl Iterator<Item = (State, f64)> + '_ {
        self.arrival
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(t, &p)| (State::new(self.next, SlotIndex::from_zero_based(t)), p))
    }

    /// `cost + E[value(successor)]`.
    pub fn q_value(&self, values: &[f64]) -> f64 {
        let base = self.next * H;
        self.cost
            + self
                .arrival
                .iter()
                .zip(&values[base..base + H])
                .map(|(p, v)| if *p > 0.0 { p * v } else { 0.0 })
                .sum::<f64>()
    }
}

/// Every reachable leg of every participant, independent of destination.
#[derive(Debug, Clone)]
pub struct ActionCatalog {
    location_count: usize,
    actions: Vec<Vec<Action>>,
}

impl ActionCatalog {
    pub fn build(graph: &LocationGraph, profiles: &[PresenceProfile]) -> Result<Self, MdpError> {
        let n = graph.location_count();
        let mut carriers: BTreeSet<(usize, usize)> = BTreeSet::new();
        for v in 0..n {
            for (_, participants) in graph.neighbors(v) {
                for &p in participants {
                    if p >= profiles.len() {
                        return Err(MdpError::Problem(format!(
                            "graph names participant {p} but only {} profiles given",
                            profiles.len()
                        )));
                    }
                    if profiles[p].location_count() < n {
                        return Err(MdpError::Problem(format!(
                            "profile of participant {p} covers {} of {n} locations",
                            profiles[p].location_count()
                        )));
                    }
                    carriers.insert((p, v));
                }
            }
        }
        let keys: Vec<(usize, usize)> = carriers.into_iter().collect();
        let laws: BTreeMap<(usize, usize), LocationLaws> = keys
            .par_iter()
            .map(|&(p, v)| ((p, v), LocationLaws::new(profiles[p].row(v))))
            .collect();

        let actions: Vec<Vec<Action>> = (0..n * H)
            .into_par_iter()
            .map(|index| {
                let state = State::from_index(index);
                let v = state.location;
                let mut out = Vec::new();
                for (w, participants) in graph.neighbors(v) {
                    for &p in participants {
                        if let Some(leg) = combine_leg(&laws[&(p, v)], &laws[&(p, w)], state.slot) {
                            out.push(Action {
                                next: w,
                                participant: p,
                                cost: leg.expected_slots,
                                arrival: leg.arrival,
                            });
                        }
                    }
                }
                out
            })
            .collect();
        Ok(Self {
            location_count: n,
            actions,
        })
    }

    pub fn location_count(&self) -> usize {
        self.location_count
    }

    pub fn actions(&self, state: State) -> &[Action] {
        &self.actions[state.index()]
    }

    pub fn action_count(&self) -> usize {
        self.actions.iter().map(Vec::len).sum()
    }
}

/// The periodic delivery MDP for one destination, pruned to states from
/// which the destination can be reached with probability one.
#[derive(Debug, Clone)]
pub struct DeliveryMdp {
    catalog: Arc<ActionCatalog>,
    destination: usize,
    /// Per state: indices into the catalog's actions whose successors are all retained.
    allowed: Vec<Vec<u32>>,
    retained: Vec<bool>,
}

impl DeliveryMdp {
    pub fn for_destination(catalog: Arc<ActionCatalog>, destination: usize) -> Self {
        let n_states = catalog.location_count * H;
        let is_goal = |s: usize| s / H == destination;
        let mut candidate = vec![true; n_states];
        loop {
            let mut predecessors: Vec<Vec<usize>> = vec![Vec::new(); n_states];
            for s in (0..n_states).filter(|&s| candidate[s] && !is_goal(s)) {
                for a in &catalog.actions[s] {
                    if !a.successors().all(|(next, _)| candidate[next.index()]) {
                        continue;
                    }
                    for (next, _) in a.successors() {
                        let preds = &mut predecessors[next.index()];
                        if preds.last() != Some(&s) {
                            preds.push(s);
                        }
                    }
                }
            }
            let mut reach = vec![false; n_states];
            let mut queue: VecDeque<usize> = (0..n_states).filter(|&s| is_goal(s)).collect();
            for &s in &queue {
                reach[s] = true;
            }
            while let Some(s) = queue.pop_front() {
                for &p in &predecessors[s] {
                    if !reach[p] {
                        reach[p] = true;
                        queue.push_back(p);
                    }
                }
            }
            if reach == candidate {
                break;
            }
            candidate = reach;
        }

        let allowed = (0..n_states)
            .map(|s| {
                if !candidate[s] || is_goal(s) {
                    return Vec::new();
                }
                catalog.actions[s]
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| a.successors().all(|(next, _)| candidate[next.index()]))
                    .map(|(i, _)| i as u32)
                    .collect()
            })
            .collect();
        Self {
            catalog,
            destination,
            allowed,
            retained: candidate,
        }
    }

    pub fn catalog(&self) -> &ActionCatalog {
        &self.catalog
    }

    pub fn location_count(&self) -> usize {
        self.catalog.location_count
    }

    pub fn destination(&self) -> usize {
        self.destination
    }

    /// `H |V|`, the state count before pruning.
    pub fn state_count(&self) -> usize {
        self.location_count() * H
    }

    pub fn retained_state_count(&self) -> usize {
        self.retained.iter().filter(|r| **r).count()
    }

    pub fn is_retained(&self, state: State) -> bool {
        state.location < self.location_count() && self.retained[state.index()]
    }

    pub fn is_terminal(&self, state: State) -> bool {
        state.location == self.destination
    }

    pub fn action_count_at(&self, state: State) -> usize {
        self.allowed[state.index()].len()
    }

    /// The `i`-th retained action at `state`.
    pub fn action(&self, state: State, i: usize) -> &Action {
        let s = state.index();
        &self.catalog.actions[s][self.allowed[s][i] as usize]
    }

    pub fn actions(&self, state: State) -> impl Iterator<Item = &Action> + '_ {
        let s = state.index();
        self.allowed[s]
            .iter()
            .map(move |&i| &self.catalog.actions[s][i as usize])
    }

    pub fn action_count(&self) -> usize {
        self.allowed.iter().map(Vec::len).sum()
    }

    /// Non-terminal retained states in index order.
    pub fn decision_states(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.state_count())
            .map(State::from_index)
            .filter(|s| self.retained[s.index()] && !self.is_terminal(*s))
    }

    pub fn check_feasible(&self, problem: &DeliveryProblem) -> Result<(), MdpError> {
        if problem.destination == self.destination && self.is_retained(problem.start_state()) {
            Ok(())
        } else {
            Err(MdpError::Infeasible {
                from: problem.source,
                to: problem.destination,
            })
        }
    }
}

/// Builds the MDP for `problem`; participant `i` in the graph uses `profiles[i]`.
pub fn assemble_mdp(
    graph: &LocationGraph,
    profiles: &[PresenceProfile],
    problem: &DeliveryProblem,
) -> Result<DeliveryMdp, MdpError> {
    let n = graph.location_count();
    if problem.source >= n || problem.destination >= n {
        return Err(MdpError::Problem(format!(
            "problem {} -> {} outside {n} locations",
            problem.source, problem.destination
        )));
    }
    let catalog = ActionCatalog::build(graph, profiles)?;
    let mdp = DeliveryMdp::for_destination(Arc::new(catalog), problem.destination);
    mdp.check_feasible(problem)?;
    Ok(mdp)
}
