use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{shortest_route, Action, DeliveryMdp, DeliveryProblem, LocationGraph, MdpError, State};
use crate::timebase::{SlotIndex, H};

/// How a fixed route picks the carrier of each leg at execution time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParticipantRule {
    /// `table[leg][t]`: carrier with the lowest expected leg cost when the
    /// leg starts in zero-based slot `t`.
    LowestLegCost { table: Vec<[usize; H]> },
    /// Any participant sharing the leg's edge, uniformly.
    UniformRandom { candidates: Vec<Vec<usize>> },
}

/// A location sequence decided at planning time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedRoute {
    pub locations: Vec<usize>,
    pub rule: ParticipantRule,
    /// Planning-time cost estimate in slots; hop count for shortest-path routes.
    pub planned_cost: f64,
}

impl FixedRoute {
    pub fn hop_count(&self) -> usize {
        self.locations.len() - 1
    }

    /// Carrier for leg `leg` starting in `slot`.
    pub fn carrier<R: Rng + ?Sized>(&self, leg: usize, slot: SlotIndex, rng: &mut R) -> usize {
        match &self.rule {
            ParticipantRule::LowestLegCost { table } => table[leg][slot.zero_based()],
            ParticipantRule::UniformRandom { candidates } => {
                let c = &candidates[leg];
                c[rng.random_range(0..c.len())]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// The cheapest action to `next` from `state`, lowest participant on ties.
fn cheapest_to(mdp: &DeliveryMdp, state: State, next: usize) -> Option<&Action> {
    mdp.actions(state)
        .filter(|a| a.next == next)
        .min_by(|a, b| {
            a.cost
                .total_cmp(&b.cost)
                .then(a.participant.cmp(&b.participant))
        })
}

fn slot_after(slot: SlotIndex, cost: f64) -> SlotIndex {
    slot.advance(cost.round() as usize)
}

/// Removes cycles so no location repeats, keeping the first visit.
fn cut_loops(route: Vec<usize>) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(route.len());
    for v in route {
        if let Some(pos) = out.iter().position(|&u| u == v) {
            out.truncate(pos);
        }
        out.push(v);
    }
    out
}

/// Dijkstra over `(location, slot)` nodes where a leg costs the cheapest
/// carrier's expected delay and moves the clock by that delay, rounded.
/// Carriers are re-chosen per leg from the slot actually reached.
pub fn plan_heuristic(
    mdp: &DeliveryMdp,
    problem: &DeliveryProblem,
) -> Result<FixedRoute, MdpError> {
    mdp.check_feasible(problem)?;
    let n = mdp.state_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    let start = problem.start_state().index();
    dist[start] = 0.0;
    heap.push(Reverse(Entry(0.0, start)));
    let mut reached = None;
    while let Some(Reverse(Entry(d, s))) = heap.pop() {
        if d > dist[s] {
            continue;
        }
        let state = State::from_index(s);
        if mdp.is_terminal(state) {
            reached = Some(s);
            break;
        }
        let mut best: Vec<(usize, f64)> = Vec::new();
        for a in mdp.actions(state) {
            match best.last_mut() {
                Some((w, c)) if *w == a.next => *c = c.min(a.cost),
                _ => best.push((a.next, a.cost)),
            }
        }
        for (w, c) in best {
            let t = State::new(w, slot_after(state.slot, c)).index();
            if d + c < dist[t] {
                dist[t] = d + c;
                pred[t] = s;
                heap.push(Reverse(Entry(d + c, t)));
            }
        }
    }
    let goal = reached.ok_or(MdpError::Infeasible {
        from: problem.source,
        to: problem.destination,
    })?;
    let mut path = vec![goal];
    while *path.last().unwrap() != start {
        path.push(pred[*path.last().unwrap()]);
    }
    path.reverse();
    let locations = cut_loops(path.iter().map(|&s| s / H).collect());

    let mut table = Vec::with_capacity(locations.len() - 1);
    let mut planned_cost = 0.0;
    let mut slot = problem.start;
    for leg in locations.windows(2) {
        let (v, w) = (leg[0], leg[1]);
        let fallback = SlotIndex::all()
            .find_map(|t| cheapest_to(mdp, State::new(v, t), w))
            .map(|a| a.participant);
        let row: [Option<usize>; H] = std::array::from_fn(|t| {
            cheapest_to(mdp, State::new(v, SlotIndex::from_zero_based(t)), w)
                .map(|a| a.participant)
                .or(fallback)
        });
        let cost = cheapest_to(mdp, State::new(v, slot), w).map_or(f64::INFINITY, |a| a.cost);
        planned_cost += cost;
        slot = slot_after(slot, cost.min(1e6));
        table.push(row.map(|p| p.unwrap_or(usize::MAX)));
    }
    Ok(FixedRoute {
        locations,
        rule: ParticipantRule::LowestLegCost { table },
        planned_cost,
    })
}

/// Fewest-hop route, ignoring when participants are where.
pub fn plan_shortest_path(
    graph: &LocationGraph,
    problem: &DeliveryProblem,
) -> Result<FixedRoute, MdpError> {
    let infeasible = MdpError::Infeasible {
        from: problem.source,
        to: problem.destination,
    };
    let n = graph.location_count();
    if problem.source >= n || problem.destination >= n {
        return Err(infeasible);
    }
    let locations = shortest_route(graph, problem.source, problem.destination).ok_or(infeasible)?;
    let candidates: Vec<Vec<usize>> = locations
        .windows(2)
        .map(|e| graph.participants(e[0], e[1]).to_vec())
        .collect();
    Ok(FixedRoute {
        planned_cost: candidates.len() as f64,
        locations,
        rule: ParticipantRule::UniformRandom { candidates },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::PresenceProfile;
    use crate::mdp::solve::tests::random_instance;
    use crate::mdp::{assemble_mdp, build_graph, solve_modified_policy_iteration, ActionCatalog};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;
    use std::sync::Arc;

    fn always(n: usize, present: &[usize]) -> PresenceProfile {
        let rows = (0..n)
            .map(|v| {
                if present.contains(&v) {
                    [1.0; H]
                } else {
                    [0.0; H]
                }
            })
            .collect();
        PresenceProfile::new("d", rows).unwrap()
    }

    #[test]
    fn cut_loops_keeps_first_visit() {
        assert_eq!(cut_loops(vec![0, 1, 2, 1, 3]), [0, 1, 3]);
        assert_eq!(cut_loops(vec![0, 1, 0, 2]), [0, 2]);
        assert_eq!(cut_loops(vec![4, 5]), [4, 5]);
    }

    #[test]
    fn deterministic_world_matches_optimal_path() {
        // chain 0-1-2-3 plus a slow shortcut 0-3 carried by someone rarely present
        let mut sets: Vec<BTreeSet<u32>> = vec![[0, 1].into(), [1, 2].into(), [2, 3].into()];
        let mut profiles = vec![always(4, &[0, 1]), always(4, &[1, 2]), always(4, &[2, 3])];
        sets.push([0, 3].into());
        let mut rows = vec![[0.0; H]; 4];
        rows[0] = [0.01; H];
        rows[3] = [0.01; H];
        profiles.push(PresenceProfile::new("slow", rows).unwrap());
        let graph = build_graph(&sets, 4);
        let problem = DeliveryProblem::new(0, 3, SlotIndex::new(1).unwrap()).unwrap();
        let mdp = assemble_mdp(&graph, &profiles, &problem).unwrap();
        let policy = solve_modified_policy_iteration(&mdp, 20).unwrap();
        let route = plan_heuristic(&mdp, &problem).unwrap();
        assert_eq!(route.locations, [0, 1, 2, 3]);
        assert!((route.planned_cost - policy.value(problem.start_state())).abs() < 1e-9);
        assert!((route.planned_cost - 6.0).abs() < 1e-12);
        let shortest = plan_shortest_path(&graph, &problem).unwrap();
        assert_eq!(shortest.locations, [0, 3]);
        assert_eq!(shortest.hop_count(), 1);
    }

    #[test]
    fn heuristic_routes_are_simple_and_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..40 {
            let (graph, profiles) = random_instance(&mut rng, 9);
            let catalog = Arc::new(ActionCatalog::build(&graph, &profiles).unwrap());
            let mdp = DeliveryMdp::for_destination(catalog, 0);
            for s in mdp.decision_states().filter(|s| s.slot.get() == 1) {
                let problem = DeliveryProblem::new(s.location, 0, s.slot).unwrap();
                let route = plan_heuristic(&mdp, &problem).unwrap();
                let set: BTreeSet<usize> = route.locations.iter().copied().collect();
                assert_eq!(set.len(), route.locations.len());
                assert_eq!(route.locations.first(), Some(&s.location));
                assert_eq!(route.locations.last(), Some(&0));
                let ParticipantRule::LowestLegCost { table } = &route.rule else {
                    panic!()
                };
                for (leg, e) in route.locations.windows(2).enumerate() {
                    for p in table[leg] {
                        assert!(graph.participants(e[0], e[1]).contains(&p));
                    }
                }
            }
        }
    }

    #[test]
    fn unknown_destination_is_infeasible() {
        let graph = build_graph(&[[0u32, 1].into()], 3);
        let problem = DeliveryProblem::new(0, 2, SlotIndex::new(3).unwrap()).unwrap();
        assert!(matches!(
            plan_shortest_path(&graph, &problem),
            Err(MdpError::Infeasible { from: 0, to: 2 })
        ));
    }
}
