use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

/// Locations joined whenever some participant visits both ends.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocationGraph {
    /// `adjacency[v][w]`: participants (by index) whose visit set holds `v` and `w`.
    adjacency: Vec<BTreeMap<usize, Vec<usize>>>,
}

impl LocationGraph {
    pub fn location_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, &[usize])> {
        self.adjacency[v].iter().map(|(w, ps)| (*w, ps.as_slice()))
    }

    pub fn participants(&self, v: usize, w: usize) -> &[usize] {
        self.adjacency
            .get(v)
            .and_then(|m| m.get(&w))
            .map_or(&[], Vec::as_slice)
    }

    pub fn has_edge(&self, v: usize, w: usize) -> bool {
        !self.participants(v, w).is_empty()
    }

    /// Undirected edge count.
    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(BTreeMap::len).sum::<usize>() / 2
    }
}

/// Builds the graph from per-participant visit sets; participant `i` is
/// `visit_sets[i]`. Towers at or beyond `location_count` are ignored.
pub fn build_graph(visit_sets: &[BTreeSet<u32>], location_count: usize) -> LocationGraph {
    let mut adjacency: Vec<BTreeMap<usize, Vec<usize>>> = vec![BTreeMap::new(); location_count];
    for (participant, visits) in visit_sets.iter().enumerate() {
        let locations: Vec<usize> = visits
            .iter()
            .map(|&t| t as usize)
            .filter(|&t| t < location_count)
            .collect();
        for &v in &locations {
            for &w in &locations {
                if v != w {
                    adjacency[v].entry(w).or_default().push(participant);
                }
            }
        }
    }
    LocationGraph { adjacency }
}

/// Hop distance and predecessor of each location from `source`, by Dijkstra
/// with unit edge weights. Ties settle the lowest location id first.
pub fn hop_tree(graph: &LocationGraph, source: usize) -> Vec<Option<(usize, usize)>> {
    let n = graph.location_count();
    let mut best: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    best[source] = Some((0, source));
    heap.push(Reverse((0usize, source)));
    while let Some(Reverse((dist, v))) = heap.pop() {
        if settled[v] {
            continue;
        }
        settled[v] = true;
        for (w, _) in graph.neighbors(v) {
            let candidate = dist + 1;
            if best[w].is_none_or(|(d, _)| candidate < d) {
                best[w] = Some((candidate, v));
                heap.push(Reverse((candidate, w)));
            }
        }
    }
    best
}

/// Fewest-hop location sequence from `source` to `destination`.
pub fn shortest_route(
    graph: &LocationGraph,
    source: usize,
    destination: usize,
) -> Option<Vec<usize>> {
    let tree = hop_tree(graph, source);
    tree[destination]?;
    let mut route = vec![destination];
    let mut at = destination;
    while at != source {
        at = tree[at]?.1;
        route.push(at);
    }
    route.reverse();
    Some(route)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    fn sets(raw: &[&[u32]]) -> Vec<BTreeSet<u32>> {
        raw.iter().map(|s| s.iter().copied().collect()).collect()
    }

    #[test]
    fn edges_list_shared_visitors() {
        // a=0, b=1, c=2
        let g = build_graph(&sets(&[&[0, 1], &[1, 2]]), 3);
        assert_eq!(g.participants(0, 1), [0]);
        assert_eq!(g.participants(1, 0), [0]);
        assert_eq!(g.participants(1, 2), [1]);
        assert!(!g.has_edge(0, 2));
        assert_eq!(g.edge_count(), 2);
        assert!(!g.has_edge(1, 1));
    }

    #[test]
    fn disjoint_visits_have_no_edges() {
        let g = build_graph(&sets(&[&[0], &[1], &[2, 2]]), 3);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn adding_participants_only_adds_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let all: Vec<BTreeSet<u32>> = (0..30)
            .map(|_| {
                (0..rng.random_range(1..5))
                    .map(|_| rng.random_range(0..20))
                    .collect()
            })
            .collect();
        for n in 1..all.len() {
            let small = build_graph(&all[..n], 20);
            let large = build_graph(&all[..n + 1], 20);
            for v in 0..20 {
                for (w, _) in small.neighbors(v) {
                    assert!(large.has_edge(v, w));
                }
            }
        }
    }

    fn bfs(graph: &LocationGraph, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; graph.location_count()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            for (w, _) in graph.neighbors(v) {
                if dist[w].is_none() {
                    dist[w] = Some(dist[v].unwrap() + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    #[test]
    fn unit_dijkstra_equals_bfs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let n = rng.random_range(2..40);
            let visits: Vec<BTreeSet<u32>> = (0..rng.random_range(1..25))
                .map(|_| {
                    (0..rng.random_range(1..4))
                        .map(|_| rng.random_range(0..n as u32))
                        .collect()
                })
                .collect();
            let g = build_graph(&visits, n);
            let source = rng.random_range(0..n);
            let tree = hop_tree(&g, source);
            let oracle = bfs(&g, source);
            for v in 0..n {
                assert_eq!(tree[v].map(|(d, _)| d), oracle[v]);
                if let Some(route) = shortest_route(&g, source, v) {
                    assert_eq!(route.len() - 1, oracle[v].unwrap());
                    assert!(route.windows(2).all(|e| g.has_edge(e[0], e[1])));
                }
            }
        }
    }

    #[test]
    fn single_edge_route() {
        let g = build_graph(&sets(&[&[3, 5]]), 6);
        assert_eq!(shortest_route(&g, 3, 5), Some(vec![3, 5]));
        assert_eq!(shortest_route(&g, 3, 4), None);
    }
}
