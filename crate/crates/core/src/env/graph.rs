use super::{AgentState, EvaderState, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphMode {
    /// Fully connected.
    Global,
    /// Edge whenever the distance is at most the cut-off.
    Disk(f64),
}

/// Undirected neighbourhood structure over the agents.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InteractionGraph {
    neighbors: Vec<Vec<usize>>,
}

impl InteractionGraph {
    pub fn build(states: &[AgentState], world: &WorldConfig, mode: GraphMode) -> Self {
        let n = states.len();
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                let linked = match mode {
                    GraphMode::Global => true,
                    GraphMode::Disk(d_c) => {
                        world.distance(states[i].position(), states[j].position()) <= d_c
                    }
                };
                if linked {
                    neighbors[i].push(j);
                    neighbors[j].push(i);
                }
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        InteractionGraph { neighbors }
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }
}

/// Shortest path length from every agent to the evader over the graph whose
/// agent-agent edges have length at most `d_c` and whose agent-evader edges
/// have length at most `d_o`. Unreachable agents get `2 (x_max + y_max)`.
pub fn shortest_paths_to_evader(
    states: &[AgentState],
    evader: &EvaderState,
    world: &WorldConfig,
    d_c: f64,
    d_o: f64,
) -> Vec<f64> {
    let n = states.len();
    let sentinel = 2.0 * (world.x_max + world.y_max);
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    for (i, s) in states.iter().enumerate() {
        let d = world.distance(s.position(), evader.position());
        if d <= d_o {
            dist[i] = d;
        }
    }
    // dense Dijkstra, the graphs are small
    loop {
        let mut best = None;
        for i in 0..n {
            if !done[i] && dist[i].is_finite() && best.is_none_or(|b: usize| dist[i] < dist[b]) {
                best = Some(i);
            }
        }
        let Some(u) = best else { break };
        done[u] = true;
        for v in 0..n {
            if done[v] {
                continue;
            }
            let w = world.distance(states[u].position(), states[v].position());
            if w <= d_c && dist[u] + w < dist[v] {
                dist[v] = dist[u] + w;
            }
        }
    }
    dist.into_iter()
        .map(|d| if d.is_finite() { d } else { sentinel })
        .collect()
}

pub fn shortest_path_to_evader(
    i: usize,
    states: &[AgentState],
    evader: &EvaderState,
    world: &WorldConfig,
    d_c: f64,
    d_o: f64,
) -> f64 {
    shortest_paths_to_evader(states, evader, world, d_c, d_o)[i]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at(x: f64, y: f64) -> AgentState {
        AgentState::at(x, y, 0.0)
    }

    #[test]
    fn global_graph_is_complete() {
        let s = [at(0.0, 0.0), at(90.0, 90.0), at(50.0, 10.0)];
        let g = InteractionGraph::build(&s, &WorldConfig::default(), GraphMode::Global);
        for i in 0..3 {
            assert_eq!(g.degree(i), 2);
            assert!(!g.contains(i, i));
        }
    }

    #[test]
    fn cutoff_is_inclusive() {
        let s = [at(10.0, 10.0), at(50.0, 10.0)];
        let g = InteractionGraph::build(&s, &WorldConfig::default(), GraphMode::Disk(40.0));
        assert!(g.contains(0, 1) && g.contains(1, 0));
    }

    #[test]
    fn far_agents_are_isolated() {
        let s = [at(0.0, 0.0), at(60.0, 0.0), at(0.0, 60.0)];
        let g = InteractionGraph::build(&s, &WorldConfig::default(), GraphMode::Disk(40.0));
        for i in 0..3 {
            assert_eq!(g.degree(i), 0);
        }
    }

    #[test]
    fn direct_evader_edge() {
        let s = [at(10.0, 10.0), at(80.0, 80.0)];
        let e = EvaderState { x: 10.0, y: 22.0 };
        let d = shortest_paths_to_evader(&s, &e, &WorldConfig::default(), 40.0, 20.0);
        assert!((d[0] - 12.0).abs() < 1e-12);
    }

    /// Enumerates every simple path agent -> ... -> evader.
    fn brute_force(i: usize, s: &[AgentState], e: &EvaderState, w: &WorldConfig, dc: f64, d_o: f64) -> f64 {
        fn rec(u: usize, visited: &mut Vec<bool>, acc: f64, s: &[AgentState], e: &EvaderState, w: &WorldConfig, dc: f64, d_o: f64, best: &mut f64) {
            let de = w.distance(s[u].position(), e.position());
            if de <= d_o {
                *best = best.min(acc + de);
            }
            for v in 0..s.len() {
                if visited[v] {
                    continue;
                }
                let d = w.distance(s[u].position(), s[v].position());
                if d <= dc {
                    visited[v] = true;
                    rec(v, visited, acc + d, s, e, w, dc, d_o, best);
                    visited[v] = false;
                }
            }
        }
        let mut visited = vec![false; s.len()];
        visited[i] = true;
        let mut best = f64::INFINITY;
        rec(i, &mut visited, 0.0, s, e, w, dc, d_o, &mut best);
        if best.is_finite() { best } else { 2.0 * (w.x_max + w.y_max) }
    }

    #[test]
    fn relayed_path_through_neighbor() {
        let w = WorldConfig::default();
        let s = [at(10.0, 50.0), at(40.0, 50.0)];
        let e = EvaderState { x: 55.0, y: 50.0 };
        let d = shortest_paths_to_evader(&s, &e, &w, 40.0, 20.0);
        let oracle = brute_force(0, &s, &e, &w, 40.0, 20.0);
        assert!((oracle - 45.0).abs() < 1e-12);
        assert!((d[0] - 45.0).abs() < 1e-12);
    }

    #[test]
    fn disconnected_gets_sentinel() {
        let w = WorldConfig::default();
        let s = [at(0.0, 0.0), at(100.0, 100.0)];
        let e = EvaderState { x: 50.0, y: 50.0 };
        let d = shortest_paths_to_evader(&s, &e, &w, 40.0, 20.0);
        assert_eq!(d, vec![400.0, 400.0]);
    }

    proptest! {
        #[test]
        fn graph_is_symmetric(pts in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 2..15), dc in 5.0f64..80.0) {
            let s: Vec<_> = pts.iter().map(|&(x, y)| at(x, y)).collect();
            for w in [WorldConfig::default(), WorldConfig::toroidal()] {
                let g = InteractionGraph::build(&s, &w, GraphMode::Disk(dc));
                for i in 0..s.len() {
                    prop_assert!(!g.contains(i, i));
                    for &j in g.neighbors(i) {
                        prop_assert!(g.contains(j, i));
                    }
                }
            }
        }

        #[test]
        fn dijkstra_matches_path_enumeration(
            pts in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 2..7),
            ex in 0.0f64..100.0, ey in 0.0f64..100.0,
        ) {
            let s: Vec<_> = pts.iter().map(|&(x, y)| at(x, y)).collect();
            let e = EvaderState { x: ex, y: ey };
            let w = WorldConfig::toroidal();
            let d = shortest_paths_to_evader(&s, &e, &w, 40.0, 20.0);
            for i in 0..s.len() {
                let o = brute_force(i, &s, &e, &w, 40.0, 20.0);
                prop_assert!((d[i] - o).abs() < 1e-9);
            }
        }
    }
}
