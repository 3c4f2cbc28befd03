use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GenError;
use crate::envgraph::{Action, AgentState, EnvGraph, NodeId, StepOutcome};

const MAX_ROUTE_ATTEMPTS: usize = 500;

/// A gold route: visited nodes (one entry per FORWARD move plus the start),
/// the action sequence ending in STOP, and the heading at the start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub path: Vec<NodeId>,
    pub actions: Vec<Action>,
    pub initial_heading: f64,
    pub blocks: usize,
}

impl Route {
    pub fn start_state(&self) -> AgentState {
        AgentState::start(self.path[0], self.initial_heading)
    }

    pub fn turn_count(&self) -> usize {
        self.actions.iter().filter(|a| matches!(a, Action::Left | Action::Right)).count()
    }
}

fn advance(graph: &EnvGraph, state: &AgentState, action: Action) -> Result<AgentState, GenError> {
    match graph.step(state, action)? {
        StepOutcome::Moved(s) => Ok(s),
        StepOutcome::Terminal => unreachable!("STOP is never replayed mid-route"),
    }
}

/// Samples a route that starts at a block boundary, runs through whole
/// blocks, turns only at boundaries, never revisits a node, and stops
/// partway along (or at the end of) its last block.
pub fn generate_route(graph: &EnvGraph, seed: u64, min_blocks: usize, max_blocks: usize) -> Result<Route, GenError> {
    if min_blocks == 0 || min_blocks > max_blocks {
        return Err(GenError::InvalidParams(format!("block span {min_blocks}..={max_blocks} is empty")));
    }
    let starts: Vec<NodeId> =
        graph.nodes().filter(|&u| graph.is_block_boundary(u) && graph.junction_count(u).is_ok_and(|c| c > 0)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let failed = GenError::RouteFailed { min: min_blocks, max: max_blocks, attempts: MAX_ROUTE_ATTEMPTS };
    if starts.is_empty() {
        return Err(failed);
    }
    for _ in 0..MAX_ROUTE_ATTEMPTS {
        let n_blocks = rng.random_range(min_blocks..=max_blocks);
        let start = starts[rng.random_range(0..starts.len())];
        let exits = graph.out_edges(start)?;
        let heading = exits[rng.random_range(0..exits.len())].angle;
        if let Some(route) = try_route(graph, &mut rng, start, heading, n_blocks)? {
            return Ok(route);
        }
    }
    Err(failed)
}

fn try_route(
    graph: &EnvGraph,
    rng: &mut ChaCha8Rng,
    start: NodeId,
    heading: f64,
    n_blocks: usize,
) -> Result<Option<Route>, GenError> {
    let mut state = AgentState::start(start, heading);
    let mut visited = HashSet::from([start]);
    let mut path = vec![start];
    let mut actions = Vec::new();

    for b in 0..n_blocks {
        let edges = graph.out_edges(state.node)?;
        if b > 0 {
            let open: Vec<usize> = (0..edges.len()).filter(|&i| !visited.contains(&edges[i].to)).collect();
            if open.is_empty() {
                return Ok(None);
            }
            let target = open[rng.random_range(0..open.len())];
            let cur = graph.edge_index(state.node, state.heading)?.expect("route states hold legal headings");
            let n = edges.len();
            let left = (cur + n - target) % n;
            let right = (target + n - cur) % n;
            let (action, presses) = if left <= right { (Action::Left, left) } else { (Action::Right, right) };
            for _ in 0..presses {
                state = advance(graph, &state, action)?;
                actions.push(action);
            }
        }
        let edge = graph.edge_index(state.node, state.heading)?.expect("route states hold legal headings");
        let remaining = graph.blocks().remaining_steps(state.node, edge).unwrap_or(0);
        if remaining == 0 {
            return Ok(None);
        }
        let moves = if b + 1 == n_blocks { rng.random_range(1..=remaining) } else { remaining };
        for _ in 0..moves {
            state = advance(graph, &state, Action::Forward)?;
            if !visited.insert(state.node) {
                return Ok(None);
            }
            path.push(state.node);
            actions.push(Action::Forward);
        }
    }
    actions.push(Action::Stop);
    Ok(Some(Route { path, actions, initial_heading: heading, blocks: n_blocks }))
}
