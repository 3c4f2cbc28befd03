//! Directed street graph with angle-labelled edges, the discrete action
//! model, turning-angle signals and block segmentation.

mod blocks;
mod paths;
mod world_file;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use blocks::{segment_blocks, Block, BlockId, BlockIndex};
pub use paths::shortest_path_hops;
pub use world_file::{load_world, parse_world, save_world, world_to_string, WorldFileError, WORLD_FILE_VERSION};

/// Number of directional feature rows per node.
pub const DEFAULT_BINS: usize = 8;

/// Tolerance for matching a heading against an edge angle.
const ANGLE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub to: NodeId,
    /// Heading of the edge in degrees, `(-180, 180]`, clockwise from north.
    pub angle: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} has no outgoing edge at the current heading")]
    NoForwardEdge(NodeId),
    #[error("heading {heading} does not match any outgoing edge of node {node}")]
    InvalidHeading { node: NodeId, heading: f64 },
    #[error("malformed graph: {0}")]
    MalformedGraph(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Forward = 0,
    Left = 1,
    Right = 2,
    Stop = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Forward, Action::Left, Action::Right, Action::Stop];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }
}

/// Position and heading of the agent. `prev_heading` is the heading held at
/// the previous timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub node: NodeId,
    pub heading: f64,
    pub prev_heading: f64,
    pub step_index: usize,
}

impl AgentState {
    pub fn start(node: NodeId, heading: f64) -> Self {
        AgentState { node, heading, prev_heading: heading, step_index: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Moved(AgentState),
    Terminal,
}

/// Turning-angle signals observed at one timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurnSignals {
    pub g_c: f64,
    pub g_l: f64,
    pub junction_count: usize,
}

/// Wraps an angle in degrees into `(-180, 180]`.
pub fn wrap_degrees(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Signed turn from `prev_heading` to `heading`, wrapped and divided by 180.
pub fn normalize_heading_delta(prev_heading: f64, heading: f64) -> f64 {
    wrap_degrees(heading - prev_heading) / 180.0
}

/// Sum of the current and the `k` preceding turning angles; steps before the
/// start of the history count as zero.
pub fn long_term_angle(g_history: &[f64], t: usize, k: usize) -> f64 {
    (0..=k).filter_map(|j| t.checked_sub(j)).map(|i| g_history[i]).sum()
}

/// Heading bin of `heading` among `bins` equal sectors, bin 0 centred on north.
pub fn heading_bin(heading: f64, bins: usize) -> usize {
    let width = 360.0 / bins as f64;
    ((heading / width).round() as i64).rem_euclid(bins as i64) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvGraph {
    out_edges: Vec<Vec<Edge>>,
    features: Vec<Vec<f64>>,
    bins: usize,
    d_v: usize,
    blocks: BlockIndex,
}

impl EnvGraph {
    /// Builds a graph from per-node edge lists and feature matrices
    /// (`bins × d_v`, row-major). Edge lists are sorted by angle here.
    pub fn new(mut out_edges: Vec<Vec<Edge>>, features: Vec<Vec<f64>>, bins: usize, d_v: usize) -> Result<Self, EnvError> {
        let n = out_edges.len();
        if features.len() != n {
            return Err(EnvError::MalformedGraph(format!("{} feature matrices for {n} nodes", features.len())));
        }
        for (u, edges) in out_edges.iter_mut().enumerate() {
            edges.sort_by(|a, b| a.angle.total_cmp(&b.angle));
            for e in edges.iter() {
                if !(e.angle > -180.0 && e.angle <= 180.0) {
                    return Err(EnvError::MalformedGraph(format!("edge {u}->{} angle {} outside (-180, 180]", e.to, e.angle)));
                }
                if e.to.index() >= n {
                    return Err(EnvError::UnknownNode(e.to));
                }
            }
            if edges.windows(2).any(|w| (w[1].angle - w[0].angle).abs() < ANGLE_EPS) {
                return Err(EnvError::MalformedGraph(format!("node {u} has duplicate edge angles")));
            }
        }
        for (u, f) in features.iter().enumerate() {
            if f.len() != bins * d_v {
                return Err(EnvError::MalformedGraph(format!(
                    "node {u} features have {} values, expected {bins}x{d_v}",
                    f.len()
                )));
            }
        }
        let mut g = EnvGraph { out_edges, features, bins, d_v, blocks: BlockIndex::default() };
        g.blocks = segment_blocks(&g)?;
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.out_edges.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.out_edges.len() as u32).map(NodeId)
    }

    pub fn edge_count(&self) -> usize {
        self.out_edges.iter().map(Vec::len).sum()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node.index() < self.out_edges.len()
    }

    pub fn out_edges(&self, node: NodeId) -> Result<&[Edge], EnvError> {
        self.out_edges.get(node.index()).map(Vec::as_slice).ok_or(EnvError::UnknownNode(node))
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn d_v(&self) -> usize {
        self.d_v
    }

    pub fn blocks(&self) -> &BlockIndex {
        &self.blocks
    }

    /// Raw features in the world frame, `bins × d_v` row-major.
    pub fn features(&self, node: NodeId) -> Result<&[f64], EnvError> {
        self.features.get(node.index()).map(Vec::as_slice).ok_or(EnvError::UnknownNode(node))
    }

    /// Directional features rotated into the agent frame: row 0 faces
    /// `heading`, following rows proceed clockwise.
    pub fn observe(&self, node: NodeId, heading: f64) -> Result<Vec<Vec<f64>>, EnvError> {
        let f = self.features(node)?;
        let base = heading_bin(heading, self.bins);
        Ok((0..self.bins)
            .map(|j| {
                let b = (base + j) % self.bins;
                f[b * self.d_v..(b + 1) * self.d_v].to_vec()
            })
            .collect())
    }

    pub fn junction_count(&self, node: NodeId) -> Result<usize, EnvError> {
        Ok(self.out_edges(node)?.len())
    }

    /// Intersections (three or more exits) and dead ends delimit blocks.
    pub fn is_block_boundary(&self, node: NodeId) -> bool {
        self.out_edges.get(node.index()).is_some_and(|e| e.len() != 2)
    }

    /// Index of the outgoing edge whose angle equals `heading`.
    pub fn edge_index(&self, node: NodeId, heading: f64) -> Result<Option<usize>, EnvError> {
        Ok(self.out_edges(node)?.iter().position(|e| (wrap_degrees(e.angle - heading)).abs() < ANGLE_EPS))
    }

    /// Heading held after arriving at `node` while travelling at `arrival`:
    /// the same heading if an edge continues it, otherwise the closest exit.
    /// Equal candidates resolve towards the counterclockwise one.
    pub fn arrival_heading(&self, node: NodeId, arrival: f64) -> Result<f64, EnvError> {
        let edges = self.out_edges(node)?;
        let best = edges.iter().min_by(|a, b| {
            let da = wrap_degrees(a.angle - arrival);
            let db = wrap_degrees(b.angle - arrival);
            da.abs().total_cmp(&db.abs()).then(da.total_cmp(&db))
        });
        Ok(best.map_or(arrival, |e| e.angle))
    }

    /// Heading a LEFT (`dir = -1`) or RIGHT (`dir = 1`) rotation selects.
    fn rotated_heading(&self, node: NodeId, heading: f64, dir: isize) -> Result<f64, EnvError> {
        let edges = self.out_edges(node)?;
        if edges.is_empty() {
            return Ok(heading);
        }
        let i = self.edge_index(node, heading)?.ok_or(EnvError::InvalidHeading { node, heading })?;
        let n = edges.len() as isize;
        Ok(edges[((i as isize + dir).rem_euclid(n)) as usize].angle)
    }

    /// Normalized turn each action would produce from `state`; `None` when the
    /// action has no defined outcome (no outgoing edges at all).
    pub fn candidate_turns(&self, state: &AgentState) -> Result<[Option<f64>; 4], EnvError> {
        if self.out_edges(state.node)?.is_empty() {
            return Ok([None, None, None, Some(0.0)]);
        }
        let left = self.rotated_heading(state.node, state.heading, -1)?;
        let right = self.rotated_heading(state.node, state.heading, 1)?;
        Ok([
            Some(0.0),
            Some(normalize_heading_delta(state.heading, left)),
            Some(normalize_heading_delta(state.heading, right)),
            Some(0.0),
        ])
    }

    /// Applies one action. FORWARD follows the edge at the current heading;
    /// LEFT/RIGHT rotate to the neighbouring exit in sorted-angle order
    /// without moving; STOP ends the episode.
    pub fn step(&self, state: &AgentState, action: Action) -> Result<StepOutcome, EnvError> {
        let node = state.node;
        let edges = self.out_edges(node)?;
        let next = match action {
            Action::Stop => return Ok(StepOutcome::Terminal),
            Action::Forward => {
                let i = self.edge_index(node, state.heading)?.ok_or(if edges.is_empty() {
                    EnvError::NoForwardEdge(node)
                } else {
                    EnvError::InvalidHeading { node, heading: state.heading }
                })?;
                let edge = edges[i];
                AgentState {
                    node: edge.to,
                    heading: self.arrival_heading(edge.to, edge.angle)?,
                    prev_heading: edge.angle,
                    step_index: state.step_index + 1,
                }
            }
            Action::Left | Action::Right => {
                let dir = if action == Action::Left { -1 } else { 1 };
                AgentState {
                    node,
                    heading: self.rotated_heading(node, state.heading, dir)?,
                    prev_heading: state.heading,
                    step_index: state.step_index + 1,
                }
            }
        };
        Ok(StepOutcome::Moved(next))
    }

    /// Replays `actions` from `start`, returning every visited state (the
    /// start included) up to and excluding the terminal STOP.
    pub fn replay(&self, start: AgentState, actions: &[Action]) -> Result<Vec<AgentState>, EnvError> {
        let mut states = vec![start];
        let mut cur = start;
        for &a in actions {
            match self.step(&cur, a)? {
                StepOutcome::Moved(s) => {
                    cur = s;
                    states.push(s);
                }
                StepOutcome::Terminal => break,
            }
        }
        Ok(states)
    }

    /// Turning-angle signals at `t` given the history of `g_c` values.
    pub fn turn_signals(&self, state: &AgentState, g_history: &[f64], k: usize) -> Result<TurnSignals, EnvError> {
        let t = g_history.len().saturating_sub(1);
        Ok(TurnSignals {
            g_c: normalize_heading_delta(state.prev_heading, state.heading),
            g_l: if g_history.is_empty() { 0.0 } else { long_term_angle(g_history, t, k) },
            junction_count: self.junction_count(state.node)?,
        })
    }

    /// Ground-truth block progress `remaining / block size` for `state`.
    ///
    /// A block boundary reached after the first step is the end of the block
    /// just traversed and scores 0.
    pub fn block_progress_label(&self, state: &AgentState) -> Result<f64, EnvError> {
        self.blocks.progress_label(self, state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star() -> EnvGraph {
        // Node 0 has exits west, north and east.
        let edges = vec![
            vec![Edge { to: NodeId(1), angle: -90.0 }, Edge { to: NodeId(2), angle: 0.0 }, Edge { to: NodeId(3), angle: 90.0 }],
            vec![Edge { to: NodeId(0), angle: 90.0 }],
            vec![Edge { to: NodeId(0), angle: 180.0 }],
            vec![Edge { to: NodeId(0), angle: -90.0 }],
        ];
        EnvGraph::new(edges, vec![vec![0.0; 8]; 4], 8, 1).unwrap()
    }

    /// `((b - a) mod 360)` shifted into `(-180, 180]` by explicit case split.
    fn modular_delta(a: f64, b: f64) -> f64 {
        let mut d = (b - a) % 360.0;
        if d <= -180.0 {
            d += 360.0;
        }
        if d > 180.0 {
            d -= 360.0;
        }
        d / 180.0
    }

    #[test]
    fn heading_delta_examples() {
        assert_eq!(normalize_heading_delta(0.0, 0.0), 0.0);
        assert_eq!(normalize_heading_delta(0.0, 180.0), 1.0);
        assert_eq!(normalize_heading_delta(30.0, -60.0), -0.5);
        assert_eq!(modular_delta(30.0, -60.0), -0.5);
        assert_eq!(normalize_heading_delta(90.0, -90.0), 1.0);
        assert_eq!(normalize_heading_delta(-170.0, 170.0), -20.0 / 180.0);
    }

    #[test]
    fn long_term_angle_examples() {
        assert_eq!(long_term_angle(&[0.4], 0, 3), 0.4);
        let h = [0.1, 0.2, -0.3, 0.5];
        assert!((long_term_angle(&h, 3, 3) - (0.5 - 0.3 + 0.2 + 0.1)).abs() < 1e-15);
        assert_eq!(long_term_angle(&h, 2, 0), -0.3);
        assert!((long_term_angle(&h, 1, 5) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn step_examples() {
        let g = star();
        let s = AgentState::start(NodeId(0), 0.0);
        assert_eq!(g.step(&s, Action::Stop).unwrap(), StepOutcome::Terminal);
        let StepOutcome::Moved(l) = g.step(&s, Action::Left).unwrap() else { panic!() };
        assert_eq!((l.node, l.heading, l.prev_heading, l.step_index), (NodeId(0), -90.0, 0.0, 1));
        let StepOutcome::Moved(f) = g.step(&s, Action::Forward).unwrap() else { panic!() };
        assert_eq!((f.node, f.prev_heading, f.heading), (NodeId(2), 0.0, 180.0));
        // Wraps around the sorted edge list.
        let StepOutcome::Moved(r) = g.step(&AgentState::start(NodeId(0), 90.0), Action::Right).unwrap() else { panic!() };
        assert_eq!(r.heading, -90.0);
    }

    #[test]
    fn forward_without_edges_fails() {
        let g = EnvGraph::new(vec![vec![]], vec![vec![0.0; 8]], 8, 1).unwrap();
        let s = AgentState::start(NodeId(0), 0.0);
        assert_eq!(g.step(&s, Action::Forward), Err(EnvError::NoForwardEdge(NodeId(0))));
        assert_eq!(g.candidate_turns(&s).unwrap(), [None, None, None, Some(0.0)]);
    }

    #[test]
    fn junction_counts() {
        let g = star();
        assert_eq!(g.junction_count(NodeId(1)).unwrap(), 1);
        assert_eq!(g.junction_count(NodeId(0)).unwrap(), 3);
        assert_eq!(g.junction_count(NodeId(9)), Err(EnvError::UnknownNode(NodeId(9))));
    }

    #[test]
    fn observation_rotates_into_agent_frame() {
        let feats: Vec<f64> = (0..8).map(f64::from).collect();
        let g = EnvGraph::new(vec![vec![]], vec![feats], 8, 1).unwrap();
        let rows = g.observe(NodeId(0), 90.0).unwrap();
        assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), vec![2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_angles() {
        let e = vec![vec![Edge { to: NodeId(0), angle: -180.0 }]];
        assert!(matches!(EnvGraph::new(e, vec![vec![0.0; 8]], 8, 1), Err(EnvError::MalformedGraph(_))));
        let e = vec![vec![Edge { to: NodeId(0), angle: 10.0 }, Edge { to: NodeId(0), angle: 10.0 }]];
        assert!(matches!(EnvGraph::new(e, vec![vec![0.0; 8]], 8, 1), Err(EnvError::MalformedGraph(_))));
    }
}
