//! Synthetic street worlds, gold routes, templated instructions with exact
//! sentence alignment labels, and the JSON-lines dataset format.

mod dataset;
mod instruction;
mod route;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envgraph::{heading_bin, Edge, EnvError, EnvGraph, NodeId, DEFAULT_BINS};

pub use dataset::{load_dataset, save_dataset, world_hash, Dataset, DatasetError, DatasetHeader, DATASET_VERSION};
pub use instruction::{generate_instruction, visible_landmark, InstructionRecord, Split, Vocab};
pub use route::{generate_route, Route};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("world generation failed after {0} attempts")]
    GenerationFailed(usize),
    #[error("no route spanning {min}..={max} blocks found after {attempts} attempts")]
    RouteFailed { min: usize, max: usize, attempts: usize },
    #[error("invalid world parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    pub seed: u64,
    pub grid_w: usize,
    pub grid_h: usize,
    pub edge_keep_prob: f64,
    pub landmark_vocab_size: usize,
    pub feature_noise_sigma: f64,
    pub d_v: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            seed: 0,
            grid_w: 6,
            grid_h: 6,
            edge_keep_prob: 0.85,
            landmark_vocab_size: 12,
            feature_noise_sigma: 0.05,
            d_v: 12,
        }
    }
}

impl WorldParams {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::InvalidParams(m.to_string()));
        if self.grid_w == 0 || self.grid_h == 0 || self.grid_w * self.grid_h < 2 {
            return bad("grid must have at least two nodes");
        }
        if !(self.edge_keep_prob > 0.0 && self.edge_keep_prob <= 1.0) {
            return bad("edge_keep_prob must lie in (0, 1]");
        }
        if self.landmark_vocab_size == 0 || self.d_v < self.landmark_vocab_size {
            return bad("need 0 < landmark_vocab_size <= d_v");
        }
        if !(self.feature_noise_sigma >= 0.0 && self.feature_noise_sigma.is_finite()) {
            return bad("feature_noise_sigma must be a nonnegative number");
        }
        Ok(())
    }
}

const MAX_WORLD_ATTEMPTS: usize = 64;

/// Deterministic random stream `stream` for sub-task `index` of `seed`.
pub fn derived_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) << 20);
    rng
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = x;
    while parent[c] != r {
        let next = parent[c];
        parent[c] = r;
        c = next;
    }
    r
}

/// Grid street graph with random deletions, repaired to be connected (every
/// street is two-way, so connected means strongly connected). Returns the
/// graph and the landmark id of every node.
pub fn generate_world_with_landmarks(params: &WorldParams) -> Result<(EnvGraph, Vec<usize>), GenError> {
    params.validate()?;
    let (w, h) = (params.grid_w, params.grid_h);
    let n = w * h;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let noise = Normal::new(0.0, params.feature_noise_sigma).map_err(|e| GenError::InvalidParams(e.to_string()))?;

    // Undirected grid streets as (a, b, heading a->b).
    let mut streets = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let u = r * w + c;
            if c + 1 < w {
                streets.push((u, u + 1, 90.0));
            }
            if r + 1 < h {
                streets.push((u, u + w, 180.0));
            }
        }
    }

    for _ in 0..MAX_WORLD_ATTEMPTS {
        let keep: Vec<bool> = streets.iter().map(|_| rng.random_bool(params.edge_keep_prob)).collect();
        let mut parent: Vec<usize> = (0..n).collect();
        for (s, &k) in streets.iter().zip(&keep) {
            if k {
                let (a, b) = (find(&mut parent, s.0), find(&mut parent, s.1));
                parent[a] = b;
            }
        }
        // Reconnect components with dropped streets, visited in random order.
        let mut keep = keep;
        let mut order: Vec<usize> = (0..streets.len()).filter(|&i| !keep[i]).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for i in order {
            let (a, b) = (find(&mut parent, streets[i].0), find(&mut parent, streets[i].1));
            if a != b {
                parent[a] = b;
                keep[i] = true;
            }
        }

        let mut out_edges: Vec<Vec<Edge>> = vec![Vec::new(); n];
        for (&(a, b, ang), _) in streets.iter().zip(&keep).filter(|(_, &k)| k) {
            out_edges[a].push(Edge { to: NodeId(b as u32), angle: ang });
            out_edges[b].push(Edge { to: NodeId(a as u32), angle: crate::envgraph::wrap_degrees(ang + 180.0) });
        }
        let landmarks: Vec<usize> = (0..n).map(|_| rng.random_range(0..params.landmark_vocab_size)).collect();

        // A direction with a street shows the landmark of the node down it;
        // other directions show nothing but noise.
        let bins = DEFAULT_BINS;
        let d_v = params.d_v;
        let features: Vec<Vec<f64>> = (0..n)
            .map(|u| {
                let mut f = vec![0.0; bins * d_v];
                for e in &out_edges[u] {
                    f[heading_bin(e.angle, bins) * d_v + landmarks[e.to.index()]] = 1.0;
                }
                if params.feature_noise_sigma > 0.0 {
                    f.iter_mut().for_each(|x| *x += noise.sample(&mut rng));
                }
                f
            })
            .collect();

        match EnvGraph::new(out_edges, features, bins, d_v) {
            Ok(g) => return Ok((g, landmarks)),
            // A world that is a single ring has no intersections to segment.
            Err(EnvError::MalformedGraph(_)) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(GenError::GenerationFailed(MAX_WORLD_ATTEMPTS))
}

pub fn generate_world(params: &WorldParams) -> Result<EnvGraph, GenError> {
    generate_world_with_landmarks(params).map(|(g, _)| g)
}

/// Generates `count` episodes on `graph`. Episode `i` draws from its own
/// seeded stream, so the output does not depend on generation order.
pub fn generate_episodes(
    graph: &EnvGraph,
    vocab: &Vocab,
    seed: u64,
    count: usize,
    min_blocks: usize,
    max_blocks: usize,
    filler_prob: f64,
) -> Result<Vec<InstructionRecord>, GenError> {
    use rayon::prelude::*;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let route_seed = derived_rng(seed, 1, i as u64).random::<u64>();
            let route = generate_route(graph, route_seed, min_blocks, max_blocks)?;
            let mut rng = derived_rng(seed, 2, i as u64);
            generate_instruction(graph, vocab, &route, i as u64, filler_prob, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_grid_has_all_streets() {
        let params = WorldParams { grid_w: 4, grid_h: 4, edge_keep_prob: 1.0, ..WorldParams::default() };
        let g = generate_world(&params).unwrap();
        assert_eq!(g.node_count(), 16);
        // 2 directions × (rows × (w-1) + cols × (h-1))
        assert_eq!(g.edge_count(), 2 * (4 * 3 + 4 * 3));
    }

    #[test]
    fn generated_worlds_are_connected() {
        for seed in 0..20 {
            let params = WorldParams { seed, edge_keep_prob: 0.5, ..WorldParams::default() };
            let g = generate_world(&params).unwrap();
            for v in g.nodes() {
                assert!(crate::envgraph::shortest_path_hops(&g, NodeId(0), v).unwrap().is_some());
                assert!(crate::envgraph::shortest_path_hops(&g, v, NodeId(0)).unwrap().is_some());
            }
        }
    }

    #[test]
    fn rejects_bad_params() {
        let p = WorldParams { d_v: 3, landmark_vocab_size: 5, ..WorldParams::default() };
        assert!(matches!(generate_world(&p), Err(GenError::InvalidParams(_))));
        let p = WorldParams { edge_keep_prob: 0.0, ..WorldParams::default() };
        assert!(matches!(generate_world(&p), Err(GenError::InvalidParams(_))));
    }
}
