#![allow(dead_code)]

use blocknav::agent::AgentConfig;
use blocknav::envgraph::EnvGraph;
use blocknav::worldgen::{generate_episodes, generate_world, InstructionRecord, Vocab, WorldParams};

pub fn small_world(seed: u64) -> EnvGraph {
    generate_world(&WorldParams { seed, grid_w: 4, grid_h: 4, landmark_vocab_size: 6, d_v: 6, ..WorldParams::default() }).unwrap()
}

pub fn records(env: &EnvGraph, seed: u64, n: usize, min_blocks: usize, max_blocks: usize) -> (Vocab, Vec<InstructionRecord>) {
    let vocab = Vocab::new(env.d_v());
    let recs = generate_episodes(env, &vocab, seed, n, min_blocks, max_blocks, 0.3).unwrap();
    (vocab, recs)
}

/// Tiny dimensions for oracle and gradient tests.
pub fn tiny_config(env: &EnvGraph, vocab: &Vocab) -> AgentConfig {
    AgentConfig {
        d: 4,
        d_t: 4,
        dim_timestep: 3,
        dim_action: 2,
        dim_junction: 2,
        heads: 2,
        d_v: env.d_v(),
        vocab_size: vocab.len(),
        max_t: 16,
        ..AgentConfig::default()
    }
}

/// A record whose gold route is exactly `steps` actions long.
pub fn record_with_steps(env: &EnvGraph, steps: usize) -> (Vocab, InstructionRecord) {
    let (vocab, recs) = records(env, 99, 400, 1, 2);
    let r = recs.into_iter().find(|r| r.steps() == steps).expect("a record of the requested length");
    (vocab, r)
}

/// All-pairs hop counts by Floyd-Warshall, `usize::MAX` when unreachable.
pub fn floyd_warshall(env: &EnvGraph) -> Vec<Vec<usize>> {
    let n = env.node_count();
    let mut d = vec![vec![usize::MAX; n]; n];
    for u in env.nodes() {
        d[u.index()][u.index()] = 0;
        for e in env.out_edges(u).unwrap() {
            d[u.index()][e.to.index()] = d[u.index()][e.to.index()].min(1);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] != usize::MAX && d[k][j] != usize::MAX {
                    d[i][j] = d[i][j].min(d[i][k] + d[k][j]);
                }
            }
        }
    }
    d
}

/// Edit distance by plain recursion over prefixes.
pub fn recursive_edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    match (a.split_last(), b.split_last()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = recursive_edit_distance(ra, rb) + usize::from(x != y);
            let del = recursive_edit_distance(ra, b) + 1;
            let ins = recursive_edit_distance(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}
