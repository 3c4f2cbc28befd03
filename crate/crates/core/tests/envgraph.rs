mod common;

use blocknav::envgraph::{segment_blocks, Action, AgentState, Edge, EnvError, EnvGraph, NodeId, StepOutcome};
use proptest::prelude::*;

fn e(to: u32, angle: f64) -> Edge {
    Edge { to: NodeId(to), angle }
}

fn graph(edges: Vec<Vec<Edge>>) -> EnvGraph {
    let n = edges.len();
    EnvGraph::new(edges, vec![vec![0.0; 8]; n], 8, 1).unwrap()
}

/// Straight east-west street of `n` nodes.
fn path(n: u32) -> EnvGraph {
    let edges = (0..n)
        .map(|i| {
            let mut out = Vec::new();
            if i > 0 {
                out.push(e(i - 1, -90.0));
            }
            if i + 1 < n {
                out.push(e(i + 1, 90.0));
            }
            out
        })
        .collect();
    graph(edges)
}

/// Full `w` by `h` lattice, node `y * w + x`, north is `y + 1`.
fn lattice(w: u32, h: u32) -> EnvGraph {
    let mut edges = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let id = y * w + x;
            let mut out = Vec::new();
            if y + 1 < h {
                out.push(e(id + w, 0.0));
            }
            if x + 1 < w {
                out.push(e(id + 1, 90.0));
            }
            if y > 0 {
                out.push(e(id - w, 180.0));
            }
            if x > 0 {
                out.push(e(id - 1, -90.0));
            }
            edges.push(out);
        }
    }
    graph(edges)
}

fn forward(g: &EnvGraph, s: AgentState) -> AgentState {
    match g.step(&s, Action::Forward).unwrap() {
        StepOutcome::Moved(next) => next,
        StepOutcome::Terminal => unreachable!(),
    }
}

#[test]
fn path_is_one_block() {
    let g = path(6);
    let idx = g.blocks();
    assert_eq!(idx.len(), 1);
    assert_eq!(idx.blocks()[0].size(), 5);
    // node 1 heading east
    let east = g.edge_index(NodeId(1), 90.0).unwrap().unwrap();
    assert_eq!(idx.remaining_steps(NodeId(1), east), Some(4));
    assert_eq!(idx.block_size(NodeId(1), east), Some(5));
}

#[test]
fn single_edge_block() {
    // two three-way intersections sharing one edge
    let g = graph(vec![
        vec![e(1, 90.0), e(2, 0.0), e(3, 180.0)],
        vec![e(0, -90.0), e(4, 0.0), e(5, 180.0)],
        vec![e(0, 180.0)],
        vec![e(0, 0.0)],
        vec![e(1, 180.0)],
        vec![e(1, 0.0)],
    ]);
    let east = g.edge_index(NodeId(0), 90.0).unwrap().unwrap();
    assert_eq!(g.blocks().remaining_steps(NodeId(0), east), Some(1));
    assert_eq!(g.blocks().block_size(NodeId(0), east), Some(1));
    let s = AgentState::start(NodeId(0), 90.0);
    assert_eq!(g.block_progress_label(&s).unwrap(), 1.0);
    assert_eq!(g.block_progress_label(&forward(&g, s)).unwrap(), 0.0);
}

#[test]
fn lattice_corners_join_their_two_edges() {
    // Corners have two exits, so they sit inside an L-shaped block rather
    // than ending one: 24 edges make 16 single-edge blocks plus 4 corners.
    let g = lattice(4, 4);
    let sizes: Vec<usize> = g.blocks().blocks().iter().map(|b| b.size()).collect();
    assert_eq!(sizes.len(), 20);
    assert_eq!(sizes.iter().filter(|&&s| s == 1).count(), 16);
    assert_eq!(sizes.iter().filter(|&&s| s == 2).count(), 4);
    assert_eq!(sizes.iter().sum::<usize>(), 24);
}

#[test]
fn progress_counts_down_along_a_street() {
    let g = path(6);
    let mut s = AgentState::start(NodeId(0), 90.0);
    let mut labels = vec![g.block_progress_label(&s).unwrap()];
    for _ in 0..5 {
        s = forward(&g, s);
        labels.push(g.block_progress_label(&s).unwrap());
    }
    assert_eq!(labels, vec![1.0, 0.8, 0.6, 0.4, 0.2, 0.0]);
}

#[test]
fn boundary_at_the_start_faces_the_next_block() {
    let g = lattice(4, 4);
    // node 1 is a three-way intersection on the south edge
    let s = AgentState::start(NodeId(1), 0.0);
    assert_eq!(g.block_progress_label(&s).unwrap(), 1.0);
    assert!(g.blocks().block_at(&g, &s).unwrap().is_some());
    let moved = forward(&g, s);
    assert!(g.is_block_boundary(moved.node));
    assert_eq!(g.block_progress_label(&moved).unwrap(), 0.0);
    assert_eq!(g.blocks().block_at(&g, &moved).unwrap(), None);
}

#[test]
fn unknown_node_is_rejected() {
    let g = path(3);
    let s = AgentState::start(NodeId(9), 90.0);
    assert_eq!(g.block_progress_label(&s), Err(EnvError::UnknownNode(NodeId(9))));
}

#[test]
fn ring_without_intersections_is_malformed() {
    // a ring of degree-two nodes has no intersection to end a block
    let g = EnvGraph::new(
        vec![vec![e(1, 90.0), e(2, -90.0)], vec![e(2, 90.0), e(0, -90.0)], vec![e(0, 90.0), e(1, -90.0)]],
        vec![vec![0.0; 8]; 3],
        8,
        1,
    );
    match g {
        Err(EnvError::MalformedGraph(_)) => {}
        Ok(g) => assert!(matches!(segment_blocks(&g), Err(EnvError::MalformedGraph(_)))),
        Err(other) => panic!("unexpected {other}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn labels_match_a_forward_walk(seed in 0u64..500, pick in 0usize..1000) {
        let g = common::small_world(seed);
        let nodes: Vec<NodeId> = g.nodes().filter(|&u| !g.out_edges(u).unwrap().is_empty()).collect();
        let start = nodes[pick % nodes.len()];
        let edges = g.out_edges(start).unwrap();
        let heading = edges[pick % edges.len()].angle;
        let mut s = AgentState::start(start, heading);
        let e0 = g.edge_index(start, heading).unwrap().unwrap();
        let remaining = g.blocks().remaining_steps(start, e0).unwrap();
        let size = g.blocks().block_size(start, e0).unwrap();
        prop_assert!(remaining >= 1 && remaining <= size);
        for k in 0..remaining {
            let label = g.block_progress_label(&s).unwrap();
            prop_assert!((label - (remaining - k) as f64 / size as f64).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&label));
            s = forward(&g, s);
        }
        prop_assert!(g.is_block_boundary(s.node));
        prop_assert_eq!(g.block_progress_label(&s).unwrap(), 0.0);
    }

    #[test]
    fn every_exit_belongs_to_a_block(seed in 0u64..500) {
        let g = common::small_world(seed);
        for u in g.nodes() {
            for i in 0..g.out_edges(u).unwrap().len() {
                let b = g.blocks().block_of(u, i).unwrap();
                prop_assert!(g.blocks().block(b).nodes.contains(&u));
            }
        }
    }
}
