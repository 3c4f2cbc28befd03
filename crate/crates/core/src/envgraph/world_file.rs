//! JSON world files:
//! `{"version":1,"nodes":[{"id","features"}],"edges":[{"from","to","angle_deg"}]}`.
//!
//! Files are written one node or edge per line so that validation errors can
//! point at a line.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Edge, EnvError, EnvGraph, NodeId};

pub const WORLD_FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WorldFileError {
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl WorldFileError {
    pub fn line(&self) -> Option<usize> {
        match self {
            WorldFileError::Invalid { line, .. } => Some(*line),
            WorldFileError::Io(_) => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldDoc {
    version: u32,
    nodes: Vec<NodeDoc>,
    edges: Vec<EdgeDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: u32,
    features: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDoc {
    from: u32,
    to: u32,
    angle_deg: f64,
}

pub fn world_to_string(graph: &EnvGraph) -> String {
    let mut out = format!("{{\"version\":{WORLD_FILE_VERSION},\"nodes\":[\n");
    let n = graph.node_count();
    for u in graph.nodes() {
        let f = graph.features(u).expect("node exists");
        let doc = NodeDoc { id: u.0, features: f.chunks(graph.d_v().max(1)).map(<[f64]>::to_vec).collect() };
        out.push_str(&serde_json::to_string(&doc).expect("serializable"));
        out.push_str(if u.index() + 1 < n { ",\n" } else { "\n" });
    }
    out.push_str("],\"edges\":[\n");
    let edges: Vec<EdgeDoc> = graph
        .nodes()
        .flat_map(|u| {
            graph.out_edges(u).expect("node exists").iter().map(move |e| EdgeDoc { from: u.0, to: e.to.0, angle_deg: e.angle })
        })
        .collect();
    for (i, e) in edges.iter().enumerate() {
        out.push_str(&serde_json::to_string(e).expect("serializable"));
        out.push_str(if i + 1 < edges.len() { ",\n" } else { "\n" });
    }
    out.push_str("]}\n");
    out
}

pub fn save_world(graph: &EnvGraph, path: &Path) -> Result<(), WorldFileError> {
    std::fs::write(path, world_to_string(graph))?;
    Ok(())
}

pub fn load_world(path: &Path) -> Result<EnvGraph, WorldFileError> {
    parse_world(&std::fs::read_to_string(path)?)
}

/// Line numbers where each object element of the top-level array `key` starts.
fn element_lines(text: &str, key: &str) -> Vec<usize> {
    let mut lines = Vec::new();
    let (mut depth, mut line) = (0usize, 1usize);
    let (mut in_str, mut escaped) = (false, false);
    let mut current = String::new();
    let mut last_string: Option<String> = None;
    let mut in_target = false;
    for ch in text.chars() {
        if ch == '\n' {
            line += 1;
        }
        if in_str {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_str = false;
                if depth == 1 {
                    last_string = Some(std::mem::take(&mut current));
                }
            } else {
                current.push(ch);
            }
            continue;
        }
        match ch {
            '"' => {
                in_str = true;
                current.clear();
            }
            '{' | '[' => {
                if depth == 1 && ch == '[' {
                    in_target = last_string.as_deref() == Some(key);
                } else if depth == 2 && in_target && ch == '{' {
                    lines.push(line);
                }
                depth += 1;
            }
            '}' | ']' => {
                depth = depth.saturating_sub(1);
                if depth == 1 {
                    in_target = false;
                }
            }
            _ => {}
        }
    }
    lines
}

pub fn parse_world(text: &str) -> Result<EnvGraph, WorldFileError> {
    let doc: WorldDoc =
        serde_json::from_str(text).map_err(|e| WorldFileError::Invalid { line: e.line(), message: e.to_string() })?;
    let node_lines = element_lines(text, "nodes");
    let edge_lines = element_lines(text, "edges");
    let at = |lines: &[usize], i: usize, message: String| WorldFileError::Invalid {
        line: lines.get(i).copied().unwrap_or(1),
        message,
    };

    if doc.version != WORLD_FILE_VERSION {
        return Err(WorldFileError::Invalid { line: 1, message: format!("unsupported world file version {}", doc.version) });
    }
    let first = doc.nodes.first().ok_or(WorldFileError::Invalid { line: 1, message: "world has no nodes".into() })?;
    let bins = first.features.len();
    let d_v = first.features.first().map_or(0, Vec::len);
    if bins == 0 || d_v == 0 {
        return Err(at(&node_lines, 0, "node features must be a non-empty matrix".into()));
    }
    let mut features = Vec::with_capacity(doc.nodes.len());
    for (i, node) in doc.nodes.iter().enumerate() {
        if node.id as usize != i {
            return Err(at(&node_lines, i, format!("node ids must be 0..n in order; found id {} at position {i}", node.id)));
        }
        if node.features.len() != bins || node.features.iter().any(|r| r.len() != d_v) {
            return Err(at(&node_lines, i, format!("node {} features must be {bins}x{d_v}", node.id)));
        }
        features.push(node.features.concat());
    }
    let n = doc.nodes.len();
    let mut out_edges: Vec<Vec<Edge>> = vec![Vec::new(); n];
    for (i, e) in doc.edges.iter().enumerate() {
        if e.from as usize >= n || e.to as usize >= n {
            return Err(at(&edge_lines, i, format!("edge {}->{} references a missing node", e.from, e.to)));
        }
        if !(e.angle_deg > -180.0 && e.angle_deg <= 180.0) {
            return Err(at(&edge_lines, i, format!("edge angle {} outside (-180, 180]", e.angle_deg)));
        }
        if out_edges[e.from as usize].iter().any(|x| x.angle == e.angle_deg) {
            return Err(at(&edge_lines, i, format!("node {} has two edges at angle {}", e.from, e.angle_deg)));
        }
        out_edges[e.from as usize].push(Edge { to: NodeId(e.to), angle: e.angle_deg });
    }
    EnvGraph::new(out_edges, features, bins, d_v).map_err(|e| match e {
        EnvError::MalformedGraph(m) => WorldFileError::Invalid { line: 1, message: m },
        other => WorldFileError::Invalid { line: 1, message: other.to_string() },
    })
}
