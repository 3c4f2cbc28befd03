use std::collections::VecDeque;

use super::{EnvError, EnvGraph, NodeId};

/// Fewest directed edges from `from` to `to`; `None` when unreachable.
pub fn shortest_path_hops(graph: &EnvGraph, from: NodeId, to: NodeId) -> Result<Option<usize>, EnvError> {
    graph.out_edges(from)?;
    graph.out_edges(to)?;
    if from == to {
        return Ok(Some(0));
    }
    let mut dist = vec![usize::MAX; graph.node_count()];
    dist[from.index()] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u.index()];
        for e in graph.out_edges(u)? {
            if dist[e.to.index()] == usize::MAX {
                dist[e.to.index()] = d + 1;
                if e.to == to {
                    return Ok(Some(d + 1));
                }
                queue.push_back(e.to);
            }
        }
    }
    Ok(None)
}
