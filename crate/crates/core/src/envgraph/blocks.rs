use std::collections::HashMap;

use super::{AgentState, EnvError, EnvGraph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub usize);

/// A street segment between two block boundaries. `nodes` runs from one
/// boundary to the other; travel in either direction maps to the same block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub id: BlockId,
    pub nodes: Vec<NodeId>,
}

impl Block {
    /// Nodes in the block excluding the one travel starts from.
    pub fn size(&self) -> usize {
        self.nodes.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    block: BlockId,
    remaining: usize,
    size: usize,
}

/// Block membership and remaining FORWARD steps for every
/// `(node, outgoing edge)` pair, i.e. every legal position and heading.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockIndex {
    blocks: Vec<Block>,
    entries: Vec<Vec<Entry>>,
}

impl BlockIndex {
    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block(&self, id: BlockId) -> &Block {
        &self.blocks[id.0]
    }

    fn entry(&self, node: NodeId, edge: usize) -> Option<&Entry> {
        self.entries.get(node.index())?.get(edge)
    }

    /// Block entered by leaving `node` along its `edge`-th exit.
    pub fn block_of(&self, node: NodeId, edge: usize) -> Option<BlockId> {
        self.entry(node, edge).map(|e| e.block)
    }

    /// FORWARD moves from `node` along exit `edge` until the next boundary.
    pub fn remaining_steps(&self, node: NodeId, edge: usize) -> Option<usize> {
        self.entry(node, edge).map(|e| e.remaining)
    }

    /// Size of the block as travelled from `node` along exit `edge`.
    pub fn block_size(&self, node: NodeId, edge: usize) -> Option<usize> {
        self.entry(node, edge).map(|e| e.size)
    }

    /// Block the agent is in: the block ahead, or, at a boundary reached
    /// after the first step, none (the block just finished).
    pub fn block_at(&self, graph: &EnvGraph, state: &AgentState) -> Result<Option<BlockId>, EnvError> {
        if graph.is_block_boundary(state.node) && state.step_index > 0 {
            return Ok(None);
        }
        Ok(graph.edge_index(state.node, state.heading)?.and_then(|e| self.block_of(state.node, e)))
    }

    pub(super) fn progress_label(&self, graph: &EnvGraph, state: &AgentState) -> Result<f64, EnvError> {
        if !graph.contains(state.node) {
            return Err(EnvError::UnknownNode(state.node));
        }
        if graph.is_block_boundary(state.node) && state.step_index > 0 {
            return Ok(0.0);
        }
        if graph.out_edges(state.node)?.is_empty() {
            return Ok(0.0);
        }
        let e = graph
            .edge_index(state.node, state.heading)?
            .ok_or(EnvError::InvalidHeading { node: state.node, heading: state.heading })?;
        let entry = self.entry(state.node, e).ok_or(EnvError::UnknownNode(state.node))?;
        Ok(entry.remaining as f64 / entry.size as f64)
    }
}

/// `(node, exit)` pairs traversed by FORWARD moves from `(start, edge)` up to
/// the next boundary, and the boundary itself.
fn walk(graph: &EnvGraph, start: NodeId, edge: usize) -> Result<(Vec<(NodeId, usize)>, NodeId), EnvError> {
    let mut path = vec![(start, edge)];
    let (mut cur, mut idx) = (start, edge);
    loop {
        let e = graph.out_edges(cur)?[idx];
        let next = e.to;
        if graph.is_block_boundary(next) {
            return Ok((path, next));
        }
        if path.len() > graph.node_count() {
            return Err(EnvError::MalformedGraph(format!("street through node {start} loops without reaching an intersection")));
        }
        let heading = graph.arrival_heading(next, e.angle)?;
        idx = graph.edge_index(next, heading)?.ok_or(EnvError::InvalidHeading { node: next, heading })?;
        cur = next;
        path.push((cur, idx));
    }
}

/// Splits the graph into blocks delimited by intersections and dead ends.
pub fn segment_blocks(graph: &EnvGraph) -> Result<BlockIndex, EnvError> {
    let n = graph.node_count();
    let mut slots: Vec<Vec<Option<Entry>>> = graph.nodes().map(|u| vec![None; graph.out_edges[u.index()].len()]).collect();
    let mut blocks: Vec<Block> = Vec::new();
    let mut by_key: HashMap<Vec<NodeId>, BlockId> = HashMap::new();

    // Boundary starts first so every block is seen whole; then any pair left
    // over (only possible in irregular hand-built graphs).
    let boundary_first =
        graph.nodes().filter(|&u| graph.is_block_boundary(u)).chain(graph.nodes().filter(|&u| !graph.is_block_boundary(u)));
    for u in boundary_first {
        for e in 0..slots[u.index()].len() {
            if slots[u.index()][e].is_some() {
                continue;
            }
            let (path, end) = walk(graph, u, e)?;
            let mut nodes: Vec<NodeId> = path.iter().map(|&(v, _)| v).collect();
            nodes.push(end);
            let reversed: Vec<NodeId> = nodes.iter().rev().copied().collect();
            let key = nodes.clone().min(reversed);
            let id = *by_key.entry(key.clone()).or_insert_with(|| {
                blocks.push(Block { id: BlockId(blocks.len()), nodes: key });
                BlockId(blocks.len() - 1)
            });
            let size = path.len();
            for (i, &(v, idx)) in path.iter().enumerate() {
                let slot = &mut slots[v.index()][idx];
                if slot.is_none() {
                    *slot = Some(Entry { block: id, remaining: size - i, size });
                }
            }
        }
    }
    debug_assert_eq!(slots.len(), n);
    let entries = slots.into_iter().map(|row| row.into_iter().map(|s| s.expect("every exit is walked")).collect()).collect();
    Ok(BlockIndex { blocks, entries })
}
