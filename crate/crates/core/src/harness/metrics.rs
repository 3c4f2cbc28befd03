use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rollout::{rollout, EpisodeTrace};
use super::{HarnessError, Result};
use crate::agent::Loc4Plan;
use crate::envgraph::{shortest_path_hops, EnvGraph, NodeId};
use crate::worldgen::InstructionRecord;

/// Success rule for task completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TcMode {
    Exact,
    #[default]
    Adjacent,
}

/// 1 when the agent stopped at the goal, or (in adjacent mode) one edge away
/// from it in either direction.
pub fn metric_tc(stop: NodeId, goal: NodeId, graph: &EnvGraph, mode: TcMode) -> Result<u8> {
    if stop == goal {
        return Ok(1);
    }
    if mode == TcMode::Exact {
        return Ok(0);
    }
    let near = graph.out_edges(stop)?.iter().any(|e| e.to == goal) || graph.out_edges(goal)?.iter().any(|e| e.to == stop);
    Ok(u8::from(near))
}

pub fn metric_spd(stop: NodeId, goal: NodeId, graph: &EnvGraph) -> Result<usize> {
    shortest_path_hops(graph, stop, goal)?.ok_or(HarnessError::Unreachable { from: stop.0, to: goal.0 })
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Success weighted by normalized edit distance between node sequences.
pub fn metric_sed(pred: &[NodeId], gold: &[NodeId], success: bool) -> f64 {
    let n = pred.len().max(gold.len());
    if !success || n == 0 {
        return 0.0;
    }
    1.0 - edit_distance(pred, gold) as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode_id: u64,
    pub stop_node: NodeId,
    pub goal_node: NodeId,
    pub spd: usize,
    pub sed: f64,
    pub success: bool,
    pub blocks: usize,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Percentage of successful episodes.
    pub tc: f64,
    pub spd: f64,
    pub sed: f64,
    pub rows: Vec<EpisodeMetrics>,
}

impl EvalResult {
    pub fn from_rows(rows: Vec<EpisodeMetrics>) -> Self {
        let n = rows.len().max(1) as f64;
        let tc = 100.0 * rows.iter().filter(|r| r.success).count() as f64 / n;
        let spd = rows.iter().map(|r| r.spd as f64).sum::<f64>() / n;
        let sed = rows.iter().map(|r| r.sed).sum::<f64>() / n;
        EvalResult { tc, spd, sed, rows }
    }

    /// Scores one finished episode.
    pub fn score(graph: &EnvGraph, record: &InstructionRecord, trace: &EpisodeTrace, mode: TcMode) -> Result<EpisodeMetrics> {
        let goal = record.goal();
        let success = metric_tc(trace.stop_node, goal, graph, mode)? == 1;
        Ok(EpisodeMetrics {
            episode_id: record.id,
            stop_node: trace.stop_node,
            goal_node: goal,
            spd: metric_spd(trace.stop_node, goal, graph)?,
            sed: metric_sed(&trace.path, &record.gold_path, success),
            success,
            blocks: record.blocks,
            tokens: record.tokens.len(),
        })
    }
}

/// Greedy rollouts over `records` (in parallel), reduced in record order.
pub fn evaluate(
    model: &Loc4Plan,
    graph: &EnvGraph,
    records: &[InstructionRecord],
    mode: TcMode,
) -> Result<(EvalResult, Vec<EpisodeTrace>)> {
    let runs = records
        .par_iter()
        .map(|r| {
            let trace = rollout(model, graph, r)?;
            let m = EvalResult::score(graph, r, &trace, mode)?;
            Ok((m, trace))
        })
        .collect::<Result<Vec<_>>>()?;
    let (rows, traces): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    Ok((EvalResult::from_rows(rows), traces))
}
