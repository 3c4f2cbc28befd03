use numcore::Graph;
use serde::{Deserialize, Serialize};

use super::Result;
use crate::agent::{act_greedy, Loc4Plan, StepOutput};
use crate::envgraph::{Action, EnvGraph, NodeId, StepOutcome};
use crate::worldgen::InstructionRecord;

/// Values recorded at one step of a rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub node: NodeId,
    pub heading: f64,
    pub action: Action,
    pub scores: Vec<f64>,
    pub e_p: f64,
    /// Ground-truth block progress at the visited state.
    pub e_p_label: f64,
    pub relevance: Option<Vec<f64>>,
    pub g_c: f64,
    pub g_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub episode_id: u64,
    pub steps: Vec<StepRecord>,
    /// Distinct nodes visited, in order.
    pub path: Vec<NodeId>,
    pub stop_node: NodeId,
    /// Set when the step budget ran out before the agent chose STOP.
    pub forced_stop: bool,
}

fn finite(scores: &[f64]) -> Vec<f64> {
    // JSON has no infinity; masked scores are reported as the lowest finite value.
    scores.iter().map(|&s| if s.is_finite() { s } else { f64::MIN }).collect()
}

/// Greedy decoding from the gold start state.
pub fn rollout(model: &Loc4Plan, env: &EnvGraph, record: &InstructionRecord) -> Result<EpisodeTrace> {
    rollout_with(model, env, record, |_, out| act_greedy(out))
}

/// Rollout with a custom action choice given the step index and scores.
pub fn rollout_with<F>(model: &Loc4Plan, env: &EnvGraph, record: &InstructionRecord, mut choose: F) -> Result<EpisodeTrace>
where
    F: FnMut(usize, &[f64]) -> crate::agent::Result<Action>,
{
    let mut g = Graph::new(model.store());
    let instr = model.encode_instruction(&mut g, &record.tokens, &record.sentence_spans)?;
    let mut ctx = model.start(&mut g);
    let mut state = record.start_state();
    let mut path = vec![state.node];
    let mut steps = Vec::new();
    let max_t = model.config().max_t;
    for t in 0..max_t {
        let obs = model.observe(env, &state, &mut ctx)?;
        let out: StepOutput = model.step(&mut g, &mut ctx, &instr, &obs)?;
        let scores = g.data(out.scores).to_vec();
        let action = choose(t, &scores)?;
        steps.push(StepRecord {
            t,
            node: state.node,
            heading: state.heading,
            action,
            scores: finite(&scores),
            e_p: g.item(out.e_p),
            e_p_label: env.block_progress_label(&state)?,
            relevance: out.r.map(|r| g.data(r).to_vec()),
            g_c: obs.g_c,
            g_l: obs.g_l,
        });
        model.advance(&mut ctx, action);
        match env.step(&state, action)? {
            StepOutcome::Terminal => {
                return Ok(EpisodeTrace { episode_id: record.id, steps, path, stop_node: state.node, forced_stop: false });
            }
            StepOutcome::Moved(next) => {
                if next.node != state.node {
                    path.push(next.node);
                }
                state = next;
            }
        }
    }
    Ok(EpisodeTrace { episode_id: record.id, steps, path, stop_node: state.node, forced_stop: true })
}
