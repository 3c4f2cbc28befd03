use std::path::Path;

use numcore::{
    BiLstm, Checkpoint, Embedding, Graph, Linear, LstmCell, LstmState, MultiHeadAttention, ParamId, ParamStore, Tensor, Var,
};

use super::{AgentConfig, AgentError, Result, ACTION_ROWS, JUNCTION_ROWS};
use crate::envgraph::{long_term_angle, normalize_heading_delta, Action, AgentState, EnvGraph, StepOutcome};
use crate::worldgen::InstructionRecord;

#[derive(Debug, Clone, Copy)]
struct Layers {
    tok_emb: Embedding,
    encoder: BiLstm,
    act_emb: Embedding,
    junc_emb: Embedding,
    time_emb: Embedding,
    phi1: LstmCell,
    w_b: Linear,
    w_p: Linear,
    sent_attn: MultiHeadAttention,
    w_shat: Linear,
    w_s: Linear,
    w_r: Linear,
    tok_attn: MultiHeadAttention,
    pool: Linear,
    vis_pos: ParamId,
    vis_attn: MultiHeadAttention,
    phi2: LstmCell,
    plan_z: Linear,
    plan_g: ParamId,
}

impl Layers {
    fn build(c: &AgentConfig, s: &mut ParamStore) -> numcore::Result<Self> {
        let phi1_in = c.d_v + 2 + c.dim_junction + c.dim_action;
        let phi2_in = 4 * c.d + c.dim_timestep;
        Ok(Layers {
            tok_emb: Embedding::new(s, "tok_emb", c.vocab_size, c.d_t)?,
            encoder: BiLstm::new(s, "text", c.d_t, c.d_t)?,
            act_emb: Embedding::new(s, "act_emb", ACTION_ROWS, c.dim_action)?,
            junc_emb: Embedding::new(s, "junc_emb", JUNCTION_ROWS, c.dim_junction)?,
            time_emb: Embedding::new(s, "time_emb", c.max_t, c.dim_timestep)?,
            phi1: LstmCell::new(s, "phi1", phi1_in, c.d)?,
            w_b: Linear::new(s, "bal.w_b", c.d, c.d, true)?,
            w_p: Linear::new(s, "bal.w_p", c.d, 1, true)?,
            sent_attn: MultiHeadAttention::new(s, "hsa.sent", c.d, c.d_t, c.d, c.heads)?,
            w_shat: Linear::new(s, "hsa.w_shat", c.d, c.d, true)?,
            w_s: Linear::new(s, "hsa.w_s", c.d_t, c.d, false)?,
            w_r: Linear::new(s, "hsa.w", c.d, 1, false)?,
            tok_attn: MultiHeadAttention::new(s, "hsa.tok", c.d, c.d_t, c.d, c.heads)?,
            pool: Linear::new(s, "pool", c.d_t, c.d, true)?,
            vis_pos: s.add_uniform("vis.pos", &[c.bins, c.d_v], c.d_v)?,
            vis_attn: MultiHeadAttention::new(s, "vis", c.d, c.d_v, c.d, c.heads)?,
            phi2: LstmCell::new(s, "phi2", phi2_in, c.d)?,
            plan_z: Linear::new(s, "plan.w_z", c.d, 4, true)?,
            plan_g: s.add_uniform("plan.w_g", &[4], 1)?,
        })
    }
}

/// The agent: configuration, parameters and layer handles.
#[derive(Debug, Clone)]
pub struct Loc4Plan {
    config: AgentConfig,
    store: ParamStore,
    layers: Layers,
}

/// Encoded instruction plus per-episode projections reused at every step.
#[derive(Debug, Clone)]
pub struct EncodedInstruction {
    /// Token encodings `[L, d_t]`.
    pub tokens: Var,
    /// Mean-pooled sentence encodings `[N_s, d_t]`.
    pub sentences: Var,
    pub spans: Vec<(usize, usize)>,
    pooled: Var,
    span_matrix: Var,
    sent_kv: Option<(Var, Var)>,
    tok_kv: Option<(Var, Var)>,
}

impl EncodedInstruction {
    pub fn len(&self) -> usize {
        self.spans.last().map_or(0, |s| s.1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sentence_count(&self) -> usize {
        self.spans.len()
    }
}

/// What the agent perceives at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// `B × d_v` views, row 0 facing the current heading.
    pub views: Vec<Vec<f64>>,
    pub g_c: f64,
    pub g_l: f64,
    pub junctions: usize,
    /// Normalized turn each action would produce; `None` masks the action.
    pub candidates: [Option<f64>; 4],
}

/// Recurrent state carried across the steps of one episode.
#[derive(Debug, Clone)]
pub struct StepContext {
    pub phi1: LstmState,
    pub phi2: LstmState,
    pub a_prev: Option<Action>,
    pub g_history: Vec<f64>,
    pub t: usize,
}

impl StepContext {
    pub fn o_prev(&self) -> Var {
        self.phi1.hidden
    }

    pub fn z_prev(&self) -> Var {
        self.phi2.hidden
    }
}

#[derive(Debug, Clone)]
pub struct Association {
    pub i_s_hat: Option<Var>,
    pub r: Option<Var>,
    pub mask: Option<Var>,
    pub i_attn: Var,
    /// Raw attention outputs carrying the per-head weights.
    pub attn: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub o_t: Var,
    pub o_p: Var,
    pub e_p: Var,
    pub i_s_hat: Option<Var>,
    pub r: Option<Var>,
    pub mask: Option<Var>,
    pub i_attn: Var,
    pub x_attn: Var,
    pub z: Var,
    pub scores: Var,
    pub attn: Vec<Var>,
}

/// Supervision targets for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLabels {
    pub actions: Vec<Action>,
    pub progress: Vec<f64>,
    pub relevance: Vec<Vec<f64>>,
}

impl EpisodeLabels {
    pub fn from_record(r: &InstructionRecord) -> Self {
        EpisodeLabels {
            actions: r.gold_actions.clone(),
            progress: r.progress_labels.clone(),
            relevance: r.relevance_labels.iter().map(|row| row.iter().map(|&x| f64::from(x)).collect()).collect(),
        }
    }
}

/// Loss terms as scalar graph values; disabled terms are constant zeros.
#[derive(Debug, Clone, Copy)]
pub struct Losses {
    pub ap: Var,
    pub bal: Var,
    pub hsa: Var,
    pub total: Var,
}

/// Index of the largest score; ties go to the earliest action.
pub fn act_greedy(scores: &[f64]) -> Result<Action> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate().take(4) {
        if s == f64::NEG_INFINITY || s.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.and_then(|(i, _)| Action::from_index(i)).ok_or(AgentError::AllMasked)
}

impl Loc4Plan {
    pub fn new(config: AgentConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(config.init_seed);
        let layers = Layers::build(&config, &mut store)?;
        Ok(Loc4Plan { config, store, layers })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Parameter names and shapes in registration order.
    pub fn describe(&self) -> Vec<(String, Vec<usize>)> {
        self.store.describe()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::to_string(&self.config).expect("config serializes");
        Checkpoint::from_store(&self.store, meta)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: AgentConfig =
            serde_json::from_str(&ckpt.metadata).map_err(|e| AgentError::Checkpoint(format!("agent config: {e}")))?;
        let mut model = Loc4Plan::new(config)?;
        ckpt.load_into(&mut model.store)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint().to_bytes()).map_err(|e| AgentError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| AgentError::Checkpoint(format!("{}: {e}", path.display())))?;
        Loc4Plan::from_checkpoint(&Checkpoint::from_bytes(&bytes)?)
    }

    pub fn start(&self, g: &mut Graph) -> StepContext {
        StepContext {
            phi1: self.layers.phi1.zero_state(g),
            phi2: self.layers.phi2.zero_state(g),
            a_prev: None,
            g_history: Vec::new(),
            t: 0,
        }
    }

    /// Token encodings and mean-pooled sentence encodings.
    pub fn encode_instruction(&self, g: &mut Graph, tokens: &[u32], spans: &[(usize, usize)]) -> Result<EncodedInstruction> {
        let mut next = 0;
        for (i, &(s, e)) in spans.iter().enumerate() {
            if e <= s {
                return Err(AgentError::EmptySentence(i));
            }
            if s != next {
                return Err(AgentError::BadSpans(tokens.len()));
            }
            next = e;
        }
        if next != tokens.len() || spans.is_empty() {
            return Err(AgentError::BadSpans(tokens.len()));
        }
        let l = &self.layers;
        let embedded = tokens.iter().map(|&t| l.tok_emb.forward(g, t as usize)).collect::<numcore::Result<Vec<_>>>()?;
        let enc = l.encoder.encode(g, &embedded)?;
        let rows = spans.iter().map(|&(s, e)| g.mean_rows(enc, s, e)).collect::<numcore::Result<Vec<_>>>()?;
        let sentences = g.stack_rows(&rows)?;
        let pooled = g.mean_rows(enc, 0, tokens.len())?;
        let mut indicator = vec![0.0; tokens.len() * spans.len()];
        for (i, &(s, e)) in spans.iter().enumerate() {
            (s..e).for_each(|t| indicator[t * spans.len() + i] = 1.0);
        }
        let span_matrix = g.input(Tensor::matrix(tokens.len(), spans.len(), indicator)?);
        let sent_kv = if self.config.sentence_attn() { Some(l.sent_attn.project_kv(g, sentences)?) } else { None };
        let tok_kv = if self.config.token_attn() { Some(l.tok_attn.project_kv(g, enc)?) } else { None };
        Ok(EncodedInstruction { tokens: enc, sentences, spans: spans.to_vec(), pooled, span_matrix, sent_kv, tok_kv })
    }

    /// Reads the environment at `state` and appends the current turn to the
    /// context's turn history.
    pub fn observe(&self, env: &EnvGraph, state: &AgentState, ctx: &mut StepContext) -> Result<Observation> {
        let g_c = normalize_heading_delta(state.prev_heading, state.heading);
        ctx.g_history.push(g_c);
        let g_l = long_term_angle(&ctx.g_history, ctx.g_history.len() - 1, self.config.k);
        Ok(Observation {
            views: env.observe(state.node, state.heading)?,
            g_c,
            g_l,
            junctions: env.junction_count(state.node)?,
            candidates: env.candidate_turns(state)?,
        })
    }

    /// One step of the state recurrence on `[x ⊕ g_c ⊕ g_l ⊕ n ⊕ ā_{t-1}]`.
    pub fn encode_state(
        &self,
        g: &mut Graph,
        ctx: &mut StepContext,
        x_pooled: Var,
        g_c: f64,
        g_l: f64,
        junctions: usize,
    ) -> Result<Var> {
        let c = &self.config;
        let l = &self.layers;
        let angles = g.vector(vec![if c.current_angle() { g_c } else { 0.0 }, if c.long_term_angle() { g_l } else { 0.0 }]);
        let n = l.junc_emb.forward(g, junctions.min(JUNCTION_ROWS - 1))?;
        let a = l.act_emb.forward(g, Action::embedding_row(ctx.a_prev))?;
        let input = g.concat(&[x_pooled, angles, n, a])?;
        ctx.phi1 = l.phi1.forward(g, input, ctx.phi1)?;
        Ok(ctx.phi1.hidden)
    }

    /// Spatial-aware representation and block progress score.
    pub fn locate(&self, g: &mut Graph, o_t: Var) -> Result<(Var, Var)> {
        let h = self.layers.w_b.forward(g, o_t)?;
        let o_p = g.relu(h);
        let logit = self.layers.w_p.forward(g, o_p)?;
        Ok((o_p, g.sigmoid(logit)))
    }

    /// Sentence attention, relevance scores, token mask and token attention.
    pub fn associate(&self, g: &mut Graph, query: Var, instr: &EncodedInstruction) -> Result<Association> {
        let l = &self.layers;
        let mut attn = Vec::new();
        let (mut i_s_hat, mut r, mut mask) = (None, None, None);
        if let Some((k, v)) = instr.sent_kv {
            let (s_hat, raw) = l.sent_attn.attend(g, query, k, v)?;
            attn.push(raw);
            let a = l.w_shat.forward(g, s_hat)?;
            let a = g.relu(a);
            let b = l.w_s.forward_rows(g, instr.sentences)?;
            let b = g.relu(b);
            let h = g.mul_row_broadcast(b, a)?;
            let logits = l.w_r.forward_rows(g, h)?;
            let logits = g.reshape(logits, &[instr.sentence_count()])?;
            let scores = g.sigmoid(logits);
            mask = Some(self.span_mask(g, instr, scores)?);
            i_s_hat = Some(s_hat);
            r = Some(scores);
        }
        let i_attn = if let Some((k, v)) = instr.tok_kv {
            let (k, v) = match mask {
                Some(m) => (g.row_scale(k, m)?, g.row_scale(v, m)?),
                None => (k, v),
            };
            let (out, raw) = l.tok_attn.attend(g, query, k, v)?;
            attn.push(raw);
            out
        } else if let Some(s) = i_s_hat {
            s
        } else {
            l.pool.forward(g, instr.pooled)?
        };
        Ok(Association { i_s_hat, r, mask, i_attn, attn })
    }

    /// Repeats each sentence score over the sentence's tokens.
    pub fn span_mask(&self, g: &mut Graph, instr: &EncodedInstruction, r: Var) -> Result<Var> {
        let col = g.reshape(r, &[instr.sentence_count(), 1])?;
        let m = g.matmul(instr.span_matrix, col)?;
        Ok(g.reshape(m, &[instr.len()])?)
    }

    /// Token rows scaled by their sentence scores, `I ⊙ M`.
    pub fn mask_tokens(&self, g: &mut Graph, instr: &EncodedInstruction, r: Var) -> Result<Var> {
        let m = self.span_mask(g, instr, r)?;
        Ok(g.row_scale(instr.tokens, m)?)
    }

    /// Token attention over explicit rows, projecting them afresh.
    pub fn attend_tokens(&self, g: &mut Graph, query: Var, tokens: Var) -> Result<Var> {
        Ok(self.layers.tok_attn.forward(g, query, tokens)?)
    }

    /// Attends over the directional views with the instruction feature as
    /// query. Views carry a learned per-direction offset so that attention
    /// can tell them apart.
    pub fn attend_visual(&self, g: &mut Graph, i_attn: Var, views: Var) -> Result<(Var, Var)> {
        let l = &self.layers;
        let pos = g.param(l.vis_pos);
        let tokens = g.add(views, pos)?;
        let (k, v) = l.vis_attn.project_kv(g, tokens)?;
        Ok(l.vis_attn.attend(g, i_attn, k, v)?)
    }

    /// Action decoder step and per-action scores `w_aᵀ[z ⊕ g^a]`; actions
    /// without a defined turn score `-inf`.
    #[allow(clippy::too_many_arguments)]
    pub fn plan(
        &self,
        g: &mut Graph,
        ctx: &mut StepContext,
        x_attn: Var,
        i_attn: Var,
        o_t: Var,
        spatial: Var,
        t: usize,
        candidates: &[Option<f64>; 4],
    ) -> Result<(Var, Var)> {
        let l = &self.layers;
        let time = l.time_emb.forward(g, t.min(self.config.max_t - 1))?;
        let input = g.concat(&[x_attn, i_attn, o_t, spatial, time])?;
        ctx.phi2 = l.phi2.forward(g, input, ctx.phi2)?;
        let z = ctx.phi2.hidden;
        let zs = l.plan_z.forward(g, z)?;
        let turns = g.vector(candidates.iter().map(|c| c.unwrap_or(0.0)).collect());
        let wg = g.param(l.plan_g);
        let gs = g.mul(wg, turns)?;
        let s = g.add(zs, gs)?;
        let scores = if candidates.iter().any(Option::is_none) {
            let mask = g.vector(candidates.iter().map(|c| if c.is_some() { 0.0 } else { f64::NEG_INFINITY }).collect());
            g.add(s, mask)?
        } else {
            s
        };
        Ok((z, scores))
    }

    /// Full forward pass for one step. The caller records the action taken
    /// with [`Loc4Plan::advance`].
    pub fn step(
        &self,
        g: &mut Graph,
        ctx: &mut StepContext,
        instr: &EncodedInstruction,
        obs: &Observation,
    ) -> Result<StepOutput> {
        let views = g.input(Tensor::from_rows(&obs.views)?);
        let x_pooled = g.mean_rows(views, 0, obs.views.len())?;
        let o_t = self.encode_state(g, ctx, x_pooled, obs.g_c, obs.g_l, obs.junctions)?;
        let (o_p, e_p) = self.locate(g, o_t)?;
        let spatial = if self.config.spatial_in_sap() { o_p } else { o_t };
        let assoc = self.associate(g, spatial, instr)?;
        let (x_attn, vis_raw) = self.attend_visual(g, assoc.i_attn, views)?;
        let (z, scores) = self.plan(g, ctx, x_attn, assoc.i_attn, o_t, spatial, ctx.t, &obs.candidates)?;
        let mut attn = assoc.attn;
        attn.push(vis_raw);
        Ok(StepOutput {
            o_t,
            o_p,
            e_p,
            i_s_hat: assoc.i_s_hat,
            r: assoc.r,
            mask: assoc.mask,
            i_attn: assoc.i_attn,
            x_attn,
            z,
            scores,
            attn,
        })
    }

    pub fn advance(&self, ctx: &mut StepContext, action: Action) {
        ctx.a_prev = Some(action);
        ctx.t += 1;
    }

    /// Runs the episode with the gold actions driving the environment.
    pub fn forward_teacher(&self, g: &mut Graph, env: &EnvGraph, record: &InstructionRecord) -> Result<Vec<StepOutput>> {
        let instr = self.encode_instruction(g, &record.tokens, &record.sentence_spans)?;
        let mut ctx = self.start(g);
        let mut state = record.start_state();
        let mut outputs = Vec::with_capacity(record.gold_actions.len());
        for &action in &record.gold_actions {
            let obs = self.observe(env, &state, &mut ctx)?;
            outputs.push(self.step(g, &mut ctx, &instr, &obs)?);
            self.advance(&mut ctx, action);
            match env.step(&state, action)? {
                StepOutcome::Moved(s) => state = s,
                StepOutcome::Terminal => break,
            }
        }
        Ok(outputs)
    }

    pub fn compute_losses(&self, g: &mut Graph, outputs: &[StepOutput], labels: &EpisodeLabels) -> Result<Losses> {
        let t_len = outputs.len();
        let check = |what, got: usize| {
            if got == t_len {
                Ok(())
            } else {
                Err(AgentError::LabelLengthMismatch { what, expected: t_len, got })
            }
        };
        check("actions", labels.actions.len())?;
        check("progress labels", labels.progress.len())?;
        let c = &self.config;

        let ce = outputs
            .iter()
            .zip(&labels.actions)
            .map(|(o, a)| g.cross_entropy(o.scores, a.index()))
            .collect::<numcore::Result<Vec<_>>>()?;
        let ap = g.add_all(&ce)?;

        let bal = if c.bal_loss() && t_len > 0 {
            let targets: Vec<f64> = if c.global_locating_variant {
                (0..t_len).map(|t| t as f64 / t_len as f64).collect()
            } else {
                labels.progress.clone()
            };
            let e: Vec<Var> = outputs.iter().map(|o| o.e_p).collect();
            let e = g.concat(&e)?;
            g.squared_error(e, &targets)?
        } else {
            g.scalar(0.0)
        };

        let hsa = if c.hsa_loss() {
            check("relevance labels", labels.relevance.len())?;
            let mut terms = Vec::with_capacity(t_len);
            for (o, target) in outputs.iter().zip(&labels.relevance) {
                let r = o.r.expect("sentence attention yields relevance scores");
                let n_s = g.value(r).len();
                if target.len() != n_s {
                    return Err(AgentError::LabelLengthMismatch { what: "relevance row", expected: n_s, got: target.len() });
                }
                terms.push(g.bce(r, target)?);
            }
            let sum = g.add_all(&terms)?;
            g.scale(sum, c.gamma_b)
        } else {
            g.scalar(0.0)
        };
        let total = g.add_all(&[ap, bal, hsa])?;
        Ok(Losses { ap, bal, hsa, total })
    }

    /// Teacher-forced forward pass and losses for one record.
    pub fn episode_loss(&self, g: &mut Graph, env: &EnvGraph, record: &InstructionRecord) -> Result<(Losses, Vec<StepOutput>)> {
        let outputs = self.forward_teacher(g, env, record)?;
        let losses = self.compute_losses(g, &outputs, &EpisodeLabels::from_record(record))?;
        Ok((losses, outputs))
    }
}
