use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::route::Route;
use super::GenError;
use crate::envgraph::{normalize_heading_delta, Action, AgentState, EnvGraph, NodeId};

const TEMPLATE_WORDS: [&str; 16] =
    [".", "a", "at", "facing", "go", "is", "left", "nearby", "past", "right", "stop", "the", "there", "to", "turn", "walk"];

/// Closed token vocabulary: template words followed by one name per landmark
/// feature dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocab {
    words: Vec<String>,
}

impl Vocab {
    pub fn new(landmarks: usize) -> Self {
        let words = TEMPLATE_WORDS.iter().map(|w| w.to_string()).chain((0..landmarks).map(landmark_name)).collect();
        Vocab { words }
    }

    pub fn from_words(words: Vec<String>) -> Self {
        Vocab { words }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.words.iter().position(|w| w == word).map(|i| i as u32)
    }

    /// Whitespace tokenization; unknown words are an error.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>, String> {
        let index: HashMap<&str, u32> = self.words.iter().enumerate().map(|(i, w)| (w.as_str(), i as u32)).collect();
        text.split_whitespace()
            .map(|w| index.get(w).copied().ok_or_else(|| format!("word {w:?} is not in the vocabulary")))
            .collect()
    }

    pub fn decode(&self, tokens: &[u32]) -> String {
        tokens.iter().map(|&t| self.words.get(t as usize).map_or("<unk>", String::as_str)).collect::<Vec<_>>().join(" ")
    }
}

fn landmark_name(i: usize) -> String {
    format!("lm{i}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Dev,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?} (expected train, dev or test)")),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionRecord {
    pub id: u64,
    #[serde(default)]
    pub split: Split,
    pub tokens: Vec<u32>,
    /// Half-open `[start, end)` token ranges, one per sentence.
    pub sentence_spans: Vec<(usize, usize)>,
    pub gold_path: Vec<NodeId>,
    pub gold_actions: Vec<Action>,
    pub initial_heading: f64,
    /// `T × N_s`, 1 where sentence `i` describes the step at `t`.
    pub relevance_labels: Vec<Vec<u8>>,
    pub progress_labels: Vec<f64>,
    /// Blocks the gold route spans.
    pub blocks: usize,
}

impl InstructionRecord {
    pub fn steps(&self) -> usize {
        self.gold_actions.len()
    }

    pub fn sentence_count(&self) -> usize {
        self.sentence_spans.len()
    }

    pub fn start_state(&self) -> AgentState {
        AgentState::start(self.gold_path[0], self.initial_heading)
    }

    pub fn goal(&self) -> NodeId {
        *self.gold_path.last().expect("gold path is never empty")
    }

    /// Structural invariants that hold independently of any world.
    pub fn check_shape(&self) -> Result<(), String> {
        let t = self.gold_actions.len();
        if t == 0 || self.gold_actions.last() != Some(&Action::Stop) {
            return Err("gold_actions must end in STOP".into());
        }
        if self.gold_actions[..t - 1].contains(&Action::Stop) {
            return Err("gold_actions contains STOP before the last step".into());
        }
        if self.gold_path.is_empty() {
            return Err("gold_path is empty".into());
        }
        let mut next = 0;
        for &(s, e) in &self.sentence_spans {
            if s != next || e <= s {
                return Err(format!("sentence span ({s}, {e}) breaks the tiling"));
            }
            next = e;
        }
        if next != self.tokens.len() || self.sentence_spans.is_empty() {
            return Err("sentence spans do not cover the tokens".into());
        }
        if self.relevance_labels.len() != t || self.progress_labels.len() != t {
            return Err(format!("label rows do not match {t} steps"));
        }
        let n_s = self.sentence_spans.len();
        for (row_t, row) in self.relevance_labels.iter().enumerate() {
            if row.len() != n_s || row.iter().any(|&r| r > 1) || !row.contains(&1) {
                return Err(format!("relevance row {row_t} must hold {n_s} zero/one entries with at least one 1"));
            }
        }
        if self.progress_labels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err("progress label outside [0, 1]".into());
        }
        Ok(())
    }
}

/// Landmark name index seen straight ahead from `node` at `heading`.
pub fn visible_landmark(graph: &EnvGraph, node: NodeId, heading: f64) -> Result<usize, GenError> {
    let rows = graph.observe(node, heading)?;
    Ok(rows[0].iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0))).map_or(0, |(i, _)| i))
}

struct Segment {
    text: String,
    /// Trajectory segment this sentence describes; `None` for filler.
    segment: Option<usize>,
}

/// Renders the route as one sentence per block plus a closing stop sentence,
/// with optional distractor sentences, and derives the alignment and block
/// progress labels by replaying the route.
pub fn generate_instruction<R: Rng>(
    graph: &EnvGraph,
    vocab: &Vocab,
    route: &Route,
    id: u64,
    filler_prob: f64,
    rng: &mut R,
) -> Result<InstructionRecord, GenError> {
    let states = graph.replay(route.start_state(), &route.actions)?;
    let t_len = route.actions.len();
    debug_assert_eq!(states.len(), t_len);

    // Segment of every step: a FORWARD taken from a boundary reached
    // mid-route starts the next block's segment; the STOP step has its own.
    let mut seg_of = vec![0usize; t_len];
    let mut sentences = Vec::new();
    let mut seg = 0;
    let mut last_forward: Option<usize> = None;
    let mut arrival = route.initial_heading;
    for t in 0..t_len {
        let s = &states[t];
        let action = route.actions[t];
        let leaving_boundary = action == Action::Forward && s.step_index > 0 && graph.is_block_boundary(s.node);
        if leaving_boundary {
            let turn = normalize_heading_delta(arrival, s.heading);
            let seen = last_forward.map_or(Ok(0), |f: usize| visible_landmark(graph, states[f].node, states[f].heading))?;
            let lm = landmark_name(seen);
            let text = if turn.abs() < 0.25 {
                format!("go past the {lm} .")
            } else if turn < 0.0 {
                format!("turn left at the {lm} .")
            } else {
                format!("turn right at the {lm} .")
            };
            sentences.push(Segment { text, segment: Some(seg) });
            seg += 1;
        }
        seg_of[t] = seg;
        match action {
            Action::Forward => {
                last_forward = Some(t);
                arrival = graph.out_edges(s.node)?[graph.edge_index(s.node, s.heading)?.expect("gold headings are legal")].angle;
            }
            Action::Stop => {
                let f = last_forward.expect("routes move at least once");
                let lm = landmark_name(visible_landmark(graph, states[f].node, states[f].heading)?);
                sentences.push(Segment { text: format!("walk to the {lm} ."), segment: Some(seg) });
                seg += 1;
                seg_of[t] = seg;
                let lm = landmark_name(visible_landmark(graph, s.node, s.heading)?);
                sentences.push(Segment { text: format!("stop facing the {lm} ."), segment: Some(seg) });
            }
            Action::Left | Action::Right => {}
        }
    }

    // Distractors go between sentences, never after the stop sentence.
    let mut all = Vec::with_capacity(sentences.len());
    let n_real = sentences.len();
    for (i, s) in sentences.into_iter().enumerate() {
        if i + 1 < n_real && filler_prob > 0.0 && rng.random_bool(filler_prob) {
            let lm = landmark_name(rng.random_range(0..graph.d_v()));
            all.push(Segment { text: format!("there is a {lm} nearby ."), segment: None });
        }
        all.push(s);
    }

    let mut tokens = Vec::new();
    let mut spans = Vec::with_capacity(all.len());
    for s in &all {
        let ids = vocab.encode(&s.text).map_err(GenError::InvalidParams)?;
        spans.push((tokens.len(), tokens.len() + ids.len()));
        tokens.extend(ids);
    }
    let relevance_labels = seg_of.iter().map(|&k| all.iter().map(|s| u8::from(s.segment == Some(k))).collect()).collect();
    let progress_labels = states.iter().map(|s| graph.block_progress_label(s)).collect::<Result<Vec<_>, _>>()?;

    Ok(InstructionRecord {
        id,
        split: Split::Train,
        tokens,
        sentence_spans: spans,
        gold_path: route.path.clone(),
        gold_actions: route.actions.clone(),
        initial_heading: route.initial_heading,
        relevance_labels,
        progress_labels,
        blocks: route.blocks,
    })
}
