use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, EvalResult};
use super::report::{MetricsRow, RunDir};
use super::train::train_on;
use super::{Result, TrainConfig};
use crate::agent::AgentConfig;
use crate::envgraph::EnvGraph;
use crate::worldgen::InstructionRecord;

/// One configuration of an ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub table: String,
    pub id: usize,
    pub label: String,
    pub is_default: bool,
    pub agent: AgentConfig,
}

impl Variant {
    fn new(table: &str, id: usize, label: &str, is_default: bool, agent: AgentConfig) -> Self {
        Variant { table: table.into(), id, label: label.into(), is_default, agent }
    }

    pub fn run_id(&self, seed: u64) -> String {
        format!("{}-{}-s{seed}", self.table, self.id)
    }
}

pub const GRID_NAMES: [&str; 7] = ["full", "table2", "table3", "table4", "table5", "table6", "all"];

/// Overall design: baseline, each module alone, both.
pub fn table2(base: &AgentConfig) -> Vec<Variant> {
    let full = AgentConfig { baseline_mode: false, ..base.clone() };
    vec![
        Variant::new("table2", 1, "Baseline", false, AgentConfig { baseline_mode: true, ..full.clone() }),
        Variant::new(
            "table2",
            2,
            "With BAL",
            false,
            AgentConfig { use_sentence_attn: false, use_token_attn: false, use_hsa_loss: false, ..full.clone() },
        ),
        Variant::new(
            "table2",
            3,
            "With SAP",
            false,
            AgentConfig { use_bal_loss: false, use_long_term_angle: false, use_spatial_in_sap: false, ..full.clone() },
        ),
        Variant::new("table2", 4, "Full model", true, full),
    ]
}

/// Locating internals: angle inputs and the progress supervision.
pub fn table3(base: &AgentConfig) -> Vec<Variant> {
    let full = AgentConfig { baseline_mode: false, global_locating_variant: false, ..base.clone() };
    vec![
        Variant::new("table3", 1, "g_c + L_BAL", false, AgentConfig { use_long_term_angle: false, ..full.clone() }),
        Variant::new("table3", 2, "g_l + L_BAL", false, AgentConfig { use_current_angle: false, ..full.clone() }),
        Variant::new("table3", 3, "g_l + g_c", false, AgentConfig { use_bal_loss: false, ..full.clone() }),
        Variant::new("table3", 4, "g_l + g_c + L_GAL", false, AgentConfig { global_locating_variant: true, ..full.clone() }),
        Variant::new("table3", 5, "g_l + g_c + L_BAL", true, full),
    ]
}

/// Long-term turning-angle window sweep; K = 3 is the default setting.
pub fn k_sweep(base: &AgentConfig, ks: &[usize]) -> Vec<Variant> {
    ks.iter()
        .enumerate()
        .map(|(i, &k)| {
            Variant::new("table4", i + 1, &format!("K={k}"), k == 3, AgentConfig { k, baseline_mode: false, ..base.clone() })
        })
        .collect()
}

pub fn table4(base: &AgentConfig) -> Vec<Variant> {
    k_sweep(base, &[1, 2, 3, 4, 5])
}

/// Spatial information in action planning.
pub fn table5(base: &AgentConfig) -> Vec<Variant> {
    let full = AgentConfig { baseline_mode: false, ..base.clone() };
    vec![
        Variant::new("table5", 1, "W/o spatial info", false, AgentConfig { use_spatial_in_sap: false, ..full.clone() }),
        Variant::new("table5", 2, "Full model", true, full),
    ]
}

/// Sentence/token attention and relevance supervision.
pub fn table6(base: &AgentConfig) -> Vec<Variant> {
    let full = AgentConfig { baseline_mode: false, ..base.clone() };
    vec![
        Variant::new("table6", 1, "Token", false, AgentConfig { use_sentence_attn: false, use_hsa_loss: false, ..full.clone() }),
        Variant::new("table6", 2, "Sentence + L_HSA", false, AgentConfig { use_token_attn: false, ..full.clone() }),
        Variant::new("table6", 3, "Token + Sentence", false, AgentConfig { use_hsa_loss: false, ..full.clone() }),
        Variant::new("table6", 4, "Token + Sentence + L_HSA", true, full),
    ]
}

pub fn ablation_grid(name: &str, base: &AgentConfig) -> Option<Vec<Variant>> {
    Some(match name {
        "full" => vec![Variant::new("full", 1, "Full model", true, base.clone())],
        "table2" => table2(base),
        "table3" => table3(base),
        "table4" => table4(base),
        "table5" => table5(base),
        "table6" => table6(base),
        "all" => [table2(base), table3(base), table4(base), table5(base), table6(base)].concat(),
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub config_hash: String,
    pub result: std::result::Result<EvalResult, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Stat { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        Stat { mean, std: var.sqrt(), n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub runs: Vec<RunOutcome>,
    pub tc: Stat,
    pub spd: Stat,
    pub sed: Stat,
}

impl AblationRow {
    fn new(variant: Variant, runs: Vec<RunOutcome>) -> Self {
        let ok: Vec<&EvalResult> = runs.iter().filter_map(|r| r.result.as_ref().ok()).collect();
        let stat = |f: fn(&EvalResult) -> f64| Stat::of(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
        AblationRow { variant, tc: stat(|r| r.tc), spd: stat(|r| r.spd), sed: stat(|r| r.sed), runs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub split: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, table: &str, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant.table == table && r.variant.label == label)
    }

    /// Per-run metric rows.
    pub fn metrics_rows(&self) -> Vec<MetricsRow> {
        self.rows
            .iter()
            .flat_map(|row| {
                row.runs.iter().filter_map(|run| {
                    run.result.as_ref().ok().map(|r| MetricsRow {
                        run_id: row.variant.run_id(run.seed),
                        split: self.split.clone(),
                        tc: r.tc,
                        spd: r.spd,
                        sed: r.sed,
                        seed: run.seed,
                        config_hash: run.config_hash.clone(),
                    })
                })
            })
            .collect()
    }

    /// One markdown table per ablation table, mean ± std over seeds.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let mut tables: Vec<&str> = self.rows.iter().map(|r| r.variant.table.as_str()).collect();
        tables.dedup();
        for t in tables {
            out.push_str(&format!("### {t} ({} split)\n\n", self.split));
            out.push_str("| ID | Model | TC ↑ | SPD ↓ | SED ↑ | Runs |\n|---|---|---|---|---|---|\n");
            for row in self.rows.iter().filter(|r| r.variant.table == t) {
                let label = if row.variant.is_default {
                    format!("**{}** (default)", row.variant.label)
                } else {
                    row.variant.label.clone()
                };
                let failed = row.runs.iter().filter(|r| r.result.is_err()).count();
                let runs = if failed > 0 { format!("{} ({failed} failed)", row.runs.len()) } else { row.runs.len().to_string() };
                out.push_str(&format!(
                    "| {} | {} | {:.1} ± {:.1} | {:.2} ± {:.2} | {:.3} ± {:.3} | {} |\n",
                    row.variant.id, label, row.tc.mean, row.tc.std, row.spd.mean, row.spd.std, row.sed.mean, row.sed.std, runs
                ));
            }
            out.push('\n');
        }
        out
    }
}

/// Trains and evaluates every variant at every seed. A failing run is
/// recorded in its row and the grid continues. With `out`, each run also
/// gets its own results directory.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation_suite(
    variants: &[Variant],
    seeds: &[u64],
    base: &TrainConfig,
    env: &EnvGraph,
    train_records: &[InstructionRecord],
    eval_records: &[InstructionRecord],
    split: &str,
    out: Option<&Path>,
) -> AblationTable {
    let rows = variants
        .iter()
        .map(|v| {
            let runs = seeds
                .iter()
                .map(|&seed| {
                    let config = TrainConfig { seed, agent: v.agent.clone(), ..base.clone() };
                    let config_hash = config.config_hash();
                    let result = run_one(&config, env, train_records, eval_records, out.map(|o| (o, v.run_id(seed), split)))
                        .map_err(|e| e.to_string());
                    RunOutcome { seed, config_hash, result }
                })
                .collect();
            AblationRow::new(v.clone(), runs)
        })
        .collect();
    AblationTable { split: split.to_string(), rows }
}

fn run_one(
    config: &TrainConfig,
    env: &EnvGraph,
    train_records: &[InstructionRecord],
    eval_records: &[InstructionRecord],
    out: Option<(&Path, String, &str)>,
) -> Result<EvalResult> {
    let trained = train_on(config, env, train_records)?;
    let (result, _) = evaluate(&trained.model, env, eval_records, config.tc_mode)?;
    if let Some((root, run_id, split)) = out {
        let dir = RunDir::create(root, &run_id)?;
        dir.write_run(config, &trained, &[(split, &result)])?;
    }
    Ok(result)
}
