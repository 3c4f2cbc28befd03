//! `blocknav` command-line driver.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use blocknav::harness::TcMode;
use blocknav::worldgen::Split;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "blocknav", version, about = "Block-aware instruction following on synthetic street graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural street graph.
    GenWorld(GenWorldArgs),
    /// Generate instruction episodes for a world.
    GenData(GenDataArgs),
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one dataset split.
    Eval(EvalArgs),
    /// Run an ablation grid over several seeds.
    Ablate(AblateArgs),
    /// Summarize a checkpoint, world or dataset.
    Inspect(InspectArgs),
    /// Export the per-step record of one greedy episode.
    Trace(TraceArgs),
}

#[derive(Debug, Args)]
pub struct GenWorldArgs {
    /// JSON file with world parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grid size as WxH, e.g. 6x6.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<(usize, usize)>,
    /// Output path; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub world: PathBuf,
    /// JSON file with dataset parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub dev: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub min_blocks: Option<usize>,
    #[arg(long)]
    pub max_blocks: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags shared by commands that build a training configuration.
#[derive(Debug, Args)]
pub struct TrainFlags {
    /// JSON training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub world: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_parser = parse_tc_mode)]
    pub tc_mode: Option<TcMode>,
    /// Results root; defaults to $BLOCKNAV_RESULTS_DIR or ./results.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Long-term turning-angle window.
    #[arg(long)]
    pub k: Option<usize>,
    /// Run directory name; derived from the config hash when omitted.
    #[arg(long)]
    pub run_id: Option<String>,
    /// Split evaluated after training.
    #[arg(long, default_value = "dev", value_parser = parse_split)]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub world: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    #[arg(long, value_parser = parse_tc_mode, default_value = "adjacent")]
    pub tc_mode: TcMode,
    /// Directory for metrics.csv and plots; the checkpoint's directory when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub flags: TrainFlags,
    /// One of full, table2, table3, table4, table5, table6, all.
    #[arg(long, default_value = "table2")]
    pub ablate_grid: String,
    /// K values to sweep instead of a named grid, as `1..5` or `1,3,5`.
    #[arg(long, value_parser = parse_k_list)]
    pub k: Option<KList>,
    /// Number of seeds, counting up from --seed.
    #[arg(long, default_value_t = 3)]
    pub seeds: usize,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub world: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub world: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub episode: u64,
    /// Also write progress and relevance SVGs.
    #[arg(long)]
    pub svg: bool,
    /// Output directory for the JSON and SVG files; JSON goes to standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    let w = w.parse().map_err(|_| format!("bad width {w:?}"))?;
    let h = h.parse().map_err(|_| format!("bad height {h:?}"))?;
    Ok((w, h))
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse()
}

fn parse_tc_mode(s: &str) -> Result<TcMode, String> {
    match s {
        "exact" => Ok(TcMode::Exact),
        "adjacent" => Ok(TcMode::Adjacent),
        _ => Err("expected exact or adjacent".into()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KList(pub Vec<usize>);

fn parse_k_list(s: &str) -> Result<KList, String> {
    let num = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("bad K {x:?}"));
    let ks = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        (a..=b).collect::<Vec<_>>()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if ks.is_empty() || ks.contains(&0) {
        return Err("K values must be positive".into());
    }
    Ok(KList(ks))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
