use std::fs;
use std::path::{Path, PathBuf};

use blocknav::agent::Loc4Plan;
use blocknav::envgraph::{load_world, world_to_string, EnvGraph};
use blocknav::harness::{
    ablation_grid, bucket_sed, evaluate, heatmap_svg, k_sweep, line_plot_svg, progress_svg, read_metrics_csv, results_root,
    rollout, run_ablation_suite, train_on, write_metrics_csv, EvalResult, MetricsRow, RunDir, TrainConfig, GRID_NAMES,
};
use blocknav::worldgen::{
    generate_episodes, generate_world, load_dataset, save_dataset, world_hash, Dataset, InstructionRecord, Split, Vocab,
    WorldParams,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::CliError;
use crate::{AblateArgs, Command, EvalArgs, GenDataArgs, GenWorldArgs, InspectArgs, TraceArgs, TrainArgs, TrainFlags};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenWorld(a) => gen_world(a),
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Inspect(a) => inspect(a),
        Command::Trace(a) => trace(a),
    }
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text =
        fs::read_to_string(path).map_err(|e| CliError::runtime(anyhow::Error::from(e).context(path.display().to_string())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(anyhow::anyhow!("{}: {e}", path.display())))
}

fn echo<T: Serialize>(what: &str, config: &T) {
    eprintln!("{what}: {}", serde_json::to_string(config).expect("config serializes"));
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json serializes"));
}

fn gen_world(a: GenWorldArgs) -> Result<()> {
    let mut params: WorldParams = read_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        params.seed = seed;
    }
    if let Some((w, h)) = a.grid {
        params.grid_w = w;
        params.grid_h = h;
    }
    echo("world params", &params);
    let env = generate_world(&params)?;
    let text = world_to_string(&env);
    match a.out {
        Some(path) => write_text(&path, &text)?,
        None => print!("{text}"),
    }
    eprintln!("world {} nodes, {} edges, sha256 {}", env.node_count(), env.edge_count(), world_hash(&env));
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DataParams {
    seed: u64,
    train: usize,
    dev: usize,
    test: usize,
    min_blocks: usize,
    max_blocks: usize,
    filler_prob: f64,
}

impl Default for DataParams {
    fn default() -> Self {
        DataParams { seed: 0, train: 200, dev: 25, test: 50, min_blocks: 1, max_blocks: 4, filler_prob: 0.3 }
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut p: DataParams = read_config(a.config.as_deref())?;
    let set = |slot: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut p.train, a.train);
    set(&mut p.dev, a.dev);
    set(&mut p.test, a.test);
    set(&mut p.min_blocks, a.min_blocks);
    set(&mut p.max_blocks, a.max_blocks);
    if let Some(seed) = a.seed {
        p.seed = seed;
    }
    if !(0.0..=1.0).contains(&p.filler_prob) {
        return Err(CliError::data(anyhow::anyhow!("filler_prob must lie in [0, 1]")));
    }
    echo("data params", &p);
    let env = load_world(&a.world)?;
    let vocab = Vocab::new(env.d_v());
    let mut records =
        generate_episodes(&env, &vocab, p.seed, p.train + p.dev + p.test, p.min_blocks, p.max_blocks, p.filler_prob)?;
    for (i, r) in records.iter_mut().enumerate() {
        r.split = if i < p.train {
            Split::Train
        } else if i < p.train + p.dev {
            Split::Dev
        } else {
            Split::Test
        };
    }
    let n = records.len();
    save_dataset(&Dataset::new(&env, vocab, records), &a.out)?;
    eprintln!("wrote {n} episodes to {}", a.out.display());
    Ok(())
}

fn split_records(data: &Dataset, split: Split) -> Vec<InstructionRecord> {
    data.records.iter().filter(|r| r.split == split).cloned().collect()
}

/// Config file, then flags, then the data-determined agent widths.
fn resolve_training(flags: &TrainFlags, k: Option<usize>) -> Result<(TrainConfig, EnvGraph, Dataset)> {
    let mut c: TrainConfig = read_config(flags.config.as_deref())?;
    if let Some(v) = flags.seed {
        c.seed = v;
    }
    if let Some(v) = flags.epochs {
        c.epochs = v;
    }
    if let Some(v) = flags.lr {
        c.lr = v;
    }
    if let Some(v) = flags.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = flags.tc_mode {
        c.tc_mode = v;
    }
    if let Some(v) = k {
        c.agent.k = v;
    }
    if flags.world.is_some() {
        c.world = flags.world.clone();
    }
    if flags.data.is_some() {
        c.data = flags.data.clone();
    }
    let world =
        c.world.clone().ok_or_else(|| CliError::Usage("a world file is required (--world or config \"world\")".into()))?;
    let data = c.data.clone().ok_or_else(|| CliError::Usage("a dataset is required (--data or config \"data\")".into()))?;
    let env = load_world(&world)?;
    let dataset = load_dataset(&data)?;
    dataset.validate_against(&env)?;
    c.agent.d_v = env.d_v();
    c.agent.bins = env.bins();
    c.agent.vocab_size = dataset.vocab().len();
    echo("resolved config", &c);
    c.validate()?;
    Ok((c, env, dataset))
}

fn sed_plots(dir: &RunDir, result: &EvalResult, split: Split) -> Result<()> {
    let series = |key: fn(&blocknav::harness::EpisodeMetrics) -> usize| -> Vec<(f64, f64)> {
        bucket_sed(&result.rows, key).iter().map(|b| ((b.lo + b.hi) as f64 / 2.0, b.mean_sed)).collect()
    };
    let blocks = line_plot_svg(
        &format!("SED by route complexity ({split}, quartile buckets)"),
        "blocks",
        "SED",
        &[("SED", series(|m| m.blocks))],
    );
    let tokens = line_plot_svg(
        &format!("SED by instruction length ({split}, quartile buckets)"),
        "tokens",
        "SED",
        &[("SED", series(|m| m.tokens))],
    );
    write_text(&dir.plot(&format!("sed_by_blocks_{split}.svg")), &blocks)?;
    write_text(&dir.plot(&format!("sed_by_length_{split}.svg")), &tokens)?;
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let (config, env, data) = resolve_training(&a.flags, a.k)?;
    let train_set = split_records(&data, Split::Train);
    if train_set.is_empty() {
        return Err(CliError::data(anyhow::anyhow!("the dataset has no training episodes")));
    }
    let trained = train_on(&config, &env, &train_set)?;
    let eval_set = split_records(&data, a.split);
    let result = if eval_set.is_empty() { None } else { Some(evaluate(&trained.model, &env, &eval_set, config.tc_mode)?.0) };

    let root = a.flags.out.clone().unwrap_or_else(results_root);
    let run_id = a.run_id.unwrap_or_else(|| format!("run-{}", config.config_hash()));
    let dir = RunDir::create(&root, &run_id)?;
    let split = a.split.to_string();
    let results: Vec<(&str, &EvalResult)> = result.iter().map(|r| (split.as_str(), r)).collect();
    dir.write_run(&config, &trained, &results)?;
    if let Some(r) = &result {
        sed_plots(&dir, r, a.split)?;
        eprintln!("{split}: TC {:.1}  SPD {:.2}  SED {:.3}", r.tc, r.spd, r.sed);
    }
    println!("{}", dir.path.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<Loc4Plan> {
    Ok(Loc4Plan::load(path)?)
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let env = load_world(&a.world)?;
    let data = load_dataset(&a.data)?;
    data.validate_against(&env)?;
    let records = split_records(&data, a.split);
    if records.is_empty() {
        return Err(CliError::data(anyhow::anyhow!("the dataset has no {} episodes", a.split)));
    }
    let out = a.out.clone().unwrap_or_else(|| a.ckpt.parent().map(Path::to_path_buf).unwrap_or_default());
    let run_id = out.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "eval".into());
    let dir = RunDir { run_id: run_id.clone(), path: out };
    fs::create_dir_all(dir.path.join("plots"))?;

    let stored: Option<TrainConfig> = fs::read_to_string(dir.config_json()).ok().and_then(|s| serde_json::from_str(&s).ok());
    let config = stored.unwrap_or_else(|| TrainConfig {
        seed: model.config().init_seed,
        agent: model.config().clone(),
        ..TrainConfig::default()
    });
    echo("eval config", &json!({ "ckpt": a.ckpt, "split": a.split.to_string(), "tc_mode": a.tc_mode }));

    let (result, _) = evaluate(&model, &env, &records, a.tc_mode)?;
    let split = a.split.to_string();
    let mut rows: Vec<MetricsRow> = if dir.metrics_csv().exists() { read_metrics_csv(&dir.metrics_csv())? } else { Vec::new() };
    rows.retain(|r| !(r.run_id == run_id && r.split == split));
    rows.push(MetricsRow {
        run_id: run_id.clone(),
        split: split.clone(),
        tc: result.tc,
        spd: result.spd,
        sed: result.sed,
        seed: config.seed,
        config_hash: config.config_hash(),
    });
    write_metrics_csv(&dir.metrics_csv(), &rows)?;
    sed_plots(&dir, &result, a.split)?;
    print_json(&json!({
        "run_id": run_id,
        "split": split,
        "episodes": result.rows.len(),
        "tc": result.tc,
        "spd": result.spd,
        "sed": result.sed,
    }));
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let (config, env, data) = resolve_training(&a.flags, None)?;
    let (name, variants) = match &a.k {
        Some(ks) => ("k-sweep".to_string(), k_sweep(&config.agent, &ks.0)),
        None => {
            let v = ablation_grid(&a.ablate_grid, &config.agent).ok_or_else(|| {
                CliError::Usage(format!("unknown grid {:?}; expected one of {}", a.ablate_grid, GRID_NAMES.join(", ")))
            })?;
            (a.ablate_grid.clone(), v)
        }
    };
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..a.seeds as u64).map(|i| config.seed + i).collect();
    let train_set = split_records(&data, Split::Train);
    let eval_set = split_records(&data, a.split);
    if train_set.is_empty() || eval_set.is_empty() {
        return Err(CliError::data(anyhow::anyhow!("ablation needs train and {} episodes", a.split)));
    }
    let root = a.flags.out.clone().unwrap_or_else(results_root).join(format!("ablate-{name}"));
    fs::create_dir_all(&root)?;
    let table = run_ablation_suite(&variants, &seeds, &config, &env, &train_set, &eval_set, &a.split.to_string(), Some(&root));

    let markdown = table.to_markdown();
    write_text(&root.join("table.md"), &markdown)?;
    write_text(&root.join("table.json"), &serde_json::to_string_pretty(&table).map_err(CliError::runtime)?)?;
    write_metrics_csv(&root.join("metrics.csv"), &table.metrics_rows())?;
    print!("{markdown}");

    let runs: Vec<_> = table.rows.iter().flat_map(|r| r.runs.iter().map(move |run| (r, run))).collect();
    for (row, run) in &runs {
        if let Err(e) = &run.result {
            eprintln!("run {} failed: {e}", row.variant.run_id(run.seed));
        }
    }
    if runs.iter().all(|(_, run)| run.result.is_err()) {
        return Err(CliError::runtime(anyhow::anyhow!("every ablation run failed")));
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    if a.ckpt.is_none() && a.world.is_none() && a.data.is_none() {
        return Err(CliError::Usage("inspect needs at least one of --ckpt, --world, --data".into()));
    }
    let mut out = serde_json::Map::new();
    if let Some(path) = &a.ckpt {
        let model = load_model(path)?;
        let params: Vec<_> = model.describe().into_iter().map(|(name, shape)| json!({ "name": name, "shape": shape })).collect();
        out.insert(
            "checkpoint".into(),
            json!({ "config": model.config(), "parameters": model.store().numel(), "tensors": params }),
        );
    }
    if let Some(path) = &a.world {
        let env = load_world(path)?;
        out.insert(
            "world".into(),
            json!({
                "nodes": env.node_count(),
                "edges": env.edge_count(),
                "intersections": env.nodes().filter(|&n| env.is_block_boundary(n)).count(),
                "blocks": env.blocks().len(),
                "bins": env.bins(),
                "d_v": env.d_v(),
                "sha256": world_hash(&env),
            }),
        );
    }
    if let Some(path) = &a.data {
        let data = load_dataset(path)?;
        let count = |s: Split| data.records.iter().filter(|r| r.split == s).count();
        let steps: usize = data.records.iter().map(InstructionRecord::steps).sum();
        out.insert(
            "dataset".into(),
            json!({
                "version": data.header.version,
                "world_sha256": data.header.world_sha256,
                "vocab_size": data.vocab().len(),
                "episodes": data.records.len(),
                "train": count(Split::Train),
                "dev": count(Split::Dev),
                "test": count(Split::Test),
                "mean_steps": steps as f64 / data.records.len().max(1) as f64,
            }),
        );
    }
    print_json(&serde_json::Value::Object(out));
    Ok(())
}

fn trace(a: TraceArgs) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let env = load_world(&a.world)?;
    let data = load_dataset(&a.data)?;
    data.validate_against(&env)?;
    let record = data
        .records
        .iter()
        .find(|r| r.id == a.episode)
        .ok_or_else(|| CliError::data(anyhow::anyhow!("no episode with id {}", a.episode)))?;
    let trace = rollout(&model, &env, record)?;
    let relevance: Option<Vec<Vec<f64>>> = trace.steps.iter().map(|s| s.relevance.clone()).collect();
    let progress: Vec<_> = trace.steps.iter().map(|s| json!({ "t": s.t, "predicted": s.e_p, "label": s.e_p_label })).collect();
    let doc = json!({
        "episode_id": record.id,
        "split": record.split.to_string(),
        "instruction": data.vocab().decode(&record.tokens),
        "sentences": record.sentence_count(),
        "goal_node": record.goal(),
        "stop_node": trace.stop_node,
        "forced_stop": trace.forced_stop,
        "path": trace.path,
        "gold_path": record.gold_path,
        "progress": progress,
        "relevance": relevance,
        "steps": trace.steps,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(CliError::runtime)?;
    let dir: Option<PathBuf> = match (&a.out, a.svg) {
        (Some(o), _) => Some(o.clone()),
        (None, true) => Some(a.ckpt.parent().map(|p| p.join("plots")).unwrap_or_else(|| PathBuf::from("plots"))),
        (None, false) => None,
    };
    match &a.out {
        Some(o) => write_text(&o.join(format!("trace-{}.json", record.id)), &text)?,
        None => println!("{text}"),
    }
    if a.svg {
        let dir = dir.expect("svg output directory");
        write_text(&dir.join(format!("progress-{}.svg", record.id)), &progress_svg(&trace))?;
        if let Some(matrix) = &relevance {
            let title = format!("Sentence relevance, episode {}", record.id);
            write_text(&dir.join(format!("relevance-{}.svg", record.id)), &heatmap_svg(&title, matrix))?;
        }
    }
    Ok(())
}
