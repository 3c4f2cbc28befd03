use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{EpisodeMetrics, EvalResult};
use super::rollout::EpisodeTrace;
use super::train::TrainOutcome;
use super::{Result, TrainConfig};

pub const METRICS_COLUMNS: [&str; 7] = ["run_id", "split", "tc", "spd", "sed", "seed", "config_hash"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub split: String,
    pub tc: f64,
    pub spd: f64,
    pub sed: f64,
    pub seed: u64,
    pub config_hash: String,
}

/// Writes `rows` with a header line. An empty slice still produces the header.
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(METRICS_COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

/// Base directory for run outputs: `$BLOCKNAV_RESULTS_DIR`, else `results`.
pub fn results_root() -> PathBuf {
    std::env::var_os("BLOCKNAV_RESULTS_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("results"))
}

/// `{root}/{run_id}/` holding config.json, metrics.csv, log.jsonl,
/// checkpoint.bin and plots/.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub run_id: String,
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path, run_id: &str) -> Result<Self> {
        let path = root.join(run_id);
        fs::create_dir_all(path.join("plots"))?;
        Ok(RunDir { run_id: run_id.to_string(), path })
    }

    pub fn config_json(&self) -> PathBuf {
        self.path.join("config.json")
    }
    pub fn metrics_csv(&self) -> PathBuf {
        self.path.join("metrics.csv")
    }
    pub fn log_jsonl(&self) -> PathBuf {
        self.path.join("log.jsonl")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.path.join("checkpoint.bin")
    }
    pub fn plot(&self, name: &str) -> PathBuf {
        self.path.join("plots").join(name)
    }

    pub fn write_config(&self, config: &TrainConfig) -> Result<()> {
        fs::write(self.config_json(), serde_json::to_string_pretty(config)?)?;
        Ok(())
    }

    pub fn write_log<T: Serialize>(&self, entries: &[T]) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(self.log_jsonl())?);
        for e in entries {
            serde_json::to_writer(&mut f, e)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }

    /// Config, training log, checkpoint and one metrics row per split.
    pub fn write_run(&self, config: &TrainConfig, trained: &TrainOutcome, results: &[(&str, &EvalResult)]) -> Result<()> {
        self.write_config(config)?;
        self.write_log(&trained.log)?;
        trained.model.save(&self.checkpoint())?;
        let hash = config.config_hash();
        let rows: Vec<MetricsRow> = results
            .iter()
            .map(|(split, r)| MetricsRow {
                run_id: self.run_id.clone(),
                split: split.to_string(),
                tc: r.tc,
                spd: r.spd,
                sed: r.sed,
                seed: config.seed,
                config_hash: hash.clone(),
            })
            .collect();
        write_metrics_csv(&self.metrics_csv(), &rows)?;
        let curve: Vec<(f64, f64)> = trained.log.iter().map(|l| (l.epoch as f64, l.l_total)).collect();
        fs::write(self.plot("loss.svg"), line_plot_svg("Training loss", "epoch", "loss", &[("total", curve)]))?;
        Ok(())
    }
}

/// One point of a SED-by-difficulty breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SedBucket {
    pub lo: usize,
    pub hi: usize,
    pub episodes: usize,
    pub mean_sed: f64,
}

/// Groups episodes into quartile buckets of `key` (block count or
/// instruction length) and averages SED per non-empty bucket.
pub fn bucket_sed(rows: &[EpisodeMetrics], key: impl Fn(&EpisodeMetrics) -> usize) -> Vec<SedBucket> {
    if rows.is_empty() {
        return Vec::new();
    }
    let mut keys: Vec<usize> = rows.iter().map(&key).collect();
    keys.sort_unstable();
    let q = |p: usize| keys[(keys.len() - 1) * p / 4];
    let mut edges = vec![keys[0], q(1), q(2), q(3), keys[keys.len() - 1]];
    edges.dedup();
    let ranges: Vec<(usize, usize)> = if edges.len() == 1 {
        vec![(edges[0], edges[0])]
    } else {
        edges
            .windows(2)
            .enumerate()
            .map(|(i, w)| (if i == 0 { w[0] } else { w[0] + 1 }, w[1]))
            .filter(|(lo, hi)| lo <= hi)
            .collect()
    };
    ranges
        .into_iter()
        .filter_map(|(lo, hi)| {
            let sel: Vec<f64> = rows.iter().filter(|r| (lo..=hi).contains(&key(r))).map(|r| r.sed).collect();
            (!sel.is_empty()).then(|| SedBucket {
                lo,
                hi,
                episodes: sel.len(),
                mean_sed: sel.iter().sum::<f64>() / sel.len() as f64,
            })
        })
        .collect()
}

const W: f64 = 480.0;
const H: f64 = 300.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart with one polyline and one circle per point for each series.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let (x0, x1) = span(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let (y0, y1) = span(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    let _ =
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, W / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}" font-size="10">{y0:.3}</text>"#, H - PAD + 14.0);
    let _ = writeln!(s, r#"<text x="4" y="{PAD}" font-size="10">{y1:.3}</text>"#);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<&(f64, f64)> = pts.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
        let line: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, line.join(" "));
        for p in pts {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(p.0), sy(p.1));
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
            W - PAD - 90.0,
            PAD + 14.0 * i as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Predicted block progress against its label over one episode.
pub fn progress_svg(trace: &EpisodeTrace) -> String {
    let pred = trace.steps.iter().map(|s| (s.t as f64, s.e_p)).collect();
    let gold = trace.steps.iter().map(|s| (s.t as f64, s.e_p_label)).collect();
    line_plot_svg(
        &format!("Block progress, episode {}", trace.episode_id),
        "step",
        "progress",
        &[("predicted", pred), ("label", gold)],
    )
}

/// Grey-scale grid, one row per step and one column per sentence.
pub fn heatmap_svg(title: &str, matrix: &[Vec<f64>]) -> String {
    let rows = matrix.len();
    let cols = matrix.iter().map(Vec::len).max().unwrap_or(0);
    let cell = 18.0;
    let (w, h) = (PAD + cols as f64 * cell + 8.0, PAD + rows as f64 * cell + 8.0);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<text x="4" y="16" font-size="12">{}</text>"#, escape(title));
    for (t, row) in matrix.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
            let _ = writeln!(
                s,
                r##"<rect x="{:.1}" y="{:.1}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},{shade})" stroke="#ccc"><title>t={t} s={j} {v:.3}</title></rect>"##,
                PAD + j as f64 * cell,
                PAD + t as f64 * cell
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
