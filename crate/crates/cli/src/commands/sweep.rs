use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use sepfront::trainer::{sweep, Summary, SweepOptions, SweepResult, TrainConfig, DEFAULT_GRID};

use super::{check_folds, check_unit_closed, load_dataset, parse_grid, require, Mode, TrainingFlags};
use crate::error::{CliError, CliResult};
use crate::manifest::{create_dir, load_config, write_json, write_manifest};
use crate::plot::{render, Chart, Series};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Dataset CSV.
    pub input: Option<PathBuf>,
    /// Schema JSON describing the dataset columns.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Comma-separated lambda values.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for the cell queue.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Quantile bins for the test-time CMI of binary scores.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Plot the soft-posterior CMI instead of the binned estimate.
    #[arg(long, conflicts_with = "hard")]
    pub soft: bool,
    /// Plot the binned estimate (the default).
    #[arg(long)]
    pub hard: bool,
    #[command(flatten)]
    pub training: TrainingFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub input: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub bins: usize,
    /// CMI shown on the plots; `auto` and `hard` use the binned estimate.
    pub mode: Mode,
    /// Template for every cell; `lambda` and `seed` are set per cell.
    pub training: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            input: None,
            schema: None,
            out: None,
            grid: DEFAULT_GRID.to_vec(),
            folds: 5,
            seed: 0,
            jobs: None,
            bins: 10,
            mode: Mode::Auto,
            training: TrainConfig::default(),
        }
    }
}

#[derive(Serialize)]
struct CellLog<'a> {
    fold: usize,
    lambda: f64,
    seed: u64,
    error: Option<&'a str>,
    curve: &'a [(f64, f64)],
}

fn mean_sd(s: &[Summary], lambda: f64, metric: &str) -> Option<(f64, f64)> {
    s.iter().find(|r| r.lambda == lambda && r.metric == metric).map(|r| (r.mean, r.sd))
}

fn chart(s: &[Summary], grid: &[f64], x: &str, y: &str, title: &str, x_label: &str, y_label: &str) -> Chart {
    let mut points = Vec::new();
    let mut band = Vec::new();
    for &l in grid {
        if let (Some((xm, _)), Some((ym, ysd))) = (mean_sd(s, l, x), mean_sd(s, l, y)) {
            points.push((xm, ym));
            band.push((xm, ym - ysd, ym + ysd));
        }
    }
    Chart {
        title: title.into(),
        x_label: x_label.into(),
        y_label: y_label.into(),
        series: vec![Series { label: "mean ± 1 sd over folds".into(), points, band, line: true, markers: true }],
    }
}

pub fn write_plots(result: &SweepResult, mode: Mode, dir: &Path) -> CliResult<()> {
    let s = result.summaries();
    let cmi = if mode == Mode::Soft { "test_soft_cmi" } else { "test_cmi" };
    let info = chart(&s, &result.grid, cmi, "test_mi", "Information plane", "I(U;Z|Y) [nats]", "I(U;Y) [nats]");
    fs::write(dir.join("information_plane.svg"), render(&[info]))?;
    let acc = chart(&s, &result.grid, "eo_gap", "accuracy", "Accuracy", "EO gap", "accuracy");
    let auc = chart(&s, &result.grid, "eo_gap", "auroc", "AUROC", "EO gap", "AUROC");
    fs::write(dir.join("operational_plane.svg"), render(&[acc, auc]))?;
    Ok(())
}

pub fn write_summary(path: &Path, s: &[Summary]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in s {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(args: Args, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let started = Instant::now();
    let mut cfg: Config = load_config(args.config.as_deref(), "sweep")?;
    if args.input.is_some() {
        cfg.input = args.input;
    }
    if args.schema.is_some() {
        cfg.schema = args.schema;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }
    if let Some(g) = &args.grid {
        cfg.grid = parse_grid(g).map_err(CliError::Usage)?;
    }
    cfg.folds = args.folds.unwrap_or(cfg.folds);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    if args.jobs.is_some() {
        cfg.jobs = args.jobs;
    }
    cfg.bins = args.bins.unwrap_or(cfg.bins);
    if let Some(m) = Mode::from_flags(args.soft, args.hard) {
        cfg.mode = m;
    }
    args.training.apply(&mut cfg.training)?;

    if cfg.grid.is_empty() {
        return Err(CliError::Usage("lambda grid is empty".into()));
    }
    for &l in &cfg.grid {
        check_unit_closed("lambda", l)?;
    }
    check_folds(cfg.folds)?;
    if cfg.bins < 2 {
        return Err(CliError::Usage("bins must be at least 2".into()));
    }
    if cfg.jobs == Some(0) {
        return Err(CliError::Usage("jobs must be positive".into()));
    }
    let dir = require(&cfg.out, "--out directory")?.to_path_buf();
    let (ds, _) = load_dataset(cfg.input.as_deref(), cfg.schema.as_deref())?;

    let opts = SweepOptions { folds: cfg.folds, master_seed: cfg.seed, bins: cfg.bins, jobs: cfg.jobs };
    let result = sweep(&cfg.training, &cfg.grid, &ds, opts)?;

    create_dir(&dir)?;
    result.write_csv(fs::File::create(dir.join("results.csv"))?)?;
    let summaries = result.summaries();
    write_summary(&dir.join("summary.csv"), &summaries)?;
    let cells: Vec<CellLog> = result
        .cells
        .iter()
        .map(|c| CellLog { fold: c.fold, lambda: c.lambda, seed: c.seed, error: c.error.as_deref(), curve: &c.curve })
        .collect();
    write_json(&dir.join("cells.json"), &cells)?;
    write_plots(&result, cfg.mode, &dir)?;
    let seeds = BTreeMap::from([("master".to_string(), cfg.seed), ("fold_assignment".to_string(), result.fold_seed)]);
    write_manifest(&dir, "sweep", &cfg, seeds, Some(ds.content_hash()), started)?;

    for c in result.cells.iter().filter(|c| c.error.is_some()) {
        writeln!(err, "cell fold={} lambda={} failed: {}", c.fold, c.lambda, c.error.as_deref().unwrap_or(""))?;
    }
    writeln!(out, "{:>8} {:>12} {:>12} {:>10} {:>10}", "lambda", "test_cmi", "test_mi", "accuracy", "eo_gap")?;
    for &l in &cfg.grid {
        let m = |k: &str| mean_sd(&summaries, l, k).map_or("-".to_string(), |(m, _)| format!("{m:.4}"));
        writeln!(out, "{l:>8} {:>12} {:>12} {:>10} {:>10}", m("test_cmi"), m("test_mi"), m("accuracy"), m("eo_gap"))?;
    }
    if result.failed_cells() == result.cells.len() {
        return Err(CliError::Numeric(format!("all {} cells failed", result.cells.len())));
    }
    Ok(())
}
