use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use sepfront::data::encode_splits;
use sepfront::neural::Checkpoint;
use sepfront::trainer::{cell_seed, evaluate, fold_seed, stratified_kfold, train, TrainConfig, TrainData};

use super::{check_folds, check_unit_closed, load_dataset, require, TrainingFlags};
use crate::error::{CliError, CliResult};
use crate::manifest::{create_dir, load_config, write_json, write_manifest};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Dataset CSV.
    pub input: Option<PathBuf>,
    /// Schema JSON describing the dataset columns.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Test fold to hold out; the next fold is used for validation.
    #[arg(long)]
    pub fold: Option<usize>,
    /// Master seed; fold assignment and model seeds derive from it.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub bins: Option<usize>,
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
    pub folds: usize,
    pub fold: usize,
    pub seed: u64,
    pub bins: usize,
    /// `seed` inside is ignored; the model seed derives from the master seed and fold.
    pub training: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self { input: None, schema: None, out: None, folds: 5, fold: 0, seed: 0, bins: 10, training: TrainConfig::default() }
    }
}

pub fn run(args: Args, out: &mut dyn Write) -> CliResult<()> {
    let started = Instant::now();
    let mut cfg: Config = load_config(args.config.as_deref(), "train")?;
    if args.input.is_some() {
        cfg.input = args.input;
    }
    if args.schema.is_some() {
        cfg.schema = args.schema;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }
    cfg.training.lambda = args.lambda.unwrap_or(cfg.training.lambda);
    cfg.folds = args.folds.unwrap_or(cfg.folds);
    cfg.fold = args.fold.unwrap_or(cfg.fold);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.bins = args.bins.unwrap_or(cfg.bins);
    args.training.apply(&mut cfg.training)?;

    check_unit_closed("lambda", cfg.training.lambda)?;
    check_folds(cfg.folds)?;
    if cfg.fold >= cfg.folds {
        return Err(CliError::Usage(format!("fold {} not below folds = {}", cfg.fold, cfg.folds)));
    }
    if cfg.bins < 2 {
        return Err(CliError::Usage("bins must be at least 2".into()));
    }
    let dir = require(&cfg.out, "--out directory")?.to_path_buf();
    let (ds, load) = load_dataset(cfg.input.as_deref(), cfg.schema.as_deref())?;

    let fseed = fold_seed(cfg.seed);
    let folds = stratified_kfold(ds.y(), ds.z(), cfg.folds, fseed)?;
    let split = encode_splits(&ds, &folds, cfg.folds)?.swap_remove(cfg.fold);
    let model_seed = cell_seed(cfg.seed, cfg.fold, 0);
    let config = TrainConfig { seed: model_seed, ..cfg.training.clone() };
    let data = TrainData { x: split.train.x.view(), y: &split.train.y, z: &split.train.z, k_y: ds.k_y(), k_z: ds.k_z() };
    let outcome = train(&config, data)?;
    let mut metrics = evaluate(&config, &outcome.model, &split, ds.k_y(), ds.k_z(), cfg.bins)?;
    if let Some(last) = outcome.epochs.last() {
        metrics.final_task_loss = last.task_loss;
        metrics.final_train_cmi = last.cmi;
    }

    create_dir(&dir)?;
    let checkpoint = Checkpoint::capture(&outcome.model, model_seed, &outcome.rng, Some(&outcome.adam));
    write_json(&dir.join("checkpoint.json"), &checkpoint)?;
    write_json(&dir.join("standardizer.json"), &split.stats)?;
    write_json(&dir.join("metrics.json"), &metrics)?;
    let mut w = csv::Writer::from_writer(fs::File::create(dir.join("diagnostics.csv"))?);
    w.write_record(["epoch", "task_loss", "cmi"])?;
    for e in &outcome.epochs {
        w.write_record([e.epoch.to_string(), e.task_loss.to_string(), e.cmi.to_string()])?;
    }
    w.flush()?;
    let seeds = BTreeMap::from([("master".to_string(), cfg.seed), ("fold_assignment".to_string(), fseed), ("model".to_string(), model_seed)]);
    write_manifest(&dir, "train", &cfg, seeds, Some(ds.content_hash()), started)?;

    if !load.constant_columns.is_empty() {
        writeln!(out, "constant columns: {}", load.constant_columns.join(", "))?;
    }
    writeln!(out, "rows {} (dropped {}), train {}, val {}, test {}", load.rows_read, load.dropped_rows, split.train.rows.len(), split.val.rows.len(), split.test.rows.len())?;
    for (name, value) in metrics.named() {
        writeln!(out, "{name:<16} {value:.6}")?;
    }
    Ok(())
}
