use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub mod estimate;
pub mod frontier;
pub mod generate;
pub mod report;
pub mod sweep;
pub mod train;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

impl From<OnOff> for bool {
    fn from(v: OnOff) -> bool {
        v == OnOff::On
    }
}

/// Which CMI estimate a command reports.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Auto,
    Soft,
    Hard,
}

impl Mode {
    pub fn from_flags(soft: bool, hard: bool) -> Option<Mode> {
        match (soft, hard) {
            (true, _) => Some(Mode::Soft),
            (_, true) => Some(Mode::Hard),
            _ => None,
        }
    }
}

pub fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
    path.as_deref().ok_or_else(|| CliError::Usage(format!("missing {what}")))
}

pub fn check_unit_open(name: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{name} = {v} must lie in (0, 1)")))
    }
}

/// Parses `0,0.5,0.9`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("invalid grid value {t:?}")))
        .collect()
}

/// Training flags shared by `train` and `sweep`.
#[derive(Debug, clap::Args)]
pub struct TrainingFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Append the one-hot sensitive attribute to the model input.
    #[arg(long, value_enum)]
    pub sensitive_input: Option<OnOff>,
}

impl TrainingFlags {
    pub fn apply(&self, cfg: &mut sepfront::trainer::TrainConfig) -> CliResult<()> {
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(lr) = self.lr {
            cfg.adam.lr = lr;
        }
        if let Some(h) = &self.hidden {
            cfg.architecture.hidden = h.clone();
            cfg.architecture.split = cfg.architecture.split.min(h.len());
        }
        if let Some(s) = self.sensitive_input {
            cfg.sensitive_input = s.into();
        }
        if cfg.epochs == 0 {
            return Err(CliError::Usage("epochs must be positive".into()));
        }
        if cfg.batch_size < 2 {
            return Err(CliError::Usage("batch size must be at least 2".into()));
        }
        if !(cfg.adam.lr > 0.0 && cfg.adam.lr.is_finite()) {
            return Err(CliError::Usage("learning rate must be positive".into()));
        }
        if cfg.architecture.hidden.iter().any(|&w| w == 0) {
            return Err(CliError::Usage("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Loads a dataset and its schema; a missing schema is a usage error.
pub fn load_dataset(
    input: Option<&Path>,
    schema: Option<&Path>,
) -> CliResult<(sepfront::data::TabularDataset, sepfront::data::LoadReport)> {
    let input = input.ok_or_else(|| CliError::Usage("missing dataset CSV".into()))?;
    let schema = schema.ok_or_else(|| CliError::Usage("missing --schema".into()))?;
    let schema = sepfront::data::Schema::load(schema)?;
    Ok(sepfront::data::load_csv_path(input, &schema)?)
}

pub fn check_folds(folds: usize) -> CliResult<()> {
    if folds < 3 {
        return Err(CliError::Usage(format!("folds = {folds}: a validation fold needs at least 3")));
    }
    Ok(())
}

pub fn check_unit_closed(name: &str, v: f64) -> CliResult<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{name} = {v} must lie in [0, 1]")))
    }
}
