use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use sepfront::trainer::{aggregate, read_rows, Summary};

use super::require;
use crate::error::{CliError, CliResult};
use crate::manifest::{create_dir, load_config, sha256_hex, write_manifest};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Results CSV with columns metric,value,fold,lambda.
    pub input: Option<PathBuf>,
    /// Print a markdown table instead of CSV.
    #[arg(long)]
    pub markdown: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub input: Option<PathBuf>,
    pub markdown: bool,
    pub out: Option<PathBuf>,
}

pub fn to_csv(s: &[Summary]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in s {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

/// One row per λ, one `mean ± sd` column per metric.
pub fn to_markdown(s: &[Summary]) -> String {
    let mut lambdas: Vec<f64> = Vec::new();
    let mut metrics: Vec<&str> = Vec::new();
    for r in s {
        if !lambdas.contains(&r.lambda) {
            lambdas.push(r.lambda);
        }
        if !metrics.contains(&r.metric.as_str()) {
            metrics.push(&r.metric);
        }
    }
    let mut out = String::from("| lambda |");
    for m in &metrics {
        let _ = write!(out, " {m} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(metrics.len()));
    out.push('\n');
    for &l in &lambdas {
        let _ = write!(out, "| {l} |");
        for m in &metrics {
            match s.iter().find(|r| r.lambda == l && r.metric == *m) {
                Some(r) => {
                    let _ = write!(out, " {:.4} ± {:.4} |", r.mean, r.sd);
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn run(args: Args, out: &mut dyn Write) -> CliResult<()> {
    let started = Instant::now();
    let mut cfg: Config = load_config(args.config.as_deref(), "report")?;
    if args.input.is_some() {
        cfg.input = args.input;
    }
    cfg.markdown |= args.markdown;
    if args.out.is_some() {
        cfg.out = args.out;
    }
    let path = require(&cfg.input, "results CSV")?;
    let bytes = fs::read(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let summaries = aggregate(&read_rows(bytes.as_slice())?);
    let text = if cfg.markdown { to_markdown(&summaries) } else { to_csv(&summaries)? };
    out.write_all(text.as_bytes())?;
    if let Some(dir) = &cfg.out {
        create_dir(dir)?;
        let name = if cfg.markdown { "summary.md" } else { "summary.csv" };
        fs::write(dir.join(name), &text)?;
        write_manifest(dir, "report", &cfg, BTreeMap::new(), Some(sha256_hex(&bytes)), started)?;
    }
    Ok(())
}
