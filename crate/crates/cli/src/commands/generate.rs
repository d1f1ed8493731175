use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use sepfront::data::{generate_synthetic, SyntheticSpec};

use super::frontier::load_joint;
use super::require;
use crate::error::{CliError, CliResult};
use crate::manifest::{create_dir, load_config, write_json, write_manifest};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Joint law JSON; `--fixture` picks a built-in one instead.
    pub joint: Option<PathBuf>,
    /// necessity, independence, y-equals-z or noisy:FLIP_X,FLIP_Z.
    #[arg(long, conflicts_with = "joint")]
    pub fixture: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Standard deviation of the feature noise.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub joint: Option<PathBuf>,
    pub fixture: Option<String>,
    pub n: usize,
    pub noise: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self { joint: None, fixture: Some("necessity".into()), n: 20_000, noise: 0.5, seed: 0, out: None }
    }
}

pub fn run(args: Args, out: &mut dyn Write) -> CliResult<()> {
    let started = Instant::now();
    let mut cfg: Config = load_config(args.config.as_deref(), "generate")?;
    if args.joint.is_some() || args.fixture.is_some() {
        cfg.joint = args.joint;
        cfg.fixture = args.fixture;
    }
    cfg.n = args.n.unwrap_or(cfg.n);
    cfg.noise = args.noise.unwrap_or(cfg.noise);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    if args.out.is_some() {
        cfg.out = args.out;
    }
    if cfg.n == 0 {
        return Err(CliError::Usage("n must be positive".into()));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(CliError::Usage("noise must be non-negative".into()));
    }
    let dir = require(&cfg.out, "--out directory")?.to_path_buf();
    let (joint, hash) = load_joint(cfg.joint.as_deref(), cfg.fixture.as_deref())?;
    let data = generate_synthetic(&SyntheticSpec::standard(joint.clone(), cfg.n, cfg.noise, cfg.seed))?;

    create_dir(&dir)?;
    data.dataset.write_csv(fs::File::create(dir.join("data.csv"))?)?;
    write_json(&dir.join("schema.json"), &data.dataset.schema())?;
    write_json(&dir.join("joint.json"), &joint)?;
    write_manifest(&dir, "generate", &cfg, BTreeMap::from([("data".to_string(), cfg.seed)]), Some(hash), started)?;
    writeln!(out, "wrote {} rows to {}", cfg.n, dir.join("data.csv").display())?;
    Ok(())
}
