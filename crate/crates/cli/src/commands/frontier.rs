use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use sepfront::finite_dist::{fixtures, JointPmf3, PredictorTable};
use sepfront::frontier::{
    budget_check, det_frontier, distinct_points, enumerate_deterministic_set, linear_grid, necessity_analysis,
    table_count, upper_concave_envelope, write_points_csv, FrontierPoint, NecessityReport,
};

use crate::error::{CliError, CliResult};
use crate::manifest::{create_dir, load_config, sha256_hex, write_json, write_manifest};
use crate::plot::{render, Chart, Series};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Joint law as JSON `{"card":[kx,ky,kz],"probs":[...]}`, indexed `(x, y, z)` row-major.
    pub joint: Option<PathBuf>,
    /// Built-in joint instead of a file: necessity, independence, y-equals-z or noisy:FLIP_X,FLIP_Z.
    #[arg(long, conflicts_with = "joint")]
    pub fixture: Option<String>,
    /// Number of predictor outputs.
    #[arg(long)]
    pub card_out: Option<usize>,
    /// Points of the deterministic-frontier grid.
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Information-plane SVG path.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Directory for points, envelope, grid, report and manifest.
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
    pub card_out: usize,
    pub grid_points: usize,
    pub svg: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self { joint: None, fixture: None, card_out: 2, grid_points: 101, svg: None, out: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub max_identity_error: f64,
    /// Largest `u + v − budget`; non-positive when every predictor is within budget.
    pub max_budget_excess: f64,
    pub budget: f64,
    pub all_hold: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub card: [usize; 3],
    pub card_out: usize,
    pub tables: u64,
    pub distinct_points: usize,
    pub envelope: Vec<FrontierPoint>,
    /// Envelope value at `v = 0`.
    pub fair_utility: Option<f64>,
    pub max_utility: f64,
    pub budget: BudgetSummary,
    pub necessity: NecessityReport,
}

fn fixture(name: &str) -> CliResult<JointPmf3> {
    match name {
        "necessity" => Ok(fixtures::necessity()),
        "independence" => Ok(fixtures::independence()),
        "y-equals-z" => Ok(fixtures::y_equals_z()),
        _ => {
            let bad = || CliError::Usage(format!("unknown fixture {name:?}"));
            let flips = name.strip_prefix("noisy:").ok_or_else(bad)?;
            let (a, b) = flips.split_once(',').ok_or_else(bad)?;
            let (fx, fz) = (a.trim().parse::<f64>().map_err(|_| bad())?, b.trim().parse::<f64>().map_err(|_| bad())?);
            if !(0.0..=1.0).contains(&fx) || !(0.0..=1.0).contains(&fz) {
                return Err(CliError::Usage("flip probabilities must lie in [0, 1]".into()));
            }
            Ok(fixtures::noisy_channels(fx, fz))
        }
    }
}

/// Resolves the joint from config; returns it with the hash of its source.
pub fn load_joint(joint: Option<&Path>, name: Option<&str>) -> CliResult<(JointPmf3, String)> {
    match (joint, name) {
        (Some(path), _) => {
            let bytes = fs::read(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let j: JointPmf3 = serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Data(format!("{}: malformed joint: {e}", path.display())))?;
            Ok((j, sha256_hex(&bytes)))
        }
        (None, Some(name)) => {
            let j = fixture(name)?;
            let hash = sha256_hex(serde_json::to_string(&j)?.as_bytes());
            Ok((j, hash))
        }
        (None, None) => Err(CliError::Usage("missing joint JSON or --fixture".into())),
    }
}

pub fn compute(joint: &JointPmf3, cfg: &Config) -> CliResult<(Report, Vec<FrontierPoint>, Vec<(f64, Option<f64>)>)> {
    let [kx, _, kz] = joint.card();
    let tables = table_count(cfg.card_out, kx * kz)?;
    let points = enumerate_deterministic_set(joint, cfg.card_out)?;
    let envelope = upper_concave_envelope(&points)?;

    let mut budget = BudgetSummary { max_identity_error: 0.0, max_budget_excess: f64::NEG_INFINITY, budget: 0.0, all_hold: true };
    for idx in 0..tables {
        let b = budget_check(joint, &PredictorTable::from_index(kx, kz, cfg.card_out, idx))?;
        budget.max_identity_error = budget.max_identity_error.max(b.identity_error);
        budget.max_budget_excess = budget.max_budget_excess.max(b.u + b.v - b.budget);
        budget.budget = b.budget;
        budget.all_hold &= b.identity_holds && b.within_budget;
    }

    let v_max = points.iter().map(|p| p.v).fold(0.0, f64::max);
    let grid = det_frontier(&points, &linear_grid(v_max, cfg.grid_points));
    let report = Report {
        card: joint.card(),
        card_out: cfg.card_out,
        tables,
        distinct_points: distinct_points(&points).len(),
        fair_utility: envelope.eval(0.0),
        max_utility: points.iter().map(|p| p.u).fold(f64::NEG_INFINITY, f64::max),
        envelope: envelope.vertices().to_vec(),
        budget,
        necessity: necessity_analysis(joint, cfg.card_out)?,
    };
    Ok((report, points, grid))
}

fn write_grid(path: &Path, grid: &[(f64, Option<f64>)]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["v_nats", "u_nats"])?;
    for (v, u) in grid {
        w.write_record([v.to_string(), u.map(|u| u.to_string()).unwrap_or_default()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn information_plane(points: &[FrontierPoint], envelope: &[FrontierPoint]) -> String {
    let unique = distinct_points(points);
    render(&[Chart {
        title: "Information plane".into(),
        x_label: "v = I(U;Z|Y) [nats]".into(),
        y_label: "u = I(U;Y) [nats]".into(),
        series: vec![
            Series {
                label: "deterministic predictors".into(),
                points: unique.iter().map(|p| (p.v, p.u)).collect(),
                markers: true,
                ..Default::default()
            },
            Series {
                label: "concave envelope".into(),
                points: envelope.iter().map(|p| (p.v, p.u)).collect(),
                line: true,
                markers: true,
                ..Default::default()
            },
        ],
    }])
}

pub fn run(args: Args, out: &mut dyn Write) -> CliResult<()> {
    let started = Instant::now();
    let mut cfg: Config = load_config(args.config.as_deref(), "frontier")?;
    if args.joint.is_some() || args.fixture.is_some() {
        cfg.joint = args.joint;
        cfg.fixture = args.fixture;
    }
    cfg.card_out = args.card_out.unwrap_or(cfg.card_out);
    cfg.grid_points = args.grid_points.unwrap_or(cfg.grid_points);
    if args.svg.is_some() {
        cfg.svg = args.svg;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }
    if cfg.card_out < 1 {
        return Err(CliError::Usage("card-out must be at least 1".into()));
    }

    let (joint, hash) = load_joint(cfg.joint.as_deref(), cfg.fixture.as_deref())?;
    let (report, points, grid) = compute(&joint, &cfg)?;

    write_points_csv(&report.envelope, &mut *out)?;
    if let Some(svg) = &cfg.svg {
        fs::write(svg, information_plane(&points, &report.envelope))?;
    }
    if let Some(dir) = &cfg.out {
        create_dir(dir)?;
        write_points_csv(&points, fs::File::create(dir.join("points.csv"))?)?;
        write_points_csv(&report.envelope, fs::File::create(dir.join("envelope.csv"))?)?;
        write_grid(&dir.join("det_frontier.csv"), &grid)?;
        write_json(&dir.join("report.json"), &report)?;
        write_manifest(dir, "frontier", &cfg, BTreeMap::new(), Some(hash), started)?;
    }
    Ok(())
}
