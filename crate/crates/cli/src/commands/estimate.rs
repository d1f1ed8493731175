use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use sepfront::estimators::io::{read_batch, Batch};
use sepfront::estimators::{
    concentration_bound, miller_madow_correct, plugin_cmi_hard, soft_cmi, BiasModel, ConcentrationParams,
    SampleBatch, SoftBatch,
};
use sepfront::metrics::{bin_index, quantile_cuts, EvalBatch};
use sepfront::Error as CoreError;

use super::{check_unit_open, require, Mode};
use crate::error::{CliError, CliResult};
use crate::manifest::{create_dir, load_config, sha256_hex, write_json, write_manifest};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Batch CSV with header `u,y,z` or `p_0,...,p_{K-1},y,z`.
    pub input: Option<PathBuf>,
    /// Soft plug-in estimate on posteriors.
    #[arg(long, conflicts_with = "hard")]
    pub soft: bool,
    /// Hard estimate: binary posteriors are quantile-binned, wider ones use the argmax.
    #[arg(long)]
    pub hard: bool,
    /// Report the Miller-Madow corrected value as the headline estimate.
    #[arg(long)]
    pub correct_bias: bool,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Failure probability of the concentration bound.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Lower bound on P(u, z | y); the empirical minimum is used when absent.
    #[arg(long)]
    pub qmin: Option<f64>,
    /// Print the JSON report instead of text.
    #[arg(long)]
    pub json: bool,
    /// Directory for `estimate.json` and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub input: Option<PathBuf>,
    pub mode: Mode,
    pub correct_bias: bool,
    pub bins: usize,
    pub delta: f64,
    pub q_min: Option<f64>,
    pub json: bool,
    pub out: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self { input: None, mode: Mode::Auto, correct_bias: false, bins: 10, delta: 0.05, q_min: None, json: false, out: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub delta: f64,
    pub p_min: f64,
    pub q_min: f64,
    pub q_min_empirical: bool,
    pub value: Option<f64>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub method: String,
    pub n: usize,
    pub k_u: usize,
    pub k_y: usize,
    pub k_z: usize,
    pub raw_cmi: f64,
    pub bias: f64,
    pub corrected_cmi: f64,
    /// Raw or corrected, following `correct_bias`.
    pub cmi: f64,
    pub concentration: Bound,
    /// `√(2·cmi)`: bound on the normalized conditional covariance of any bounded test functions.
    pub dependence_bound: f64,
}

/// Estimate inputs reduced to one of the two estimator families.
enum Prepared {
    Hard(SampleBatch, &'static str),
    Soft(SoftBatch),
}

fn prepare(batch: Batch, mode: Mode, bins: usize) -> CliResult<Prepared> {
    Ok(match (batch, mode) {
        (Batch::Hard(b), Mode::Soft) => {
            let [ku, ky, kz] = b.cards();
            Prepared::Soft(SoftBatch::one_hot(ku, ky, kz, b.u(), b.y().to_vec(), b.z().to_vec())?)
        }
        (Batch::Hard(b), _) => Prepared::Hard(b, "plugin"),
        (Batch::Soft(s), Mode::Hard) => {
            let (ky, kz) = s.cards();
            let (y, z) = (s.y().to_vec(), s.z().to_vec());
            if s.width() == 2 {
                let eval = EvalBatch::from_posteriors(2, s.probs().to_vec(), y.clone(), z.clone(), ky.max(2), kz)?;
                let scores = eval.positive_scores();
                let (cuts, _) = quantile_cuts(&scores, bins);
                let u = scores.iter().map(|&p| bin_index(&cuts, p)).collect();
                Prepared::Hard(SampleBatch::new(cuts.len() + 1, ky, kz, u, y, z)?, "binned")
            } else {
                let w = s.width();
                let u = s
                    .probs()
                    .chunks(w)
                    .map(|row| (0..w).fold(0, |best, k| if row[k] > row[best] { k } else { best }))
                    .collect();
                Prepared::Hard(SampleBatch::new(w, ky, kz, u, y, z)?, "argmax")
            }
        }
        (Batch::Soft(s), _) => Prepared::Soft(s),
    })
}

/// Empirical `min_y P(y)` over observed strata and `min P(u, z | y)` of the (averaged) posteriors.
fn soft_minima(s: &SoftBatch) -> (f64, f64) {
    let (ky, kz) = s.cards();
    let w = s.width();
    let mut mass = vec![0.0; ky * w * kz];
    let mut ny = vec![0usize; ky];
    for (i, row) in s.probs().chunks(w).enumerate() {
        let (y, z) = (s.y()[i], s.z()[i]);
        ny[y] += 1;
        for (u, &p) in row.iter().enumerate() {
            mass[(y * w + u) * kz + z] += p;
        }
    }
    let mut q = f64::INFINITY;
    for y in (0..ky).filter(|&y| ny[y] > 0) {
        for c in &mass[y * w * kz..(y + 1) * w * kz] {
            q = q.min(c / ny[y] as f64);
        }
    }
    (min_stratum(&ny, s.len()), if q.is_finite() { q } else { 0.0 })
}

fn min_stratum(ny: &[usize], n: usize) -> f64 {
    ny.iter().filter(|&&c| c > 0).map(|&c| c as f64 / n as f64).fold(1.0, f64::min)
}

pub fn compute(batch: Batch, cfg: &Config) -> CliResult<Report> {
    let prepared = prepare(batch, cfg.mode, cfg.bins)?;
    let (method, n, [k_u, k_y, k_z], raw, p_min, q_emp) = match &prepared {
        Prepared::Hard(b, method) => {
            let mut ny = vec![0usize; b.cards()[1]];
            b.y().iter().for_each(|&y| ny[y] += 1);
            (method.to_string(), b.len(), b.cards(), plugin_cmi_hard(b), min_stratum(&ny, b.len()), b.min_cell_frequency())
        }
        Prepared::Soft(s) => {
            let (ky, kz) = s.cards();
            let (p, q) = soft_minima(s);
            ("soft".to_string(), s.len(), [s.width(), ky, kz], soft_cmi(s)?, p, q)
        }
    };
    let model = BiasModel::new(k_u, k_y, k_z, n)?;
    let corrected = miller_madow_correct(raw, &model);
    let cmi = if cfg.correct_bias { corrected } else { raw };

    let q_min = cfg.q_min.unwrap_or(q_emp);
    let params = ConcentrationParams { k_u, k_y, k_z, p_min, q_min, delta: cfg.delta, batch_size: n };
    let (value, note) = match concentration_bound(&params) {
        Ok(v) => (Some(v), None),
        Err(_) if cfg.q_min.is_none() && q_emp == 0.0 => {
            (None, Some("an empty (u, z, y) cell makes the empirical q_min zero; pass --qmin".to_string()))
        }
        Err(CoreError::Domain(msg)) if cfg.q_min.is_some() => return Err(CliError::Usage(msg)),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(Report {
        method,
        n,
        k_u,
        k_y,
        k_z,
        raw_cmi: raw,
        bias: model.bias(),
        corrected_cmi: corrected,
        cmi,
        concentration: Bound { delta: cfg.delta, p_min, q_min, q_min_empirical: cfg.q_min.is_none(), value, note },
        dependence_bound: (2.0 * cmi).sqrt(),
    })
}

fn print_text(r: &Report, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "method           {}", r.method)?;
    writeln!(out, "samples          {}", r.n)?;
    writeln!(out, "cardinalities    K_U={} K_Y={} K_Z={}", r.k_u, r.k_y, r.k_z)?;
    writeln!(out, "raw CMI          {:.6} nats", r.raw_cmi)?;
    writeln!(out, "bias term        {:.6} nats", r.bias)?;
    writeln!(out, "corrected CMI    {:.6} nats", r.corrected_cmi)?;
    let c = &r.concentration;
    match c.value {
        Some(v) => writeln!(out, "deviation bound  {v:.6} nats (delta={}, q_min={:.4e}, p_min={:.4})", c.delta, c.q_min, c.p_min)?,
        None => writeln!(out, "deviation bound  unavailable: {}", c.note.as_deref().unwrap_or(""))?,
    }
    writeln!(out, "dependence bound {:.6} (sqrt(2 * {:.6}))", r.dependence_bound, r.cmi)
}

pub fn run(args: Args, out: &mut dyn Write) -> CliResult<()> {
    let started = Instant::now();
    let mut cfg: Config = load_config(args.config.as_deref(), "estimate")?;
    if args.input.is_some() {
        cfg.input = args.input;
    }
    if let Some(m) = Mode::from_flags(args.soft, args.hard) {
        cfg.mode = m;
    }
    cfg.correct_bias |= args.correct_bias;
    cfg.bins = args.bins.unwrap_or(cfg.bins);
    cfg.delta = args.delta.unwrap_or(cfg.delta);
    if args.qmin.is_some() {
        cfg.q_min = args.qmin;
    }
    cfg.json |= args.json;
    if args.out.is_some() {
        cfg.out = args.out;
    }

    check_unit_open("delta", cfg.delta)?;
    if let Some(q) = cfg.q_min {
        if !(q > 0.0 && q <= 1.0) {
            return Err(CliError::Usage(format!("qmin = {q} must lie in (0, 1]")));
        }
    }
    if cfg.bins < 2 {
        return Err(CliError::Usage("bins must be at least 2".into()));
    }
    let path = require(&cfg.input, "input batch CSV")?;
    let bytes = fs::read(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Err(CliError::Usage(format!("{} is empty", path.display())));
    }
    let batch = match read_batch(bytes.as_slice()) {
        Err(CoreError::Empty(msg)) => return Err(CliError::Usage(format!("{}: {msg}", path.display()))),
        other => other?,
    };
    let report = compute(batch, &cfg)?;

    if cfg.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        print_text(&report, out)?;
    }
    if let Some(dir) = &cfg.out {
        create_dir(dir)?;
        write_json(&dir.join("estimate.json"), &report)?;
        write_manifest(dir, "estimate", &cfg, BTreeMap::new(), Some(sha256_hex(&bytes)), started)?;
    }
    Ok(())
}
