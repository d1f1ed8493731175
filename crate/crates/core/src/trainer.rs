//! CMI-regularized training, stratified folds, and the λ sweep.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2, Axis as NdAxis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{encode_splits, FoldSplit, TabularDataset};
use crate::error::{Error, Result};
use crate::estimators::{plugin_cmi_hard, plugin_mi_hard, soft_cmi, SampleBatch, SoftBatch};
use crate::metrics::{
    accuracy, auroc, bin_index, eo_gap, eopp_gap, posterior_cmi, quantile_cuts,
    threshold_predictions, tune_threshold, EvalBatch,
};
use crate::neural::{
    balanced_objective, compose_input, cross_entropy, feature_grad_norms, soft_cmi_loss, softmax,
    AdamConfig, AdamState, Architecture, BalancedLossConfig, MlpModel,
};
use crate::seeding::derive_seed;

/// Default mixing weights, denser near 1.
pub const DEFAULT_GRID: [f64; 12] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub eps: f64,
    pub seed: u64,
    /// Append the one-hot sensitive attribute to the model input.
    pub sensitive_input: bool,
    pub adam: AdamConfig,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            lambda: 0.0,
            eps: 1e-8,
            seed: 0,
            sensitive_input: true,
            adam: AdamConfig::default(),
            architecture: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Domain("batch size must be at least 2".into()));
        }
        BalancedLossConfig::new(self.lambda, self.eps)?;
        if !(self.eps > 0.0) {
            return Err(Error::Domain("eps must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Domain("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Training inputs: standardized features with labels and groups.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: &'a [usize],
    pub z: &'a [usize],
    pub k_y: usize,
    pub k_z: usize,
}

impl<'a> TrainData<'a> {
    fn validate(&self) -> Result<()> {
        if self.x.nrows() != self.y.len() || self.y.len() != self.z.len() {
            return Err(Error::DimensionMismatch(
                "features, labels and groups differ in length".into(),
            ));
        }
        if self.y.is_empty() {
            return Err(Error::Empty("no training rows".into()));
        }
        Ok(())
    }
}

/// Per-epoch monitor values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochDiagnostics {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's mini-batches.
    pub task_loss: f64,
    /// Soft CMI of the epoch's final mini-batch.
    pub cmi: f64,
    pub final_batch_rows: Vec<usize>,
    /// Logits of the final mini-batch, row-major.
    pub final_batch_logits: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
    pub epochs: Vec<EpochDiagnostics>,
}

/// Model input for `x` and `z` under `config`.
pub fn model_input(
    config: &TrainConfig,
    x: ArrayView2<f64>,
    z: &[usize],
    k_z: usize,
) -> Result<Array2<f64>> {
    compose_input(x, z, k_z, config.sensitive_input)
}

/// Mini-batch training with the grad-norm balanced objective.
pub fn train(config: &TrainConfig, data: TrainData<'_>) -> Result<TrainOutcome> {
    config.validate()?;
    data.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let inputs = model_input(config, data.x, data.z, data.k_z)?;
    let mut model = MlpModel::init(inputs.ncols(), data.k_y, &config.architecture, &mut rng)?;
    let mut adam = AdamState::new(model.param_count(), config.adam);
    let loss_cfg = BalancedLossConfig::new(config.lambda, config.eps)?;
    let n = data.y.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut params = model.flat_params();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
            batches.pop();
        }
        let mut loss_sum = 0.0;
        let mut last = (0.0, Vec::new(), Vec::new());
        for (bi, rows) in batches.iter().enumerate() {
            let xb = inputs.select(NdAxis(0), rows);
            let yb: Vec<usize> = rows.iter().map(|&r| data.y[r]).collect();
            let zb: Vec<usize> = rows.iter().map(|&r| data.z[r]).collect();
            let trace = model.forward(xb.view())?;
            let (task, g_task) = cross_entropy(trace.logits(), &yb)?;
            let (cmi, g_cmi) = soft_cmi_loss(trace.logits(), &yb, &zb, data.k_y, data.k_z)?;
            let norms = feature_grad_norms(&model, &trace, g_task.view(), g_cmi.view())?;
            let obj = balanced_objective(task, cmi, norms, loss_cfg);
            if !task.is_finite() || !cmi.is_finite() || !obj.value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {bi}: task {task}, cmi {cmi}, norms {norms:?}"
                )));
            }
            let grads = model.backward(&trace, obj.combine(g_task.view(), g_cmi.view()).view())?;
            adam.step(&mut params, &grads)?;
            model.set_flat_params(&params)?;
            loss_sum += task;
            if bi + 1 == batches.len() {
                last = (cmi, rows.to_vec(), trace.logits().iter().copied().collect());
            }
        }
        epochs.push(EpochDiagnostics {
            epoch,
            task_loss: loss_sum / batches.len() as f64,
            cmi: last.0,
            final_batch_rows: last.1,
            final_batch_logits: last.2,
        });
    }
    Ok(TrainOutcome {
        model,
        adam,
        rng,
        epochs,
    })
}

/// Softmax posteriors of `model` on encoded rows.
pub fn predict_proba(model: &MlpModel, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(softmax(model.forward(inputs)?.logits()))
}

/// Fold index per row, stratified jointly on `(y, z)`.
///
/// Each cell is shuffled and dealt round-robin starting where the previous cell
/// stopped, so fold sizes stay within one of each other overall.
pub fn stratified_kfold(y: &[usize], z: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Domain("k must be at least 2".into()));
    }
    if y.len() != z.len() {
        return Err(Error::DimensionMismatch("y and z differ in length".into()));
    }
    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for i in 0..y.len() {
        cells.entry((y[i], z[i])).or_default().push(i);
    }
    if let Some(((cy, cz), rows)) = cells.iter().find(|(_, r)| r.len() < k) {
        return Err(Error::Precondition(format!(
            "cell (y={cy}, z={cz}) has {} rows, fewer than k = {k}",
            rows.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; y.len()];
    let mut start = 0;
    for rows in cells.values_mut() {
        rows.shuffle(&mut rng);
        for (j, &r) in rows.iter().enumerate() {
            folds[r] = (start + j) % k;
        }
        start = (start + rows.len()) % k;
    }
    Ok(folds)
}

/// Held-out metrics of one (λ, fold) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    /// Binned-score CMI, raw plug-in.
    pub test_cmi_raw: f64,
    /// Binned-score CMI after the Miller-Madow correction.
    pub test_cmi: f64,
    /// Plug-in `I(U;Y)` of the binned scores.
    pub test_mi: f64,
    pub test_soft_cmi: f64,
    /// CMI and MI of thresholded predictions.
    pub hard_cmi: f64,
    pub hard_mi: f64,
    pub accuracy: f64,
    pub auroc: Option<f64>,
    pub eo_gap: Option<f64>,
    pub eopp_gap: Option<f64>,
    pub threshold: Option<f64>,
    pub final_task_loss: f64,
    pub final_train_cmi: f64,
}

impl CellMetrics {
    /// `(name, value)` pairs in a fixed order, skipping absent metrics.
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![
            ("test_cmi", self.test_cmi),
            ("test_cmi_raw", self.test_cmi_raw),
            ("test_mi", self.test_mi),
            ("test_soft_cmi", self.test_soft_cmi),
            ("hard_cmi", self.hard_cmi),
            ("hard_mi", self.hard_mi),
            ("accuracy", self.accuracy),
        ];
        for (name, val) in [
            ("auroc", self.auroc),
            ("eo_gap", self.eo_gap),
            ("eopp_gap", self.eopp_gap),
            ("threshold", self.threshold),
        ] {
            if let Some(x) = val {
                v.push((name, x));
            }
        }
        v.push(("final_task_loss", self.final_task_loss));
        v.push(("final_train_cmi", self.final_train_cmi));
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub fold: usize,
    pub lambda_index: usize,
    pub lambda: f64,
    pub seed: u64,
    pub metrics: Option<CellMetrics>,
    pub error: Option<String>,
    /// `(task loss, final-batch CMI)` per epoch.
    pub curve: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub folds: usize,
    pub master_seed: u64,
    /// Quantile bins for test-time CMI of binary scores.
    pub bins: usize,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            master_seed: 0,
            bins: 10,
            jobs: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: Vec<f64>,
    pub options: SweepOptions,
    pub fold_seed: u64,
    pub cells: Vec<CellRecord>,
}

/// Seed of the cell at `(fold, lambda_index)`.
pub fn cell_seed(master: u64, fold: usize, lambda_index: usize) -> u64 {
    derive_seed(master, &[fold as u64, lambda_index as u64])
}

/// Seed of the fold assignment.
pub fn fold_seed(master: u64) -> u64 {
    derive_seed(master, &[u64::MAX])
}

/// Held-out metrics of `model` on one split; the threshold is tuned on its validation rows.
pub fn evaluate(
    config: &TrainConfig,
    model: &MlpModel,
    split: &FoldSplit,
    k_y: usize,
    k_z: usize,
    bins: usize,
) -> Result<CellMetrics> {
    let probs = |x: &Array2<f64>, z: &[usize]| -> Result<Array2<f64>> {
        predict_proba(model, model_input(config, x.view(), z, k_z)?.view())
    };
    let test_p = probs(&split.test.x, &split.test.z)?;
    let (ty, tz) = (&split.test.y, &split.test.z);
    let flat: Vec<f64> = test_p.iter().copied().collect();
    let eval = EvalBatch::from_posteriors(k_y, flat.clone(), ty.clone(), tz.clone(), k_y, k_z)?;
    let soft = soft_cmi(&SoftBatch::new(
        k_y,
        k_y,
        k_z,
        flat,
        ty.clone(),
        tz.clone(),
    )?)?;

    if k_y != 2 {
        let preds = eval.argmax();
        let hard = SampleBatch::new(k_y, k_y, k_z, preds.clone(), ty.clone(), tz.clone())?;
        return Ok(CellMetrics {
            test_cmi_raw: soft,
            test_cmi: soft,
            test_mi: plugin_mi_hard(k_y, k_y, &preds, ty)?,
            test_soft_cmi: soft,
            hard_cmi: plugin_cmi_hard(&hard),
            hard_mi: plugin_mi_hard(k_y, k_y, &preds, ty)?,
            accuracy: accuracy(&preds, ty)?,
            auroc: None,
            eo_gap: None,
            eopp_gap: None,
            threshold: None,
            final_task_loss: f64::NAN,
            final_train_cmi: f64::NAN,
        });
    }

    let scores = eval.positive_scores();
    let pc = posterior_cmi(&eval, bins)?;
    let (cuts, _) = quantile_cuts(&scores, bins);
    let binned: Vec<usize> = scores.iter().map(|&s| bin_index(&cuts, s)).collect();
    let test_mi = plugin_mi_hard(cuts.len() + 1, k_y, &binned, ty)?;

    let val_scores: Vec<f64> = probs(&split.val.x, &split.val.z)?.column(1).to_vec();
    let t = tune_threshold(&val_scores, &split.val.y, &split.val.z, config.lambda)?;
    let preds = threshold_predictions(&scores, t);
    let hard = SampleBatch::new(2, k_y, k_z, preds.clone(), ty.clone(), tz.clone())?;
    Ok(CellMetrics {
        test_cmi_raw: pc.raw,
        test_cmi: pc.corrected,
        test_mi,
        test_soft_cmi: soft,
        hard_cmi: plugin_cmi_hard(&hard),
        hard_mi: plugin_mi_hard(2, k_y, &preds, ty)?,
        accuracy: accuracy(&preds, ty)?,
        auroc: auroc(&scores, ty).ok(),
        eo_gap: Some(eo_gap(&preds, ty, tz)?.value),
        eopp_gap: eopp_gap(&preds, ty, tz).ok(),
        threshold: Some(t),
        final_task_loss: f64::NAN,
        final_train_cmi: f64::NAN,
    })
}

fn run_cell(
    template: &TrainConfig,
    split: &FoldSplit,
    ds: &TabularDataset,
    lambda: f64,
    seed: u64,
    bins: usize,
) -> Result<(CellMetrics, Vec<(f64, f64)>)> {
    let config = TrainConfig {
        lambda,
        seed,
        ..template.clone()
    };
    let data = TrainData {
        x: split.train.x.view(),
        y: &split.train.y,
        z: &split.train.z,
        k_y: ds.k_y(),
        k_z: ds.k_z(),
    };
    let out = train(&config, data)?;
    let mut m = evaluate(&config, &out.model, split, ds.k_y(), ds.k_z(), bins)?;
    let curve: Vec<(f64, f64)> = out.epochs.iter().map(|e| (e.task_loss, e.cmi)).collect();
    if let Some(&(loss, cmi)) = curve.last() {
        m.final_task_loss = loss;
        m.final_train_cmi = cmi;
    } else {
        m.final_task_loss = 0.0;
        m.final_train_cmi = 0.0;
    }
    Ok((m, curve))
}

/// Trains and evaluates every `(λ, fold)` cell. Cell failures are recorded, not raised.
pub fn sweep(
    template: &TrainConfig,
    grid: &[f64],
    ds: &TabularDataset,
    opts: SweepOptions,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::Empty("lambda grid is empty".into()));
    }
    if let Some(l) = grid.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::Domain(format!("lambda {l} outside [0, 1]")));
    }
    TrainConfig {
        lambda: 0.0,
        ..template.clone()
    }
    .validate()?;
    let fseed = fold_seed(opts.master_seed);
    let folds = stratified_kfold(ds.y(), ds.z(), opts.folds, fseed)?;
    let splits = encode_splits(ds, &folds, opts.folds)?;
    let jobs: Vec<(usize, usize)> = (0..opts.folds)
        .flat_map(|f| (0..grid.len()).map(move |l| (f, l)))
        .collect();
    let run = || {
        jobs.par_iter()
            .map(|&(fold, li)| {
                let seed = cell_seed(opts.master_seed, fold, li);
                let (metrics, error, curve) =
                    match run_cell(template, &splits[fold], ds, grid[li], seed, opts.bins) {
                        Ok((m, c)) => (Some(m), None, c),
                        Err(e) => (None, Some(e.to_string()), Vec::new()),
                    };
                CellRecord {
                    fold,
                    lambda_index: li,
                    lambda: grid[li],
                    seed,
                    metrics,
                    error,
                    curve,
                }
            })
            .collect::<Vec<_>>()
    };
    let cells = match opts.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::Precondition(e.to_string()))?
            .install(run),
        None => run(),
    };
    Ok(SweepResult {
        grid: grid.to_vec(),
        options: opts,
        fold_seed: fseed,
        cells,
    })
}

/// One line of the results CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub metric: String,
    pub value: f64,
    pub fold: usize,
    pub lambda: f64,
}

/// Mean and sample standard deviation of one metric at one λ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub lambda: f64,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl SweepResult {
    /// Rows ordered by λ, then fold, then metric.
    pub fn rows(&self) -> Vec<ResultRow> {
        let mut cells: Vec<&CellRecord> = self.cells.iter().collect();
        cells.sort_by_key(|c| (c.lambda_index, c.fold));
        cells
            .into_iter()
            .filter_map(|c| c.metrics.as_ref().map(|m| (c, m)))
            .flat_map(|(c, m)| {
                m.named().into_iter().map(move |(name, value)| ResultRow {
                    metric: name.to_owned(),
                    value,
                    fold: c.fold,
                    lambda: c.lambda,
                })
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows(&self.rows(), writer)
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.metrics.is_none()).count()
    }

    pub fn summaries(&self) -> Vec<Summary> {
        aggregate(&self.rows())
    }

    /// Per-λ means of `(test CMI, test MI)`.
    pub fn frontier_curve(&self) -> Vec<(f64, f64, f64)> {
        let s = self.summaries();
        let find = |l: f64, m: &str| {
            s.iter()
                .find(|r| r.lambda == l && r.metric == m)
                .map(|r| r.mean)
        };
        self.grid
            .iter()
            .filter_map(|&l| Some((l, find(l, "test_cmi")?, find(l, "test_mi")?)))
            .collect()
    }
}

pub fn write_rows<W: Write>(rows: &[ResultRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a results CSV with columns `metric,value,fold,lambda`.
pub fn read_rows<R: Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != ["metric", "value", "fold", "lambda"] {
        return Err(Error::Parse(format!(
            "expected header metric,value,fold,lambda, found {}",
            header.join(",")
        )));
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Parse(format!("row {}: {e}", i + 2))))
        .collect()
}

/// Groups rows by `(λ, metric)` in first-seen λ order and metric order.
pub fn aggregate(rows: &[ResultRow]) -> Vec<Summary> {
    let mut lambdas: Vec<f64> = Vec::new();
    let mut metrics: Vec<&str> = Vec::new();
    for r in rows {
        if !lambdas.contains(&r.lambda) {
            lambdas.push(r.lambda);
        }
        if !metrics.contains(&r.metric.as_str()) {
            metrics.push(&r.metric);
        }
    }
    let mut out = Vec::new();
    for &l in &lambdas {
        for &m in &metrics {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.lambda == l && r.metric == m)
                .map(|r| r.value)
                .collect();
            if vals.is_empty() {
                continue;
            }
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            out.push(Summary {
                lambda: l,
                metric: m.to_owned(),
                mean,
                sd,
                n,
            });
        }
    }
    out
}
