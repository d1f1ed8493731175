//! Deployment metrics: accuracy, AUROC, equalized-odds gaps, thresholds and
//! test-time conditional mutual information of scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    miller_madow_correct, plugin_cmi_hard, soft_cmi, BiasModel, SampleBatch, SoftBatch,
};

/// Posteriors with labels and groups; binary scores are stored as `(1 − s, s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalBatch {
    width: usize,
    probs: Vec<f64>,
    y: Vec<usize>,
    z: Vec<usize>,
    k_y: usize,
    k_z: usize,
}

impl EvalBatch {
    pub fn from_binary_scores(
        scores: &[f64],
        y: Vec<usize>,
        z: Vec<usize>,
        k_z: usize,
    ) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Domain(format!(
                "score {} at row {i} outside [0, 1]",
                scores[i]
            )));
        }
        let probs = scores.iter().flat_map(|&s| [1.0 - s, s]).collect();
        Self::from_posteriors(2, probs, y, z, 2, k_z)
    }

    pub fn from_posteriors(
        width: usize,
        probs: Vec<f64>,
        y: Vec<usize>,
        z: Vec<usize>,
        k_y: usize,
        k_z: usize,
    ) -> Result<Self> {
        // validates shape and simplex rows
        SoftBatch::new(width, k_y, k_z, probs.clone(), y.clone(), z.clone())?;
        Ok(Self {
            width,
            probs,
            y,
            z,
            k_y,
            k_z,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn posteriors(&self) -> &[f64] {
        &self.probs
    }

    /// `P(Y = 1 | x)` per sample for binary batches.
    pub fn positive_scores(&self) -> Vec<f64> {
        self.probs
            .chunks(self.width)
            .map(|r| r[1.min(self.width - 1)])
            .collect()
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn z(&self) -> &[usize] {
        &self.z
    }

    pub fn k_z(&self) -> usize {
        self.k_z
    }

    /// Most probable class per sample, lowest index on ties.
    pub fn argmax(&self) -> Vec<usize> {
        self.probs
            .chunks(self.width)
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold(0, |b, (j, &p)| if p > r[b] { j } else { b })
            })
            .collect()
    }
}

/// Confusion counts and rates of one group; a rate is `None` when its denominator is 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub z: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub tnr: Option<f64>,
}

fn check_binary(preds: &[usize], y: &[usize], z: &[usize]) -> Result<()> {
    if preds.len() != y.len() || y.len() != z.len() {
        return Err(Error::DimensionMismatch(
            "predictions, labels and groups differ in length".into(),
        ));
    }
    if preds.is_empty() {
        return Err(Error::Empty("no samples".into()));
    }
    if preds.iter().chain(y).any(|&v| v > 1) {
        return Err(Error::Domain(
            "binary labels and predictions expected".into(),
        ));
    }
    Ok(())
}

/// Rates for every group index up to the largest observed `z`.
pub fn group_rates(preds: &[usize], y: &[usize], z: &[usize]) -> Result<Vec<GroupRates>> {
    check_binary(preds, y, z)?;
    let k_z = z.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![[0usize; 4]; k_z];
    for i in 0..y.len() {
        // [tp, fp, tn, fn]
        let slot = match (y[i], preds[i]) {
            (1, 1) => 0,
            (0, 1) => 1,
            (0, 0) => 2,
            _ => 3,
        };
        counts[z[i]][slot] += 1;
    }
    let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
    Ok(counts
        .iter()
        .enumerate()
        .map(|(g, &[tp, fp, tn, fn_])| GroupRates {
            z: g,
            tp,
            fp,
            tn,
            fn_,
            tpr: ratio(tp, fn_),
            fpr: ratio(fp, tn),
            fnr: ratio(fn_, tp),
            tnr: ratio(tn, fp),
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EoGap {
    pub value: f64,
    /// Set when some group lacked a class and was left out of a rate range.
    pub warning: bool,
}

fn spread(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if hi >= lo {
        hi - lo
    } else {
        0.0
    }
}

/// `½[(max FPR − min FPR) + (max FNR − min FNR)]` over groups.
pub fn eo_gap(preds: &[usize], y: &[usize], z: &[usize]) -> Result<EoGap> {
    let rates: Vec<GroupRates> = group_rates(preds, y, z)?
        .into_iter()
        .filter(|r| r.tp + r.fp + r.tn + r.fn_ > 0)
        .collect();
    let warning = rates.iter().any(|r| r.fpr.is_none() || r.fnr.is_none());
    let fpr = spread(rates.iter().filter_map(|r| r.fpr));
    let fnr = spread(rates.iter().filter_map(|r| r.fnr));
    Ok(EoGap {
        value: 0.5 * (fpr + fnr),
        warning,
    })
}

/// Largest pairwise difference of true-positive rates.
pub fn eopp_gap(preds: &[usize], y: &[usize], z: &[usize]) -> Result<f64> {
    let tprs: Vec<f64> = group_rates(preds, y, z)?
        .iter()
        .filter_map(|r| r.tpr)
        .collect();
    if tprs.len() < 2 {
        return Err(Error::Precondition(
            "fewer than two groups have positive samples".into(),
        ));
    }
    Ok(spread(tprs.into_iter()))
}

pub fn accuracy(preds: &[usize], y: &[usize]) -> Result<f64> {
    if preds.len() != y.len() {
        return Err(Error::DimensionMismatch(
            "predictions and labels differ in length".into(),
        ));
    }
    if preds.is_empty() {
        return Err(Error::Empty("no samples".into()));
    }
    Ok(preds.iter().zip(y).filter(|(p, t)| p == t).count() as f64 / preds.len() as f64)
}

/// Mann-Whitney estimate of the area under the ROC curve, ties counted half.
pub fn auroc(scores: &[f64], y: &[usize]) -> Result<f64> {
    if scores.len() != y.len() {
        return Err(Error::DimensionMismatch(
            "scores and labels differ in length".into(),
        ));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::Domain("binary labels expected".into()));
    }
    let n1 = y.iter().filter(|&&v| v == 1).count();
    let n0 = y.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::Precondition("both classes must be present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| y[k] == 1).count() as f64;
        i = j + 1;
    }
    let n1f = n1 as f64;
    Ok((rank_sum - n1f * (n1f + 1.0) / 2.0) / (n1f * n0 as f64))
}

/// Hard labels `1{score ≥ t}`.
pub fn threshold_predictions(scores: &[f64], t: f64) -> Vec<usize> {
    scores.iter().map(|&s| usize::from(s >= t)).collect()
}

pub const THRESHOLD_STEPS: usize = 200;

/// `{0, 0.005, …, 1}`.
pub fn threshold_grid() -> Vec<f64> {
    (0..=THRESHOLD_STEPS)
        .map(|i| i as f64 / THRESHOLD_STEPS as f64)
        .collect()
}

/// Grid threshold maximizing `accuracy − weight · EO gap`, ties resolved toward 0.5.
pub fn tune_threshold(scores: &[f64], y: &[usize], z: &[usize], weight: f64) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for t in threshold_grid() {
        let preds = threshold_predictions(scores, t);
        let obj = accuracy(&preds, y)? - weight * eo_gap(&preds, y, z)?.value;
        let better = match best {
            None => true,
            Some((bt, bo)) => {
                let scale = 1e-12 * bo.abs().max(1.0);
                obj > bo + scale
                    || ((obj - bo).abs() <= scale && (t - 0.5).abs() < (bt - 0.5).abs())
            }
        };
        if better {
            best = Some((t, obj));
        }
    }
    Ok(best.expect("grid is nonempty").0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmiMethod {
    /// Quantile-binned binary scores, plug-in estimate.
    Binned,
    /// Soft plug-in estimate on full posteriors.
    Soft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorCmi {
    pub raw: f64,
    /// Miller-Madow corrected for binned scores; equal to `raw` for the soft estimate.
    pub corrected: f64,
    pub bins_used: usize,
    /// Set when tied quantiles collapsed some bins.
    pub merged: bool,
    pub method: CmiMethod,
}

/// Quantile cut points of `scores`; duplicates are merged.
pub fn quantile_cuts(scores: &[f64], bins: usize) -> (Vec<f64>, bool) {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut cuts: Vec<f64> = (1..bins)
        .map(|j| sorted[(j * n / bins).min(n - 1)])
        .collect();
    let before = cuts.len();
    cuts.dedup();
    // a cut at the minimum leaves its lower bin empty
    if cuts.first() == sorted.first() {
        cuts.remove(0);
    }
    let merged = cuts.len() < before;
    (cuts, merged)
}

/// Bin index: number of cut points not above the score.
pub fn bin_index(cuts: &[f64], s: f64) -> usize {
    cuts.partition_point(|&c| c <= s)
}

/// Test-time `I(U;Z|Y)` of a policy's scores.
pub fn posterior_cmi(batch: &EvalBatch, bins: usize) -> Result<PosteriorCmi> {
    if bins < 2 {
        return Err(Error::Domain("at least two bins are required".into()));
    }
    if batch.is_empty() {
        return Err(Error::Empty("no samples".into()));
    }
    if batch.width > 2 {
        let soft = SoftBatch::new(
            batch.width,
            batch.k_y,
            batch.k_z,
            batch.probs.clone(),
            batch.y.clone(),
            batch.z.clone(),
        )?;
        let raw = soft_cmi(&soft)?;
        return Ok(PosteriorCmi {
            raw,
            corrected: raw,
            bins_used: batch.width,
            merged: false,
            method: CmiMethod::Soft,
        });
    }
    let scores = batch.positive_scores();
    let (cuts, merged) = quantile_cuts(&scores, bins);
    let u: Vec<usize> = scores.iter().map(|&s| bin_index(&cuts, s)).collect();
    let k_u = cuts.len() + 1;
    let hard = SampleBatch::new(
        k_u,
        batch.k_y,
        batch.k_z,
        u,
        batch.y.clone(),
        batch.z.clone(),
    )?;
    let raw = plugin_cmi_hard(&hard);
    let corrected = miller_madow_correct(
        raw,
        &BiasModel::new(k_u, batch.k_y, batch.k_z, batch.len())?,
    );
    Ok(PosteriorCmi {
        raw,
        corrected,
        bins_used: k_u,
        merged,
        method: CmiMethod::Binned,
    })
}
