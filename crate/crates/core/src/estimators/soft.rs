use crate::error::{Error, Result};

/// Floor applied inside logarithms of cell means that are exactly zero.
const LN_FLOOR: f64 = 1e-300;

const SIMPLEX_TOL: f64 = 1e-9;

/// Per-sample posteriors `p_i ∈ Δ^K` with labels and groups.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftBatch {
    k: usize,
    k_y: usize,
    k_z: usize,
    probs: Vec<f64>,
    y: Vec<usize>,
    z: Vec<usize>,
}

impl SoftBatch {
    /// `probs` is row-major, `k` entries per sample.
    pub fn new(
        k: usize,
        k_y: usize,
        k_z: usize,
        probs: Vec<f64>,
        y: Vec<usize>,
        z: Vec<usize>,
    ) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Empty("soft batch has no rows".into()));
        }
        if k == 0 || probs.len() != k * y.len() || y.len() != z.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} probabilities for {} rows of width {k}",
                probs.len(),
                y.len()
            )));
        }
        for (i, row) in probs.chunks(k).enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidDistribution(format!(
                    "row {i} is not on the simplex (sum {s})"
                )));
            }
        }
        if let Some(v) = y.iter().find(|&&v| v >= k_y) {
            return Err(Error::DimensionMismatch(format!(
                "label {v} not below {k_y}"
            )));
        }
        if let Some(v) = z.iter().find(|&&v| v >= k_z) {
            return Err(Error::DimensionMismatch(format!(
                "group {v} not below {k_z}"
            )));
        }
        Ok(Self {
            k,
            k_y,
            k_z,
            probs,
            y,
            z,
        })
    }

    /// One-hot posteriors for hard predictions.
    pub fn one_hot(
        k: usize,
        k_y: usize,
        k_z: usize,
        u: &[usize],
        y: Vec<usize>,
        z: Vec<usize>,
    ) -> Result<Self> {
        let mut probs = vec![0.0; k * u.len()];
        for (i, &ui) in u.iter().enumerate() {
            if ui >= k {
                return Err(Error::DimensionMismatch(format!(
                    "prediction {ui} not below {k}"
                )));
            }
            probs[i * k + ui] = 1.0;
        }
        Self::new(k, k_y, k_z, probs, y, z)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn width(&self) -> usize {
        self.k
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn z(&self) -> &[usize] {
        &self.z
    }

    pub fn cards(&self) -> (usize, usize) {
        (self.k_y, self.k_z)
    }
}

/// Soft plug-in estimate of `I(U;Z|Y)`.
pub fn soft_cmi(batch: &SoftBatch) -> Result<f64> {
    Ok(soft_cmi_raw(
        &batch.probs,
        batch.k,
        &batch.y,
        &batch.z,
        batch.k_y,
        batch.k_z,
        None,
    ))
}

/// Soft plug-in estimate together with `∂Î/∂p_i`, row-major like the batch.
pub fn soft_cmi_with_grad(batch: &SoftBatch) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; batch.probs.len()];
    let v = soft_cmi_raw(
        &batch.probs,
        batch.k,
        &batch.y,
        &batch.z,
        batch.k_y,
        batch.k_z,
        Some(&mut grad),
    );
    Ok((v, grad))
}

/// Core of the soft estimator on unchecked slices.
///
/// With `q_yz` the mean posterior of cell `(y, z)` and `m_y` the mean posterior of
/// stratum `y`, the estimate is `Σ_{y,z} (n_yz/n) KL(q_yz ‖ m_y)` and its derivative
/// with respect to `p_ik` for `i` in cell `(y, z)` is `(ln q_yzk − ln m_yk) / n`.
/// Empty cells and strata carry no weight.
pub(crate) fn soft_cmi_raw(
    probs: &[f64],
    k: usize,
    y: &[usize],
    z: &[usize],
    k_y: usize,
    k_z: usize,
    grad: Option<&mut [f64]>,
) -> f64 {
    let n = y.len();
    let mut cell_n = vec![0usize; k_y * k_z];
    let mut cell_sum = vec![0.0; k_y * k_z * k];
    for i in 0..n {
        let c = y[i] * k_z + z[i];
        cell_n[c] += 1;
        let row = &probs[i * k..(i + 1) * k];
        for (s, p) in cell_sum[c * k..(c + 1) * k].iter_mut().zip(row) {
            *s += p;
        }
    }

    // log q per cell, log m per stratum
    let mut log_q = vec![0.0; k_y * k_z * k];
    let mut log_m = vec![0.0; k_y * k];
    let mut value = 0.0;
    let nf = n as f64;
    for yi in 0..k_y {
        let ny: usize = cell_n[yi * k_z..(yi + 1) * k_z].iter().sum();
        if ny == 0 {
            continue;
        }
        for kk in 0..k {
            let s: f64 = (0..k_z).map(|zi| cell_sum[(yi * k_z + zi) * k + kk]).sum();
            log_m[yi * k + kk] = (s / ny as f64).max(LN_FLOOR).ln();
        }
        for zi in 0..k_z {
            let c = yi * k_z + zi;
            let nc = cell_n[c];
            if nc == 0 {
                continue;
            }
            let mut kl = 0.0;
            for kk in 0..k {
                let q = cell_sum[c * k + kk] / nc as f64;
                let lq = q.max(LN_FLOOR).ln();
                log_q[c * k + kk] = lq;
                if q > 0.0 {
                    kl += q * (lq - log_m[yi * k + kk]);
                }
            }
            value += nc as f64 / nf * kl;
        }
    }

    if let Some(g) = grad {
        for i in 0..n {
            let c = y[i] * k_z + z[i];
            for kk in 0..k {
                g[i * k + kk] = (log_q[c * k + kk] - log_m[y[i] * k + kk]) / nf;
            }
        }
    }
    value.max(0.0)
}
