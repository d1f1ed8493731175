//! Covariance bounds: normalized covariances are dominated by `√(2·I)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finite_dist::{separation_violation, JointPmf2, JointPmf3};
use crate::seeding::derive_seed;

const ZERO_TOL: f64 = 1e-14;
const SHARD: usize = 1024;

fn centered(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let mean: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    values.iter().map(|v| v - mean).collect()
}

fn sup_on_support(values: &[f64], weights: &[f64]) -> f64 {
    values
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .fold(0.0, |m, (v, _)| m.max(v.abs()))
}

fn covariance(joint: &JointPmf2, h: &[f64], g: &[f64]) -> f64 {
    let mut c = 0.0;
    for a in 0..joint.card_a() {
        for b in 0..joint.card_b() {
            c += joint.p(a, b) * h[a] * g[b];
        }
    }
    c
}

fn check_lengths(joint: &JointPmf2, h: &[f64], g: &[f64]) -> Result<()> {
    if h.len() != joint.card_a() || g.len() != joint.card_b() {
        return Err(Error::DimensionMismatch(format!(
            "test functions of length {}/{} for a {}x{} law",
            h.len(),
            g.len(),
            joint.card_a(),
            joint.card_b()
        )));
    }
    Ok(())
}

/// `ρ(h, g) = |Cov(h(U), g(Z))| / (‖h − Eh‖_∞ ‖g − Eg‖_∞)`, sup-norms taken on the support.
pub fn normalized_covariance(joint: &JointPmf2, h: &[f64], g: &[f64]) -> Result<f64> {
    check_lengths(joint, h, g)?;
    let (pa, pb) = (joint.marginal_a(), joint.marginal_b());
    let hc = centered(h, &pa);
    let gc = centered(g, &pb);
    let (sh, sg) = (sup_on_support(&hc, &pa), sup_on_support(&gc, &pb));
    if sh <= ZERO_TOL || sg <= ZERO_TOL {
        return Err(Error::Domain(
            "test function is identically zero after centering".into(),
        ));
    }
    Ok(covariance(joint, &hc, &gc).abs() / (sh * sg))
}

/// `|Cov(h(U), g(Z))| / (‖h − Eh‖_2 ‖g − Eg‖_2)`, i.e. the absolute correlation.
pub fn l2_normalized_covariance(joint: &JointPmf2, h: &[f64], g: &[f64]) -> Result<f64> {
    check_lengths(joint, h, g)?;
    let (pa, pb) = (joint.marginal_a(), joint.marginal_b());
    let hc = centered(h, &pa);
    let gc = centered(g, &pb);
    let l2 = |v: &[f64], w: &[f64]| v.iter().zip(w).map(|(x, p)| p * x * x).sum::<f64>().sqrt();
    let (nh, ng) = (l2(&hc, &pa), l2(&gc, &pb));
    if nh <= ZERO_TOL || ng <= ZERO_TOL {
        return Err(Error::Domain(
            "test function is identically zero after centering".into(),
        ));
    }
    Ok(covariance(joint, &hc, &gc).abs() / (nh * ng))
}

/// Average conditional dependence of bounded test functions.
///
/// `h` is indexed `[y][u]` and `g` is indexed `[y][z]`; both are centered within
/// each `y` before use. The joint is the law of `(U, Y, Z)` with `U` on the first
/// axis. Returns `E_y|⟨h, g⟩_{L(·|y)}| / (‖h‖_∞ ‖g‖_∞)`, or 0 when either centered
/// function vanishes on the support.
pub fn conditional_dependence_ratio(joint: &JointPmf3, h: &[f64], g: &[f64]) -> Result<f64> {
    let [ku, ky, kz] = joint.card();
    if h.len() != ky * ku || g.len() != ky * kz {
        return Err(Error::DimensionMismatch(
            "test tables must be K_Y x K_U and K_Y x K_Z".into(),
        ));
    }
    let mut num = 0.0;
    let (mut sup_h, mut sup_g): (f64, f64) = (0.0, 0.0);
    for y in 0..ky {
        let mut slab = vec![0.0; ku * kz];
        for u in 0..ku {
            for z in 0..kz {
                slab[u * kz + z] = joint.p(u, y, z);
            }
        }
        let py: f64 = slab.iter().sum();
        if py <= 0.0 {
            continue;
        }
        slab.iter_mut().for_each(|p| *p /= py);
        let cond = JointPmf2::new(ku, kz, slab)?;
        let (pu, pz) = (cond.marginal_a(), cond.marginal_b());
        let hc = centered(&h[y * ku..(y + 1) * ku], &pu);
        let gc = centered(&g[y * kz..(y + 1) * kz], &pz);
        sup_h = sup_h.max(sup_on_support(&hc, &pu));
        sup_g = sup_g.max(sup_on_support(&gc, &pz));
        num += py * covariance(&cond, &hc, &gc).abs();
    }
    if sup_h <= ZERO_TOL || sup_g <= ZERO_TOL {
        return Ok(0.0);
    }
    Ok(num / (sup_h * sup_g))
}

/// Outcome of a Monte-Carlo bound check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckReport {
    pub max_ratio: f64,
    pub bound: f64,
    pub trials: usize,
    pub seed: u64,
}

impl BoundCheckReport {
    pub fn holds(&self) -> bool {
        self.max_ratio <= self.bound + 1e-12
    }
}

fn uniform_table(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

fn sharded_max(trials: usize, seed: u64, f: impl Fn(&mut ChaCha8Rng) -> f64 + Sync) -> f64 {
    let shards = trials.div_ceil(SHARD);
    (0..shards)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[s as u64]));
            let count = SHARD.min(trials - s * SHARD);
            (0..count).map(|_| f(&mut rng)).fold(0.0, f64::max)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max)
}

/// Samples `trials` pairs `(h, g)` uniform in `[−1, 1]` per category and reports the
/// largest [`normalized_covariance`] against `√(2·I(U;Z))`.
pub fn dependence_bound_check(joint: &JointPmf2, trials: usize, seed: u64) -> BoundCheckReport {
    let bound = (2.0 * crate::finite_dist::mutual_information(joint)).sqrt();
    let max_ratio = sharded_max(trials, seed, |rng| {
        let h = uniform_table(rng, joint.card_a());
        let g = uniform_table(rng, joint.card_b());
        normalized_covariance(joint, &h, &g).unwrap_or(0.0)
    });
    BoundCheckReport {
        max_ratio,
        bound,
        trials,
        seed,
    }
}

/// Per-`y` centered version of [`dependence_bound_check`], compared with `√(2·I(U;Z|Y))`.
pub fn conditional_dependence_bound_check(
    joint: &JointPmf3,
    trials: usize,
    seed: u64,
) -> BoundCheckReport {
    let [ku, ky, kz] = joint.card();
    let bound = (2.0 * separation_violation(joint)).sqrt();
    let max_ratio = sharded_max(trials, seed, |rng| {
        let h = uniform_table(rng, ky * ku);
        let g = uniform_table(rng, ky * kz);
        conditional_dependence_ratio(joint, &h, &g).unwrap_or(0.0)
    });
    BoundCheckReport {
        max_ratio,
        bound,
        trials,
        seed,
    }
}

/// Sampling-noise term `M_h M_g √(2 ln(6/δ) / n)` of the empirical covariance.
pub fn empirical_covariance_bound(n: usize, delta: f64, sup_h: f64, sup_g: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta = {delta} outside (0, 1)")));
    }
    if n == 0 {
        return Err(Error::Domain("sample size must be positive".into()));
    }
    Ok(sup_h * sup_g * (2.0 * (6.0 / delta).ln() / n as f64).sqrt())
}
