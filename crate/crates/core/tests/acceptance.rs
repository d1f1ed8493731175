//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --test acceptance`; pass criterion numbers after `--` to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sepfront::data::{generate_synthetic, SyntheticSpec};
use sepfront::estimators::{
    concentration_bound, conditional_dependence_bound_check, dependence_bound_check,
    l2_normalized_covariance, normalized_covariance, plugin_cmi_hard, ConcentrationParams,
    SampleBatch,
};
use sepfront::finite_dist::{
    check_conditional_independence, conditional_mutual_information, fixtures, plane_point, CiKind,
    CmiRoles, JointPmf2, JointPmf3, PredictorTable, RandomizedPredictor,
};
use sepfront::frontier::{
    budget_check, det_frontier, enumerate_deterministic_set, linear_grid, necessity_analysis,
    table_count, upper_concave_envelope, FAIR_TOL,
};
use sepfront::metrics::{auroc, eo_gap, eopp_gap};
use sepfront::neural::{cross_entropy, soft_cmi_loss, Activation, Architecture, MlpModel};
use sepfront::trainer::{sweep, SweepOptions, SweepResult, TrainConfig};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

/// Information quantities recomputed from scratch on dense `(a, y, z)` tables.
mod oracle {
    use std::collections::BTreeMap;

    #[derive(Clone, Debug)]
    pub struct Table {
        pub k: [usize; 3],
        pub p: Vec<f64>,
    }

    impl Table {
        pub fn at(&self, a: usize, y: usize, z: usize) -> f64 {
            self.p[(a * self.k[1] + y) * self.k[2] + z]
        }

        /// Entropy of the coordinates flagged in `keep`.
        pub fn h(&self, keep: [bool; 3]) -> f64 {
            let mut m: BTreeMap<[usize; 3], f64> = BTreeMap::new();
            for a in 0..self.k[0] {
                for y in 0..self.k[1] {
                    for z in 0..self.k[2] {
                        let key = [
                            a * keep[0] as usize,
                            y * keep[1] as usize,
                            z * keep[2] as usize,
                        ];
                        *m.entry(key).or_insert(0.0) += self.at(a, y, z);
                    }
                }
            }
            m.values().filter(|&&q| q > 0.0).map(|&q| -q * q.ln()).sum()
        }

        /// `I(A;Y)`.
        pub fn mi_ay(&self) -> f64 {
            self.h([true, false, false]) + self.h([false, true, false])
                - self.h([true, true, false])
        }

        /// `I(A;Z|Y)`.
        pub fn cmi_az_y(&self) -> f64 {
            self.h([true, true, false]) + self.h([false, true, true])
                - self.h([true, true, true])
                - self.h([false, true, false])
        }

        /// `I(A;(Y,Z))`.
        pub fn mi_a_yz(&self) -> f64 {
            self.h([true, false, false]) + self.h([false, true, true]) - self.h([true, true, true])
        }

        /// `I((A,Z);Y) + H(Z|Y)`.
        pub fn budget(&self) -> f64 {
            let i = self.h([true, false, true]) + self.h([false, true, false])
                - self.h([true, true, true]);
            i + self.h([false, true, true]) - self.h([false, true, false])
        }

        /// `max |p(a,y,z) p(y) − p(a,y) p(y,z)|`.
        pub fn factorization_residual(&self) -> f64 {
            let [ka, ky, kz] = self.k;
            let mut worst: f64 = 0.0;
            for y in 0..ky {
                let py: f64 = (0..ka)
                    .flat_map(|a| (0..kz).map(move |z| (a, z)))
                    .map(|(a, z)| self.at(a, y, z))
                    .sum();
                for a in 0..ka {
                    let pay: f64 = (0..kz).map(|z| self.at(a, y, z)).sum();
                    for z in 0..kz {
                        let pyz: f64 = (0..ka).map(|b| self.at(b, y, z)).sum();
                        worst = worst.max((self.at(a, y, z) * py - pay * pyz).abs());
                    }
                }
            }
            worst
        }
    }

    /// Law of `(U, Y, Z)` for `U` drawn from `channel(x, z)` as `(u, weight)` pairs.
    pub fn pushforward(
        joint: &Table,
        k_u: usize,
        channel: impl Fn(usize, usize) -> Vec<(usize, f64)>,
    ) -> Table {
        let [kx, ky, kz] = joint.k;
        let mut p = vec![0.0; k_u * ky * kz];
        for x in 0..kx {
            for z in 0..kz {
                for (u, w) in channel(x, z) {
                    for y in 0..ky {
                        p[(u * ky + y) * kz + z] += w * joint.at(x, y, z);
                    }
                }
            }
        }
        Table {
            k: [k_u, ky, kz],
            p,
        }
    }

    pub fn binary_entropy(p: f64) -> f64 {
        -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
    }

    /// Average ranks, ties sharing their mean rank.
    pub fn midranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0 + 1.0;
            }
            i = j + 1;
        }
        r
    }

    pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let (ra, rb) = (midranks(a), midranks(b));
        let n = ra.len() as f64;
        let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
        let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    pub fn group_counts(preds: &[usize], y: &[usize], z: &[usize]) -> BTreeMap<usize, [usize; 4]> {
        let mut m: BTreeMap<usize, [usize; 4]> = BTreeMap::new();
        for i in 0..y.len() {
            let e = m.entry(z[i]).or_insert([0; 4]);
            match (y[i], preds[i]) {
                (1, 1) => e[0] += 1,
                (0, 1) => e[1] += 1,
                (0, 0) => e[2] += 1,
                _ => e[3] += 1,
            }
        }
        m
    }
}

use oracle::Table;

fn table_of(j: &JointPmf3) -> Table {
    Table {
        k: j.card(),
        p: j.probs().to_vec(),
    }
}

fn random_joint(rng: &mut ChaCha8Rng, card: [usize; 3]) -> JointPmf3 {
    loop {
        let w: Vec<f64> = (0..card.iter().product::<usize>())
            .map(|_| {
                if rng.random::<f64>() < 0.1 {
                    0.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            return JointPmf3::new(card, w.iter().map(|v| v / total).collect()).unwrap();
        }
    }
}

fn deterministic(joint: &Table, f: &PredictorTable) -> Table {
    oracle::pushforward(joint, f.card_out(), |x, z| vec![(f.get(x, z), 1.0)])
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut checked, mut worst_identity, mut worst_excess, mut worst_oracle_gap) =
        (0usize, 0.0f64, f64::NEG_INFINITY, 0.0f64);
    for card in [[2, 2, 2], [3, 2, 2]] {
        for _ in 0..100 {
            let joint = random_joint(&mut rng, card);
            let t = table_of(&joint);
            let budget = t.budget();
            let points = enumerate_deterministic_set(&joint, 2).map_err(|e| e.to_string())?;
            let tables = table_count(2, card[0] * card[2]).map_err(|e| e.to_string())?;
            ensure!(
                points.len() as u64 == tables,
                "enumeration returned {} of {tables} tables",
                points.len()
            );
            for idx in 0..tables {
                let f = PredictorTable::from_index(card[0], card[2], 2, idx);
                let lib = budget_check(&joint, &f).map_err(|e| e.to_string())?;
                let o = deterministic(&t, &f);
                let (u, v, total) = (o.mi_ay(), o.cmi_az_y(), o.mi_a_yz());
                worst_identity = worst_identity
                    .max((lib.u + lib.v - lib.total_information).abs())
                    .max((u + v - total).abs());
                worst_excess = worst_excess
                    .max(lib.u + lib.v - lib.budget)
                    .max(u + v - budget);
                worst_oracle_gap = worst_oracle_gap
                    .max((lib.u - u).abs())
                    .max((lib.v - v).abs())
                    .max((points[idx as usize].u - u).abs())
                    .max((points[idx as usize].v - v).abs());
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure!(worst_identity <= 1e-12, "identity error {worst_identity:e}");
    ensure!(worst_excess <= 1e-12, "budget exceeded by {worst_excess:e}");
    ensure!(
        worst_oracle_gap <= 1e-12,
        "library and oracle differ by {worst_oracle_gap:e}"
    );
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "{checked} predictors on 200 joints, max |u+v-I| = {worst_identity:.1e}, max excess over budget = {worst_excess:.3e}, {elapsed:.2?}"
    ))
}

/// Mixture plane point with the selector bit kept in the output.
fn mixture_point(t: &Table, f0: &PredictorTable, f1: &PredictorTable, mix: f64) -> (f64, f64) {
    let k = f0.card_out();
    let o = oracle::pushforward(t, 2 * k, |x, z| {
        vec![(f0.get(x, z), 1.0 - mix), (k + f1.get(x, z), mix)]
    });
    (o.cmi_az_y(), o.mi_ay())
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst_excess, mut worst_lib_gap, mut worst_slope_rise) =
        (f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for j in 0..50 {
        let card = if j % 5 == 4 { [3, 2, 2] } else { [2, 2, 2] };
        let joint = random_joint(&mut rng, card);
        let t = table_of(&joint);
        let points = enumerate_deterministic_set(&joint, 2).map_err(|e| e.to_string())?;
        let env = upper_concave_envelope(&points).map_err(|e| e.to_string())?;
        for s in env.slopes().windows(2) {
            worst_slope_rise = worst_slope_rise.max(s[1] - s[0]);
        }
        let n = points.len() as u64;
        for _ in 0..1000 {
            let f0 = PredictorTable::from_index(card[0], card[2], 2, rng.random_range(0..n));
            let f1 = PredictorTable::from_index(card[0], card[2], 2, rng.random_range(0..n));
            let mix = rng.random::<f64>();
            let (v, u) = mixture_point(&t, &f0, &f1, mix);
            // entropy differences can land a few ulps below zero
            let v = v.max(0.0);
            let rp = RandomizedPredictor::new(f0, f1, mix).map_err(|e| e.to_string())?;
            let (lv, lu) = plane_point(&joint, &rp).map_err(|e| e.to_string())?;
            worst_lib_gap = worst_lib_gap.max((lv - v).abs()).max((lu - u).abs());
            let cap = env
                .eval(v)
                .ok_or_else(|| format!("mixture at v = {v} left of the envelope"))?;
            worst_excess = worst_excess.max(u - cap);
        }
    }
    let elapsed = start.elapsed();
    ensure!(
        worst_excess <= 1e-9,
        "a mixture sits {worst_excess:e} above the envelope"
    );
    ensure!(
        worst_slope_rise <= 0.0,
        "envelope slope rises by {worst_slope_rise:e}"
    );
    ensure!(
        worst_lib_gap <= 1e-12,
        "library mixture point differs from oracle by {worst_lib_gap:e}"
    );
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "50 000 mixtures, max height above envelope = {worst_excess:.2e}, max slope increase = {worst_slope_rise:.2e}, {elapsed:.2?}"
    ))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut instances = vec![
        fixtures::necessity(),
        fixtures::independence(),
        fixtures::y_equals_z(),
        fixtures::noisy_channels(0.25, 0.1),
    ];
    for j in 0..100 {
        instances.push(random_joint(
            &mut rng,
            if j % 2 == 0 { [2, 2, 2] } else { [3, 2, 2] },
        ));
    }
    instances.push(random_joint(&mut rng, [2, 3, 2]));
    let mut evaluations = 0usize;
    for joint in &instances {
        let points = enumerate_deterministic_set(joint, 2).map_err(|e| e.to_string())?;
        let v_max = points.iter().map(|p| p.v).fold(0.0, f64::max);
        let mut grid = linear_grid(v_max, 201);
        grid.extend(points.iter().map(|p| p.v));
        grid.sort_by(f64::total_cmp);
        let curve = det_frontier(&points, &grid);
        let mut prev: Option<f64> = None;
        for &(v, u) in &curve {
            let brute = points
                .iter()
                .filter(|p| p.v <= v)
                .map(|p| p.u)
                .reduce(f64::max);
            ensure!(u == brute, "U*_det({v}) = {u:?}, brute force {brute:?}");
            if let Some(p) = prev {
                let u = u.ok_or_else(|| format!("U*_det undefined at {v} after being defined"))?;
                ensure!(u >= p, "U*_det decreases at v = {v}: {p} -> {u}");
            }
            prev = u.or(prev);
            evaluations += 1;
        }
    }
    Ok(format!(
        "{} instances, {evaluations} grid evaluations, non-decreasing and equal to brute force",
        instances.len()
    ))
}

fn criterion_4() -> Outcome {
    let joint = fixtures::necessity();
    let r = necessity_analysis(&joint, 2).map_err(|e| e.to_string())?;
    let oracle_ux = std::f64::consts::LN_2 - oracle::binary_entropy(0.25);
    ensure!(
        (r.max_fair_utility - oracle_ux).abs() <= 1e-9,
        "max fair utility {} vs oracle {oracle_ux}",
        r.max_fair_utility
    );
    ensure!(
        (r.u_x_star - oracle_ux).abs() <= 1e-9,
        "u_X* {} vs oracle {oracle_ux}",
        r.u_x_star
    );
    ensure!(
        (r.max_fair_utility - 0.130812).abs() <= 5e-7,
        "max fair utility {} vs printed 0.130812",
        r.max_fair_utility
    );
    ensure!(r.exceeding_count >= 1, "no predictor beats u_X*");
    let min_v = r.min_violation_beyond_x_star.unwrap_or(0.0);
    ensure!(
        min_v > FAIR_TOL,
        "a predictor beyond u_X* has v = {min_v:e}"
    );
    ensure!(
        r.fairness_limit_holds == Some(true) && r.strict_tradeoff_holds == Some(true),
        "checker verdicts {:?}/{:?}",
        r.fairness_limit_holds,
        r.strict_tradeoff_holds
    );

    // independent enumeration of all 16 tables
    let t = table_of(&joint);
    let (mut best_fair, mut beyond_min_v, mut beyond) = (f64::NEG_INFINITY, f64::INFINITY, 0);
    for idx in 0..16 {
        let o = deterministic(&t, &PredictorTable::from_index(2, 2, 2, idx));
        let (u, v) = (o.mi_ay(), o.cmi_az_y());
        if v <= FAIR_TOL {
            best_fair = best_fair.max(u);
        }
        if u > oracle_ux + 1e-9 {
            beyond += 1;
            beyond_min_v = beyond_min_v.min(v);
        }
    }
    ensure!(
        (best_fair - oracle_ux).abs() <= 1e-9,
        "oracle enumeration: best fair utility {best_fair}"
    );
    ensure!(
        beyond == r.exceeding_count,
        "oracle finds {beyond} predictors beyond u_X*, library {}",
        r.exceeding_count
    );

    let degenerate = necessity_analysis(&fixtures::y_equals_z(), 2).map_err(|e| e.to_string())?;
    ensure!(
        !degenerate.assumptions_hold(),
        "Y=Z fixture passes the assumption check"
    );
    ensure!(
        degenerate.fairness_limit_holds.is_none() && degenerate.strict_tradeoff_holds.is_none(),
        "Y=Z fixture still asserts the claims"
    );
    Ok(format!(
        "max fair utility = {:.9} (oracle {oracle_ux:.9}), {} predictors beyond u_X*, min v among them = {min_v:.4}; Y=Z flagged (overlap = {})",
        r.max_fair_utility, r.exceeding_count, degenerate.z_overlaps_y
    ))
}

fn factorized(rng: &mut ChaCha8Rng, card: [usize; 3], empty_y: Option<usize>) -> JointPmf3 {
    let [kx, ky, kz] = card;
    let py: Vec<f64> = (0..ky)
        .map(|y| {
            if Some(y) == empty_y {
                0.0
            } else {
                rng.random::<f64>() + 0.05
            }
        })
        .collect();
    let px: Vec<f64> = (0..kx * ky).map(|_| rng.random::<f64>() + 0.01).collect();
    let pz: Vec<f64> = (0..kz * ky).map(|_| rng.random::<f64>() + 0.01).collect();
    JointPmf3::from_weights(card, |x, y, z| {
        let sx: f64 = (0..kx).map(|a| px[a * ky + y]).sum();
        let sz: f64 = (0..kz).map(|c| pz[c * ky + y]).sum();
        py[y] * px[x * ky + y] / sx * pz[z * ky + y] / sz
    })
    .unwrap()
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut cases: Vec<(JointPmf3, bool)> = Vec::new();
    let shapes = [[2, 2, 2], [3, 2, 2], [2, 3, 3], [4, 2, 3]];
    for i in 0..40 {
        let card = shapes[i % shapes.len()];
        cases.push((factorized(&mut rng, card, (i % 5 == 0).then_some(1)), true));
        cases.push((random_joint(&mut rng, card), false));
        // small perturbation of a factorized law
        let base = factorized(&mut rng, card, None);
        let eps = 1e-3;
        let pert = JointPmf3::from_weights(card, |x, y, z| {
            base.p(x, y, z) * (1.0 + eps * if (x + z) % 2 == 0 { 1.0 } else { -1.0 })
        })
        .unwrap();
        cases.push((pert, false));
    }
    // X = Y = Z: everything is fixed given Y
    cases.push((
        JointPmf3::from_weights(
            [2, 2, 2],
            |x, y, z| if x == y && y == z { 0.5 } else { 0.0 },
        )
        .unwrap(),
        true,
    ));
    cases.push((fixtures::necessity(), true));
    cases.push((fixtures::y_equals_z(), true));
    cases.push((fixtures::independence(), true));

    let (mut zero_side, mut positive_side, mut min_positive) = (0, 0, f64::INFINITY);
    for (i, (joint, expect_ci)) in cases.iter().enumerate() {
        let cmi = conditional_mutual_information(joint, CmiRoles::SEPARATION)
            .map_err(|e| e.to_string())?;
        let residual = table_of(joint).factorization_residual();
        let factorizes = residual <= 1e-12;
        let library_ci = check_conditional_independence(joint, CiKind::XZGivenY).holds;
        ensure!(
            factorizes == *expect_ci,
            "case {i}: construction expected factorization {expect_ci}, residual {residual:e}"
        );
        ensure!(
            (cmi <= 1e-12) == factorizes,
            "case {i}: CMI {cmi:e} but factorization residual {residual:e}"
        );
        ensure!(
            library_ci == factorizes,
            "case {i}: library CI check {library_ci}, residual {residual:e}"
        );
        if factorizes {
            zero_side += 1;
        } else {
            positive_side += 1;
            min_positive = min_positive.min(cmi);
        }
    }
    Ok(format!("{zero_side} factorizing joints with CMI <= 1e-12, {positive_side} others with CMI >= {min_positive:.2e}"))
}

fn oracle_sup_ratio(j: &JointPmf2, h: &[f64], g: &[f64]) -> Option<f64> {
    let (ka, kb) = (j.card_a(), j.card_b());
    let pa: Vec<f64> = (0..ka).map(|a| (0..kb).map(|b| j.p(a, b)).sum()).collect();
    let pb: Vec<f64> = (0..kb).map(|b| (0..ka).map(|a| j.p(a, b)).sum()).collect();
    let eh: f64 = (0..ka).map(|a| pa[a] * h[a]).sum();
    let eg: f64 = (0..kb).map(|b| pb[b] * g[b]).sum();
    let sh = (0..ka)
        .filter(|&a| pa[a] > 0.0)
        .map(|a| (h[a] - eh).abs())
        .fold(0.0, f64::max);
    let sg = (0..kb)
        .filter(|&b| pb[b] > 0.0)
        .map(|b| (g[b] - eg).abs())
        .fold(0.0, f64::max);
    if sh < 1e-14 || sg < 1e-14 {
        return None;
    }
    let mut cov = 0.0;
    for a in 0..ka {
        for b in 0..kb {
            cov += j.p(a, b) * (h[a] - eh) * (g[b] - eg);
        }
    }
    Some(cov.abs() / (sh * sg))
}

fn oracle_mi2(j: &JointPmf2) -> f64 {
    let t = Table {
        k: [j.card_a(), j.card_b(), 1],
        p: j.probs().to_vec(),
    };
    t.mi_ay()
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let trials = 10_000;
    let mut pairs: Vec<JointPmf2> = Vec::new();
    for (ka, kb) in [(2, 2), (3, 3), (2, 4), (4, 3), (5, 2)] {
        let w: Vec<f64> = (0..ka * kb).map(|_| rng.random::<f64>()).collect();
        let s: f64 = w.iter().sum();
        pairs.push(JointPmf2::new(ka, kb, w.iter().map(|v| v / s).collect()).unwrap());
    }
    pairs.push(JointPmf2::new(2, 2, vec![0.25; 4]).unwrap());
    pairs.push(JointPmf2::new(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap());

    let mut worst_margin = f64::NEG_INFINITY;
    for (i, j) in pairs.iter().enumerate() {
        let bound = (2.0 * oracle_mi2(j)).sqrt();
        let lib = dependence_bound_check(j, trials, 6000 + i as u64);
        ensure!(
            lib.holds(),
            "fixture {i}: library ratio {} above bound {}",
            lib.max_ratio,
            lib.bound
        );
        ensure!(
            (lib.bound - bound).abs() <= 1e-12,
            "fixture {i}: library bound {} vs oracle {bound}",
            lib.bound
        );
        for _ in 0..trials {
            let h: Vec<f64> = (0..j.card_a())
                .map(|_| rng.random_range(-1.0..=1.0))
                .collect();
            let g: Vec<f64> = (0..j.card_b())
                .map(|_| rng.random_range(-1.0..=1.0))
                .collect();
            if let Some(r) = oracle_sup_ratio(j, &h, &g) {
                worst_margin = worst_margin.max(r - bound);
                let lib_r = normalized_covariance(j, &h, &g).map_err(|e| e.to_string())?;
                ensure!(
                    (lib_r - r).abs() <= 1e-12,
                    "normalized covariance {lib_r} vs oracle {r}"
                );
            }
        }
        worst_margin = worst_margin.max(lib.max_ratio - lib.bound);
    }
    ensure!(
        worst_margin <= 1e-12,
        "a ratio exceeds sqrt(2 I) by {worst_margin:e}"
    );

    let mut worst_cond = f64::NEG_INFINITY;
    let mut conditional: Vec<JointPmf3> = (0..6)
        .map(|i| random_joint(&mut rng, [[2, 2, 2], [3, 2, 2], [2, 3, 3]][i % 3]))
        .collect();
    conditional.push(fixtures::necessity());
    for (i, j) in conditional.iter().enumerate() {
        let r = conditional_dependence_bound_check(j, trials, 6100 + i as u64);
        let bound = (2.0 * table_of(j).cmi_az_y().max(0.0)).sqrt();
        ensure!(
            (r.bound - bound).abs() <= 1e-12,
            "conditional fixture {i}: bound {} vs oracle {bound}",
            r.bound
        );
        ensure!(
            r.holds(),
            "conditional fixture {i}: ratio {} above {}",
            r.max_ratio,
            r.bound
        );
        worst_cond = worst_cond.max(r.max_ratio - r.bound);
    }

    // correlation counter-example with P(Y = 0) = 0.01 and Z = Y
    let eps: f64 = 0.01;
    let b3 = JointPmf2::new(2, 2, vec![eps, 0.0, 0.0, 1.0 - eps]).unwrap();
    let s = (eps * (1.0 - eps)).sqrt();
    let f = [(1.0 - eps) / s, -eps / s];
    let i_yz = oracle_mi2(&b3);
    ensure!(
        (i_yz - oracle::binary_entropy(eps)).abs() <= 1e-15,
        "I(Y;Z) = {i_yz}"
    );
    let corr = l2_normalized_covariance(&b3, &f, &f).map_err(|e| e.to_string())?;
    let cov: f64 = (0..2).map(|a| b3.p(a, a) * f[a] * f[a]).sum();
    let bound = (2.0 * i_yz).sqrt();
    ensure!(
        (corr - 1.0).abs() <= 1e-12 && (cov - 1.0).abs() <= 1e-12,
        "L2 correlation {corr}, covariance {cov}"
    );
    ensure!(
        corr > bound,
        "L2 correlation {corr} does not exceed sqrt(2I) = {bound}"
    );
    let sup_ratio = normalized_covariance(&b3, &f, &f).map_err(|e| e.to_string())?;
    ensure!(
        sup_ratio <= bound,
        "sup-normalized ratio {sup_ratio} above {bound}"
    );
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "7 + 7 fixtures x 1e4 pairs, max ratio - bound = {worst_margin:.3e} (conditional {worst_cond:.3e}); correlation example: L2 corr = {corr:.6} > sqrt(2I) = {bound:.4}, sup ratio = {sup_ratio:.4}; {elapsed:.2?}"
    ))
}

fn sample_uniform_batch(rng: &mut ChaCha8Rng, n: usize) -> SampleBatch {
    let mut draw = || {
        (0..n)
            .map(|_| rng.random_range(0..2usize))
            .collect::<Vec<_>>()
    };
    let (u, y, z) = (draw(), draw(), draw());
    SampleBatch::new(2, 2, 2, u, y, z).unwrap()
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let sizes = [50usize, 100, 200, 400];
    let batches = 2000;
    let mut means = Vec::new();
    for &n in &sizes {
        let total: f64 = (0..batches)
            .map(|_| plugin_cmi_hard(&sample_uniform_batch(&mut rng, n)))
            .sum();
        means.push(total / batches as f64);
    }
    // K_Y (K_U − 1)(K_Z − 1) / 2 = 1
    let xs: Vec<f64> = sizes.iter().map(|&n| 1.0 / n as f64).collect();
    let slope = xs.iter().zip(&means).map(|(x, m)| x * m).sum::<f64>()
        / xs.iter().map(|x| x * x).sum::<f64>();
    let elapsed = start.elapsed();
    let detail: Vec<String> = sizes
        .iter()
        .zip(&means)
        .map(|(n, m)| format!("|B|={n}: {:.3}/|B|", m * *n as f64))
        .collect();
    ensure!(
        (slope - 1.0).abs() <= 0.2,
        "fitted slope {slope:.3}; {}",
        detail.join(", ")
    );
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!(
        "slope {slope:.3} ({}), {elapsed:.2?}",
        detail.join(", ")
    ))
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    // (U, Y, Z) law with U ⊥ Z | Y and uneven cells
    let joint = fixtures::noisy_channels(0.2, 0.3);
    let [ku, ky, kz] = joint.card();
    let t = table_of(&joint);
    let p_min = (0..ky)
        .map(|y| {
            (0..ku)
                .flat_map(|u| (0..kz).map(move |z| (u, z)))
                .map(|(u, z)| t.at(u, y, z))
                .sum::<f64>()
        })
        .fold(1.0, f64::min);
    let mut q_min: f64 = 1.0;
    for y in 0..ky {
        let py: f64 = (0..ku)
            .flat_map(|u| (0..kz).map(move |z| (u, z)))
            .map(|(u, z)| t.at(u, y, z))
            .sum();
        for u in 0..ku {
            for z in 0..kz {
                q_min = q_min.min(t.at(u, y, z) / py);
            }
        }
    }
    let n = 10_000;
    let delta = 0.05;
    let bound = concentration_bound(&ConcentrationParams {
        k_u: ku,
        k_y: ky,
        k_z: kz,
        p_min,
        q_min,
        delta,
        batch_size: n,
    })
    .map_err(|e| e.to_string())?;
    let cells = WeightedIndex::new(joint.probs()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let trials = 2000;
    let estimates: Vec<f64> = (0..trials)
        .map(|_| {
            let (mut u, mut y, mut z) = (
                Vec::with_capacity(n),
                Vec::with_capacity(n),
                Vec::with_capacity(n),
            );
            for _ in 0..n {
                let c = cells.sample(&mut rng);
                u.push(c / (ky * kz));
                y.push((c / kz) % ky);
                z.push(c % kz);
            }
            plugin_cmi_hard(&SampleBatch::new(ku, ky, kz, u, y, z).unwrap())
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / trials as f64;
    let max_dev = estimates
        .iter()
        .map(|e| (e - mean).abs())
        .fold(0.0, f64::max);
    let violations = estimates
        .iter()
        .filter(|e| (*e - mean).abs() > bound)
        .count();
    let rate = violations as f64 / trials as f64;
    ensure!(rate <= 0.05, "violation rate {rate} above 5%");
    Ok(format!(
        "bound {bound:.4}, max deviation {max_dev:.2e}, violations {violations}/{trials}, {:.2?}",
        start.elapsed()
    ))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}

fn central_difference(x: &Array2<f64>, h: f64, f: impl Fn(&Array2<f64>) -> f64) -> Vec<f64> {
    let mut g = Vec::with_capacity(x.len());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[r, c]];
        probe[[r, c]] = orig + h;
        let up = f(&probe);
        probe[[r, c]] = orig - h;
        let down = f(&probe);
        probe[[r, c]] = orig;
        g.push((up - down) / (2.0 * h));
    }
    g
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let (mut worst_ce, mut worst_cmi, mut worst_param) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let n = rng.random_range(6..14);
        let k = rng.random_range(2..5);
        let (k_y, k_z) = (rng.random_range(2..4), rng.random_range(2..4));
        let logits = Array2::from_shape_fn((n, k), |_| rng.random_range(-2.0..2.0));
        let y: Vec<usize> = (0..n)
            .map(|i| if i < k_y { i } else { rng.random_range(0..k_y) })
            .collect();
        let z: Vec<usize> = (0..n).map(|_| rng.random_range(0..k_z)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();

        let (_, g_ce) = cross_entropy(logits.view(), &labels).map_err(|e| e.to_string())?;
        let fd_ce = central_difference(&logits, 1e-5, |l| {
            cross_entropy(l.view(), &labels).unwrap().0
        });
        worst_ce = worst_ce.max(rel_err(g_ce.as_slice().unwrap(), &fd_ce));

        let (_, g_cmi) =
            soft_cmi_loss(logits.view(), &y, &z, k_y, k_z).map_err(|e| e.to_string())?;
        let fd_cmi = central_difference(&logits, 1e-5, |l| {
            soft_cmi_loss(l.view(), &y, &z, k_y, k_z).unwrap().0
        });
        worst_cmi = worst_cmi.max(rel_err(g_cmi.as_slice().unwrap(), &fd_cmi));

        // through a small network to the parameters
        let d = 3;
        let arch = Architecture {
            hidden: vec![5, 4],
            activation: Activation::Relu,
            split: 2,
        };
        let mut model = MlpModel::init(d, k, &arch, &mut rng).map_err(|e| e.to_string())?;
        // random biases keep every unit off the ReLU kink
        let jittered: Vec<f64> = model
            .flat_params()
            .iter()
            .map(|p| p + rng.random_range(-0.3..0.3))
            .collect();
        model
            .set_flat_params(&jittered)
            .map_err(|e| e.to_string())?;
        let inputs = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.5..1.5));
        let loss = |m: &MlpModel| {
            let tr = m.forward(inputs.view()).unwrap();
            soft_cmi_loss(tr.logits(), &y, &z, k_y, k_z).unwrap().0
                + cross_entropy(tr.logits(), &labels).unwrap().0
        };
        let trace = model.forward(inputs.view()).map_err(|e| e.to_string())?;
        let (_, gl_cmi) =
            soft_cmi_loss(trace.logits(), &y, &z, k_y, k_z).map_err(|e| e.to_string())?;
        let (_, gl_ce) = cross_entropy(trace.logits(), &labels).map_err(|e| e.to_string())?;
        let analytic = model
            .backward(&trace, (&gl_cmi + &gl_ce).view())
            .map_err(|e| e.to_string())?;
        let params = model.flat_params();
        let h = 1e-6;
        let mut fd = Vec::with_capacity(params.len());
        let mut probe = model.clone();
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            probe.set_flat_params(&p).unwrap();
            let up = loss(&probe);
            p[i] -= 2.0 * h;
            probe.set_flat_params(&p).unwrap();
            fd.push((up - loss(&probe)) / (2.0 * h));
        }
        worst_param = worst_param.max(rel_err(&analytic, &fd));
    }
    ensure!(
        worst_ce <= 1e-6,
        "cross-entropy relative error {worst_ce:e}"
    );
    ensure!(worst_cmi <= 1e-4, "soft CMI relative error {worst_cmi:e}");
    ensure!(
        worst_param <= 1e-4,
        "parameter gradient relative error {worst_param:e}"
    );
    Ok(format!("20 fixtures, max relative error: CE {worst_ce:.1e}, soft CMI {worst_cmi:.1e}, network parameters {worst_param:.1e}"))
}

const SWEEP_GRID: [f64; 8] = [0.0, 0.02, 0.05, 0.1, 0.2, 0.4, 0.8, 0.99];

fn sweep_setup() -> (sepfront::data::TabularDataset, TrainConfig, SweepOptions) {
    let joint = fixtures::noisy_channels(0.25, 0.1);
    let ds = generate_synthetic(&SyntheticSpec::standard(joint, 20_000, 0.5, 7))
        .unwrap()
        .dataset;
    let mut cfg = TrainConfig {
        epochs: 120,
        batch_size: 16_384,
        ..TrainConfig::default()
    };
    cfg.adam.lr = 1e-2;
    (
        ds,
        cfg,
        SweepOptions {
            folds: 5,
            master_seed: 1,
            bins: 10,
            jobs: None,
        },
    )
}

fn run_sweep() -> Result<(SweepResult, Vec<u8>, Duration), String> {
    let (ds, cfg, opts) = sweep_setup();
    let start = Instant::now();
    let r = sweep(&cfg, &SWEEP_GRID, &ds, opts).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let mut bytes = Vec::new();
    r.write_csv(&mut bytes).map_err(|e| e.to_string())?;
    Ok((r, bytes, elapsed))
}

/// Best accuracy over all tables minus best accuracy over perfectly separating ones.
fn frontier_accuracy_gap(joint: &JointPmf3) -> f64 {
    let t = table_of(joint);
    let [kx, ky, kz] = joint.card();
    let (mut best, mut best_fair) = (0.0f64, 0.0f64);
    for idx in 0..table_count(ky, kx * kz).unwrap() {
        let f = PredictorTable::from_index(kx, kz, ky, idx);
        let mut acc = 0.0;
        for x in 0..kx {
            for y in 0..ky {
                for z in 0..kz {
                    if f.get(x, z) == y {
                        acc += t.at(x, y, z);
                    }
                }
            }
        }
        best = best.max(acc);
        if deterministic(&t, &f).cmi_az_y() <= FAIR_TOL {
            best_fair = best_fair.max(acc);
        }
    }
    best - best_fair
}

struct SweepRun {
    result: SweepResult,
    first: Vec<u8>,
    second: Vec<u8>,
    elapsed: Duration,
}

fn mean_at(r: &SweepResult, lambda: f64, metric: &str) -> Result<f64, String> {
    r.summaries()
        .into_iter()
        .find(|s| s.lambda == lambda && s.metric == metric)
        .map(|s| s.mean)
        .ok_or_else(|| format!("no {metric} at lambda {lambda}"))
}

fn criterion_10(run: &SweepRun) -> Outcome {
    let r = &run.result;
    ensure!(r.failed_cells() == 0, "{} cells failed", r.failed_cells());
    let (lo, hi) = (SWEEP_GRID[0], SWEEP_GRID[SWEEP_GRID.len() - 1]);
    let (cmi0, cmi1) = (mean_at(r, lo, "test_cmi")?, mean_at(r, hi, "test_cmi")?);
    let (eo0, eo1) = (mean_at(r, lo, "eo_gap")?, mean_at(r, hi, "eo_gap")?);
    let (acc0, acc1) = (mean_at(r, lo, "accuracy")?, mean_at(r, hi, "accuracy")?);
    let gap = frontier_accuracy_gap(&fixtures::noisy_channels(0.25, 0.1));
    let mut failures = Vec::new();
    if cmi1 > 0.2 * cmi0 {
        failures.push(format!("(a) CMI {cmi1:.4} > 20% of {cmi0:.4}"));
    }
    if eo1 > 0.5 * eo0 {
        failures.push(format!("(b) EO gap {eo1:.4} > 50% of {eo0:.4}"));
    }
    if acc0 - acc1 > gap + 0.03 {
        failures.push(format!(
            "(c) accuracy drop {:.4} > {gap:.4} + 0.03",
            acc0 - acc1
        ));
    }
    if run.first != run.second {
        failures.push("(d) rerun with the same master seed changed the results CSV".into());
    }
    if run.elapsed > Duration::from_secs(600) {
        failures.push(format!("runtime {:?}", run.elapsed));
    }
    let summary = format!(
        "(a) CMI {cmi0:.4} -> {cmi1:.4}; (b) EO gap {eo0:.4} -> {eo1:.4}; (c) accuracy {acc0:.4} -> {acc1:.4}, allowed drop {:.4}; (d) {} byte CSV identical = {}; {:.1?} per sweep",
        gap + 0.03,
        run.first.len(),
        run.first == run.second,
        run.elapsed
    );
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}; {summary}", failures.join("; ")))
    }
}

fn criterion_11(run: &SweepRun) -> Outcome {
    let cells: Vec<_> = run
        .result
        .cells
        .iter()
        .filter_map(|c| c.metrics.as_ref())
        .collect();
    let cmi: Vec<f64> = cells.iter().map(|m| m.test_cmi).collect();
    let eo: Vec<f64> = cells.iter().filter_map(|m| m.eo_gap).collect();
    ensure!(eo.len() == cmi.len() && !cmi.is_empty(), "missing EO gaps");
    let rho = oracle::spearman(&cmi, &eo);
    ensure!(
        rho >= 0.7,
        "Spearman {rho:.4} below 0.7 over {} cells",
        cmi.len()
    );
    Ok(format!(
        "Spearman(test CMI, EO gap) = {rho:.4} over {} cells",
        cmi.len()
    ))
}

fn criterion_12() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1212);
    let mut checked_groups = 0;
    for fixture in 0..20 {
        let n = rng.random_range(20..200);
        let k_z = rng.random_range(2..5);
        let levels = [3.0, 7.0, 20.0, 1e6][fixture % 4];
        let mut y: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let z: Vec<usize> = (0..n)
            .map(|i| {
                if i < 2 * k_z {
                    i / 2
                } else {
                    rng.random_range(0..k_z)
                }
            })
            .collect();
        for g in 0..k_z {
            // one positive and one negative per group
            y[2 * g] = 1;
            y[2 * g + 1] = 0;
        }
        let scores: Vec<f64> = y
            .iter()
            .map(|&t| ((rng.random::<f64>() + 0.3 * t as f64) * levels).round() / levels)
            .collect();

        let (mut wins, mut pos, mut neg) = (0.0, 0usize, 0usize);
        for i in 0..n {
            if y[i] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            for j in 0..n {
                if y[i] == 1 && y[j] == 0 {
                    wins += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        let pairwise = wins / (pos as f64 * neg as f64);
        let lib = auroc(&scores, &y).map_err(|e| e.to_string())?;
        ensure!(
            lib == pairwise,
            "fixture {fixture}: AUROC {lib} vs pairwise {pairwise}"
        );

        let t = rng.random_range(0.2..0.8);
        let preds: Vec<usize> = scores.iter().map(|&s| usize::from(s >= t)).collect();
        let counts = oracle::group_counts(&preds, &y, &z);
        let (mut fpr, mut fnr, mut tpr) = (Vec::new(), Vec::new(), Vec::new());
        for [tp, fp, tn, fn_] in counts.values().copied() {
            fpr.push(fp as f64 / (fp + tn) as f64);
            fnr.push(fn_ as f64 / (fn_ + tp) as f64);
            tpr.push(tp as f64 / (tp + fn_) as f64);
            checked_groups += 1;
        }
        let range = |v: &[f64]| {
            v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - v.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        let eo = 0.5 * (range(&fpr) + range(&fnr));
        let lib_eo = eo_gap(&preds, &y, &z).map_err(|e| e.to_string())?;
        ensure!(
            lib_eo.value == eo && !lib_eo.warning,
            "fixture {fixture}: EO gap {:?} vs tally {eo}",
            lib_eo
        );
        let lib_eopp = eopp_gap(&preds, &y, &z).map_err(|e| e.to_string())?;
        ensure!(
            lib_eopp == range(&tpr),
            "fixture {fixture}: EOpp gap {lib_eopp} vs tally {}",
            range(&tpr)
        );
    }
    Ok(format!("20 fixtures, AUROC equal to the pairwise count, EO/EOpp equal to tallies over {checked_groups} groups"))
}

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn report(i: usize, name: &str, o: &Outcome, d: Duration) {
    match o {
        Ok(msg) => println!("PASS criterion {i:>2} {name} [{d:.2?}]: {msg}"),
        Err(msg) => println!("FAIL criterion {i:>2} {name} [{d:.2?}]: {msg}"),
    }
}

fn main() {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |i: usize| selected.is_empty() || selected.contains(&i);

    let simple: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "budget identity", criterion_1),
        (2, "concave-closure containment", criterion_2),
        (3, "monotonicity of U*_det", criterion_3),
        (4, "fairness limit and strict trade-off", criterion_4),
        (5, "CMI zero iff conditional factorization", criterion_5),
        (6, "dependence bounds", criterion_6),
        (7, "estimator bias slope", criterion_7),
        (8, "concentration sanity", criterion_8),
        (9, "gradient correctness", criterion_9),
        (12, "metric oracles", criterion_12),
    ];
    let mut failed = Vec::new();
    let mut passed = 0;
    let mut record = |i: usize, name: &str, o: Outcome, d: Duration| {
        report(i, name, &o, d);
        if o.is_ok() {
            passed += 1;
        } else {
            failed.push(i);
        }
    };

    for (i, name, f) in simple {
        if wanted(i) {
            let t = Instant::now();
            let o = guarded(f);
            record(i, name, o, t.elapsed());
        }
    }
    if wanted(10) || wanted(11) {
        let t = Instant::now();
        let run = guarded(|| {
            let (result, first, elapsed) = run_sweep()?;
            let (_, second, _) = run_sweep()?;
            Ok(SweepRun {
                result,
                first,
                second,
                elapsed,
            })
        });
        let d = t.elapsed();
        let checks: [(usize, &str, fn(&SweepRun) -> Outcome); 2] = [
            (10, "end-to-end sweep", criterion_10),
            (11, "CMI to EO transfer", criterion_11),
        ];
        for (i, name, check) in checks {
            if wanted(i) {
                let o = match &run {
                    Ok(run) => guarded(|| check(run)),
                    Err(e) => Err(e.clone()),
                };
                record(i, name, o, d);
            }
        }
    }

    println!("acceptance: {passed} passed, {} failed", failed.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
