//! Brute-force separation-utility frontiers of small finite joints.
//!
//! Every deterministic table `f: X × Z → {0, …, K−1}` is enumerated and placed on the
//! information plane at `(v_f, u_f) = (I(f;Z|Y), I(f;Y))`. The randomized frontier is
//! the concave upper envelope of those points; the deterministic frontier is the
//! running maximum of `u` over `v_f ≤ v`.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finite_dist::{
    check_conditional_independence, conditional_mutual_information, mutual_information,
    plane_point, pushforward, Axis, Channel, CiKind, CmiRoles, JointPmf2, JointPmf3,
    PredictorTable,
};

pub use crate::finite_dist::fixtures;

/// Largest number of predictor tables enumerated in one call.
pub const ENUMERATION_CAP: u64 = 1 << 20;

/// `v` at or below this counts as perfect separation.
pub const FAIR_TOL: f64 = 1e-10;

const DOMINANCE_TOL: f64 = 1e-12;
const DEDUP_GRID: f64 = 1e12;

/// Where a point on the plane came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    /// Deterministic table by enumeration index.
    Table(u64),
    /// Bernoulli mixture choosing `f1` with probability `mix`.
    Mixture {
        f0: u64,
        f1: u64,
        mix: f64,
    },
    Label(String),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Table(i) => write!(f, "f{i}"),
            Provenance::Mixture { f0, f1, mix } => write!(f, "mix(f{f0};f{f1};{mix})"),
            Provenance::Label(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub v: f64,
    pub u: f64,
    pub provenance: Provenance,
}

impl FrontierPoint {
    pub fn new(v: f64, u: f64, provenance: Provenance) -> Self {
        Self { v, u, provenance }
    }
}

/// Number of tables `card_out^cells`, or an error naming the required count.
pub fn table_count(card_out: usize, cells: usize) -> Result<u64> {
    let required = (card_out as f64).powi(cells as i32);
    if card_out == 0 || required > ENUMERATION_CAP as f64 {
        return Err(Error::CapExceeded {
            required,
            cap: ENUMERATION_CAP,
        });
    }
    Ok((card_out as u64).pow(cells as u32))
}

/// One point per deterministic table, in enumeration-index order.
///
/// The list is not deduplicated; see [`distinct_points`].
pub fn enumerate_deterministic_set(
    joint: &JointPmf3,
    card_out: usize,
) -> Result<Vec<FrontierPoint>> {
    let [kx, _, kz] = joint.card();
    let count = table_count(card_out, kx * kz)?;
    (0..count)
        .into_par_iter()
        .map(|idx| {
            let f = PredictorTable::from_index(kx, kz, card_out, idx);
            let (v, u) = plane_point(joint, &f)?;
            Ok(FrontierPoint::new(v, u, Provenance::Table(idx)))
        })
        .collect()
}

/// Drops points that coincide on a 1e-12 grid, keeping the first occurrence.
pub fn distinct_points(points: &[FrontierPoint]) -> Vec<FrontierPoint> {
    let mut seen = std::collections::HashSet::new();
    points
        .iter()
        .filter(|p| {
            seen.insert((
                (p.v * DEDUP_GRID).round() as i64,
                (p.u * DEDUP_GRID).round() as i64,
            ))
        })
        .cloned()
        .collect()
}

/// Piecewise-linear concave frontier with strictly increasing `v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    vertices: Vec<FrontierPoint>,
}

impl Frontier {
    pub fn vertices(&self) -> &[FrontierPoint] {
        &self.vertices
    }

    /// `U*(v)`: linear between vertices, constant past the last one, `None` left of the first.
    pub fn eval(&self, v: f64) -> Option<f64> {
        let first = self.vertices.first()?;
        if v < first.v {
            return None;
        }
        let i = self.vertices.partition_point(|p| p.v <= v);
        if i == self.vertices.len() {
            return Some(self.vertices[i - 1].u);
        }
        let (a, b) = (&self.vertices[i - 1], &self.vertices[i]);
        Some(a.u + (b.u - a.u) * (v - a.v) / (b.v - a.v))
    }

    /// Segment slopes, left to right.
    pub fn slopes(&self) -> Vec<f64> {
        self.vertices
            .windows(2)
            .map(|w| (w[1].u - w[0].u) / (w[1].v - w[0].v))
            .collect()
    }

    /// Whether slopes never increase by more than `tol`.
    pub fn is_concave(&self, tol: f64) -> bool {
        self.slopes().windows(2).all(|s| s[1] <= s[0] + tol)
    }
}

/// Upper-left concave hull of `points`.
///
/// Points are sorted by `(v, −u)`, filtered to the Pareto staircase (strictly rising
/// `u`), then reduced to the upper hull with a monotone chain.
pub fn upper_concave_envelope(points: &[FrontierPoint]) -> Result<Frontier> {
    if points.is_empty() {
        return Err(Error::Empty("no points to envelope".into()));
    }
    let mut sorted: Vec<&FrontierPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.v.total_cmp(&b.v).then(b.u.total_cmp(&a.u)));

    let mut stair: Vec<&FrontierPoint> = Vec::new();
    for p in sorted {
        match stair.last() {
            Some(last) if p.u <= last.u + DOMINANCE_TOL => {}
            _ => stair.push(p),
        }
    }

    let mut hull: Vec<&FrontierPoint> = Vec::with_capacity(stair.len());
    for p in stair {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // b on or below the chord a -> p
            if (b.u - a.u) * (p.v - a.v) <= (p.u - a.u) * (b.v - a.v) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    Ok(Frontier {
        vertices: hull.into_iter().cloned().collect(),
    })
}

/// `U*_det(v) = max{u_f : v_f ≤ v}` on each grid value; `None` where no point qualifies.
pub fn det_frontier(points: &[FrontierPoint], v_grid: &[f64]) -> Vec<(f64, Option<f64>)> {
    let mut sorted: Vec<(f64, f64)> = points.iter().map(|p| (p.v, p.u)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut running = Vec::with_capacity(sorted.len());
    let mut best = f64::NEG_INFINITY;
    for &(v, u) in &sorted {
        best = best.max(u);
        running.push((v, best));
    }
    v_grid
        .iter()
        .map(|&v| {
            let i = running.partition_point(|&(pv, _)| pv <= v);
            (v, (i > 0).then(|| running[i - 1].1))
        })
        .collect()
}

/// Evenly spaced grid on `[0, v_max]` with `n` points.
pub fn linear_grid(v_max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| v_max * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Budget identity `u + v = I(U;(Y,Z)) ≤ I((X,Z);Y) + H(Z|Y)` for one predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub u: f64,
    pub v: f64,
    pub total_information: f64,
    pub budget: f64,
    pub identity_error: f64,
    pub identity_holds: bool,
    pub within_budget: bool,
}

pub fn budget_check<C: Channel + ?Sized>(joint: &JointPmf3, predictor: &C) -> Result<BudgetReport> {
    let ju = pushforward(joint, predictor)?;
    let u = ju.mutual_information(&[Axis::X], &[Axis::Y]);
    let v = conditional_mutual_information(&ju, CmiRoles::SEPARATION)?;
    let total_information = ju.mutual_information(&[Axis::X], &[Axis::Y, Axis::Z]);
    let budget = joint.mutual_information(&[Axis::X, Axis::Z], &[Axis::Y])
        + joint.conditional_entropy(&[Axis::Z], &[Axis::Y]);
    let identity_error = (u + v - total_information).abs();
    Ok(BudgetReport {
        u,
        v,
        total_information,
        budget,
        identity_error,
        identity_holds: identity_error <= 1e-12,
        within_budget: u + v <= budget + 1e-12,
    })
}

/// Fairness limit and strict trade-off analysis of a joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NecessityReport {
    /// Best utility of predictors that ignore `Z`.
    pub u_x_star: f64,
    /// Best utility over all predictors of `(X, Z)`.
    pub u_xz_star: f64,
    pub x_indep_z_given_y: bool,
    /// `I(Z;Y|X) > 0`.
    pub z_informative_given_x: bool,
    /// Every `z` has positive probability under every observed `y`.
    pub z_overlaps_y: bool,
    /// `max{u_f : v_f ≤ FAIR_TOL}`.
    pub max_fair_utility: f64,
    /// Smallest `v_f` among predictors with `u_f > u_x_star`; `None` if there are none.
    pub min_violation_beyond_x_star: Option<f64>,
    pub exceeding_count: usize,
    /// `Some(max_fair_utility == u_x_star)` when `X ⊥ Z | Y` and overlap hold.
    pub fairness_limit_holds: Option<bool>,
    /// `Some(every predictor beyond u_x_star has v > 0)` when all assumptions hold.
    pub strict_tradeoff_holds: Option<bool>,
    pub witnesses: NecessityWitnesses,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NecessityWitnesses {
    /// Index of the best `g: X → Y` (over `x` only).
    pub best_x_only: u64,
    pub best_overall: u64,
    pub best_fair: Option<u64>,
    /// A predictor with `u_f > u_x_star`, if any.
    pub beyond_x_star: Option<u64>,
}

impl NecessityReport {
    /// The non-degeneracy assumptions under which the limit and trade-off claims apply.
    pub fn assumptions_hold(&self) -> bool {
        self.x_indep_z_given_y && self.z_informative_given_x && self.z_overlaps_y
    }
}

const NECESSITY_TOL: f64 = 1e-9;

/// Highest-`u` point, earliest on ties.
fn best<'a>(it: impl Iterator<Item = &'a FrontierPoint>) -> Option<&'a FrontierPoint> {
    it.fold(None, |acc, p| match acc {
        Some(a) if a.u >= p.u => Some(a),
        _ => Some(p),
    })
}

pub fn necessity_analysis(joint: &JointPmf3, card_out: usize) -> Result<NecessityReport> {
    let [kx, ky, kz] = joint.card();
    let x_count = table_count(card_out, kx)?;
    let points = enumerate_deterministic_set(joint, card_out)?;

    let (mut best_x_only, mut u_x_star) = (0, f64::NEG_INFINITY);
    for idx in 0..x_count {
        let g = PredictorTable::from_index(kx, 1, card_out, idx);
        let f = PredictorTable::x_only(kz, card_out, g.map())?;
        let (_, u) = plane_point(joint, &f)?;
        if u > u_x_star {
            (best_x_only, u_x_star) = (idx, u);
        }
    }

    let table_id = |p: &FrontierPoint| match p.provenance {
        Provenance::Table(i) => i,
        _ => unreachable!("enumeration yields tables"),
    };
    let overall = best(points.iter()).expect("at least one table");
    let fair = best(points.iter().filter(|p| p.v <= FAIR_TOL));
    let beyond: Vec<&FrontierPoint> = points
        .iter()
        .filter(|p| p.u > u_x_star + NECESSITY_TOL)
        .collect();
    let min_violation_beyond_x_star = beyond.iter().map(|p| p.v).reduce(f64::min);
    let max_fair_utility = fair.map_or(0.0, |p| p.u);

    let x_indep_z_given_y = check_conditional_independence(joint, CiKind::XZGivenY).holds;
    let zy_given_x = conditional_mutual_information(
        joint,
        CmiRoles {
            a: Axis::Z,
            b: Axis::Y,
            given: Axis::X,
        },
    )?;
    let z_informative_given_x = zy_given_x > 1e-12;
    let pyz = joint.marginal(&[Axis::Y, Axis::Z]);
    let z_overlaps_y = (0..ky).all(|y| {
        let row = &pyz[y * kz..(y + 1) * kz];
        row.iter().sum::<f64>() <= 0.0 || row.iter().all(|&p| p > 0.0)
    });

    let limit_applies = x_indep_z_given_y && z_overlaps_y;
    let fairness_limit_holds =
        limit_applies.then(|| (max_fair_utility - u_x_star).abs() <= NECESSITY_TOL);
    let strict_tradeoff_holds =
        (limit_applies && z_informative_given_x).then(|| beyond.iter().all(|p| p.v > FAIR_TOL));

    Ok(NecessityReport {
        u_x_star,
        u_xz_star: overall.u,
        x_indep_z_given_y,
        z_informative_given_x,
        z_overlaps_y,
        max_fair_utility,
        min_violation_beyond_x_star,
        exceeding_count: beyond.len(),
        fairness_limit_holds,
        strict_tradeoff_holds,
        witnesses: NecessityWitnesses {
            best_x_only,
            best_overall: table_id(overall),
            best_fair: fair.map(table_id),
            beyond_x_star: beyond.first().map(|p| table_id(p)),
        },
    })
}

/// Comparison of `L(f(X, z) | Y = y)` against `L(U | Y = y)` for a perfectly separating `f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawMatchReport {
    pub max_deviation: f64,
    /// `I(U;Y)` of the predictor itself.
    pub utility: f64,
    /// `(z, I(f(X, z); Y))` for every `z` with positive probability.
    pub per_z_utility: Vec<(usize, f64)>,
    pub utilities_match: bool,
}

pub fn conditional_law_matching_check(
    joint: &JointPmf3,
    f: &PredictorTable,
) -> Result<LawMatchReport> {
    let [kx, ky, kz] = joint.card();
    if !check_conditional_independence(joint, CiKind::XZGivenY).holds {
        return Err(Error::Precondition(
            "X ⊥ Z | Y does not hold for this joint".into(),
        ));
    }
    let ju = pushforward(joint, f)?;
    let v = conditional_mutual_information(&ju, CmiRoles::SEPARATION)?;
    if v > FAIR_TOL {
        return Err(Error::Precondition(format!(
            "predictor is not perfectly separating (v = {v:e})"
        )));
    }
    let ku = f.card_out();
    let py = joint.marginal(&[Axis::Y]);
    let pxy = joint.marginal(&[Axis::X, Axis::Y]);
    let pyz = joint.marginal(&[Axis::Y, Axis::Z]);
    let pz = joint.marginal(&[Axis::Z]);
    let puy = ju.marginal(&[Axis::X, Axis::Y]);
    let utility = mutual_information(&JointPmf2::new(ku, ky, puy.clone())?);

    let mut max_deviation: f64 = 0.0;
    let mut per_z_utility = Vec::new();
    for z in 0..kz {
        if pz[z] <= 0.0 {
            continue;
        }
        // law of (f(X, z), Y) with (X, Y) ~ P_XY
        let mut law = vec![0.0; ku * ky];
        for x in 0..kx {
            for y in 0..ky {
                law[f.get(x, z) * ky + y] += pxy[x * ky + y];
            }
        }
        for y in 0..ky {
            if py[y] <= 0.0 || pyz[y * kz + z] <= 0.0 {
                continue;
            }
            for u in 0..ku {
                let dev = (law[u * ky + y] / py[y] - puy[u * ky + y] / py[y]).abs();
                max_deviation = max_deviation.max(dev);
            }
        }
        per_z_utility.push((z, mutual_information(&JointPmf2::new(ku, ky, law)?)));
    }
    let utilities_match = per_z_utility
        .iter()
        .all(|(_, mi)| (mi - utility).abs() <= NECESSITY_TOL);
    Ok(LawMatchReport {
        max_deviation,
        utility,
        per_z_utility,
        utilities_match,
    })
}

/// Writes `v_nats,u_nats,provenance` rows.
pub fn write_points_csv<W: Write>(points: &[FrontierPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["v_nats", "u_nats", "provenance"])?;
    for p in points {
        w.write_record([p.v.to_string(), p.u.to_string(), p.provenance.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
