//! Exact finite joint distributions and the information quantities defined on them.
//!
//! All quantities are in nats. The conventions `0 ln 0 = 0` and `0 ln(0/0) = 0`
//! hold everywhere, so every function here is total on valid tables.
//!
//! A [`JointPmf3`] is stored densely in row-major `(x, y, z)` order. After a
//! [`pushforward`] the first axis holds the prediction `U` instead of `X`, and
//! the same type is reused for the law of `(U, Y, Z)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest cardinality accepted on any axis.
pub const MAX_CARD: usize = 64;

/// Sum deviations below this are renormalized away on construction.
pub const RENORM_TOL: f64 = 1e-9;

/// Tolerance used when deciding whether a factorization holds.
pub const CI_TOL: f64 = 1e-10;

/// One of the three axes of a [`JointPmf3`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X = 0,
    Y = 1,
    Z = 2,
}

fn check_probs(probs: &mut [f64], what: &str) -> Result<()> {
    let mut sum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "{what}: entry {i} is {p}, expected a finite non-negative value"
            )));
        }
        sum += p;
    }
    let dev = (sum - 1.0).abs();
    if dev > RENORM_TOL {
        return Err(Error::InvalidDistribution(format!(
            "{what}: entries sum to {sum}, off by {dev:e}"
        )));
    }
    if dev > 0.0 {
        probs.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(())
}

fn check_card(card: usize, name: &str) -> Result<()> {
    if card == 0 || card > MAX_CARD {
        return Err(Error::InvalidDistribution(format!(
            "cardinality of {name} is {card}, expected 1..={MAX_CARD}"
        )));
    }
    Ok(())
}

#[inline]
fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

fn entropy_unchecked(pmf: &[f64]) -> f64 {
    -pmf.iter().map(|&p| plogp(p)).sum::<f64>()
}

/// Shannon entropy `-Σ p ln p` of a probability vector.
pub fn entropy(pmf: &[f64]) -> Result<f64> {
    if pmf.is_empty() {
        return Err(Error::Domain("entropy of an empty vector".into()));
    }
    if let Some(p) = pmf.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
        return Err(Error::Domain(format!(
            "negative or non-finite probability {p}"
        )));
    }
    let sum: f64 = pmf.iter().sum();
    if (sum - 1.0).abs() > RENORM_TOL {
        return Err(Error::Domain(format!("probabilities sum to {sum}")));
    }
    Ok(entropy_unchecked(pmf).max(0.0))
}

/// Binary entropy `H_b(p)` in nats.
pub fn binary_entropy(p: f64) -> f64 {
    entropy_unchecked(&[p, 1.0 - p]).max(0.0)
}

/// Dense joint law of a pair `(A, B)`, row-major in `a`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointPmf2 {
    card_a: usize,
    card_b: usize,
    probs: Vec<f64>,
}

impl JointPmf2 {
    pub fn new(card_a: usize, card_b: usize, mut probs: Vec<f64>) -> Result<Self> {
        if card_a == 0 || card_b == 0 {
            return Err(Error::InvalidDistribution("zero cardinality".into()));
        }
        if probs.len() != card_a * card_b {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries, got {}",
                card_a * card_b,
                probs.len()
            )));
        }
        check_probs(&mut probs, "pair table")?;
        Ok(Self {
            card_a,
            card_b,
            probs,
        })
    }

    /// Empirical law of paired category samples.
    pub fn from_samples(card_a: usize, card_b: usize, a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch(
                "sample columns differ in length".into(),
            ));
        }
        if a.is_empty() {
            return Err(Error::Empty("no samples".into()));
        }
        let mut counts = vec![0.0; card_a * card_b];
        for (&ai, &bi) in a.iter().zip(b) {
            if ai >= card_a || bi >= card_b {
                return Err(Error::DimensionMismatch(format!(
                    "sample ({ai}, {bi}) out of range"
                )));
            }
            counts[ai * card_b + bi] += 1.0;
        }
        let n = a.len() as f64;
        counts.iter_mut().for_each(|c| *c /= n);
        Self::new(card_a, card_b, counts)
    }

    pub fn card_a(&self) -> usize {
        self.card_a
    }

    pub fn card_b(&self) -> usize {
        self.card_b
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn p(&self, a: usize, b: usize) -> f64 {
        self.probs[a * self.card_b + b]
    }

    pub fn marginal_a(&self) -> Vec<f64> {
        self.probs
            .chunks(self.card_b)
            .map(|row| row.iter().sum())
            .collect()
    }

    pub fn marginal_b(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.card_b];
        for row in self.probs.chunks(self.card_b) {
            for (o, p) in out.iter_mut().zip(row) {
                *o += p;
            }
        }
        out
    }
}

/// `I(A;B) = Σ p(a,b) ln[p(a,b) / (p(a) p(b))]`.
pub fn mutual_information(joint: &JointPmf2) -> f64 {
    let pa = joint.marginal_a();
    let pb = joint.marginal_b();
    let mut mi = 0.0;
    for a in 0..joint.card_a {
        for b in 0..joint.card_b {
            let pab = joint.p(a, b);
            if pab > 0.0 {
                mi += pab * (pab / (pa[a] * pb[b])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Dense joint law of `(X, Y, Z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "JointDoc", into = "JointDoc")]
pub struct JointPmf3 {
    card: [usize; 3],
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JointDoc {
    card: [usize; 3],
    probs: Vec<f64>,
}

impl TryFrom<JointDoc> for JointPmf3 {
    type Error = Error;

    fn try_from(doc: JointDoc) -> Result<Self> {
        JointPmf3::new(doc.card, doc.probs)
    }
}

impl From<JointPmf3> for JointDoc {
    fn from(j: JointPmf3) -> Self {
        JointDoc {
            card: j.card,
            probs: j.probs,
        }
    }
}

impl JointPmf3 {
    pub fn new(card: [usize; 3], mut probs: Vec<f64>) -> Result<Self> {
        check_card(card[0], "X")?;
        check_card(card[1], "Y")?;
        check_card(card[2], "Z")?;
        let len = card.iter().product::<usize>();
        if probs.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "card {card:?} needs {len} entries, got {}",
                probs.len()
            )));
        }
        check_probs(&mut probs, "joint table")?;
        Ok(Self { card, probs })
    }

    /// Builds a joint from non-negative weights, normalizing them to sum to one.
    pub fn from_weights(
        card: [usize; 3],
        mut weight: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut probs = Vec::with_capacity(card.iter().product());
        for x in 0..card[0] {
            for y in 0..card[1] {
                for z in 0..card[2] {
                    probs.push(weight(x, y, z));
                }
            }
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total}"
            )));
        }
        probs.iter_mut().for_each(|p| *p /= total);
        Self::new(card, probs)
    }

    /// Empirical law of `(a, y, z)` triples.
    pub fn empirical(card: [usize; 3], a: &[usize], y: &[usize], z: &[usize]) -> Result<Self> {
        if a.len() != y.len() || a.len() != z.len() {
            return Err(Error::DimensionMismatch(
                "sample columns differ in length".into(),
            ));
        }
        if a.is_empty() {
            return Err(Error::Empty("no samples".into()));
        }
        let mut counts = vec![0u64; card.iter().product()];
        for i in 0..a.len() {
            if a[i] >= card[0] || y[i] >= card[1] || z[i] >= card[2] {
                return Err(Error::DimensionMismatch(format!("sample {i} out of range")));
            }
            counts[(a[i] * card[1] + y[i]) * card[2] + z[i]] += 1;
        }
        let n = a.len() as f64;
        Self::new(card, counts.into_iter().map(|c| c as f64 / n).collect())
    }

    pub fn card(&self) -> [usize; 3] {
        self.card
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.card[1] + y) * self.card[2] + z
    }

    #[inline]
    pub fn p(&self, x: usize, y: usize, z: usize) -> f64 {
        self.probs[self.index(x, y, z)]
    }

    /// Marginal table over `axes`, indexed with the first listed axis most significant.
    pub fn marginal(&self, axes: &[Axis]) -> Vec<f64> {
        let size: usize = axes.iter().map(|&a| self.card[a as usize]).product();
        let mut out = vec![0.0; size];
        for x in 0..self.card[0] {
            for y in 0..self.card[1] {
                for z in 0..self.card[2] {
                    let coords = [x, y, z];
                    let idx = axes.iter().fold(0, |acc, &a| {
                        acc * self.card[a as usize] + coords[a as usize]
                    });
                    out[idx] += self.p(x, y, z);
                }
            }
        }
        out
    }

    /// Joint law of two disjoint groups of axes as a pair table.
    pub fn pair(&self, a: &[Axis], b: &[Axis]) -> JointPmf2 {
        let card_a: usize = a.iter().map(|&ax| self.card[ax as usize]).product();
        let card_b: usize = b.iter().map(|&ax| self.card[ax as usize]).product();
        let axes: Vec<Axis> = a.iter().chain(b).copied().collect();
        let probs = self.marginal(&axes);
        JointPmf2 {
            card_a,
            card_b,
            probs,
        }
    }

    /// Joint entropy of the listed axes.
    pub fn entropy_of(&self, axes: &[Axis]) -> f64 {
        entropy_unchecked(&self.marginal(axes)).max(0.0)
    }

    /// `H(target | given)`.
    pub fn conditional_entropy(&self, target: &[Axis], given: &[Axis]) -> f64 {
        let all: Vec<Axis> = given.iter().chain(target).copied().collect();
        (self.entropy_of(&all) - self.entropy_of(given)).max(0.0)
    }

    /// `I(A;B)` between two disjoint axis groups.
    pub fn mutual_information(&self, a: &[Axis], b: &[Axis]) -> f64 {
        mutual_information(&self.pair(a, b))
    }

    /// Relabels the axes, so that `permute([Z, Y, X])` puts the old `Z` on the first axis.
    pub fn permute(&self, order: [Axis; 3]) -> JointPmf3 {
        let card = [
            self.card[order[0] as usize],
            self.card[order[1] as usize],
            self.card[order[2] as usize],
        ];
        let mut probs = vec![0.0; self.probs.len()];
        for x in 0..self.card[0] {
            for y in 0..self.card[1] {
                for z in 0..self.card[2] {
                    let c = [x, y, z];
                    let (a, b, d) = (
                        c[order[0] as usize],
                        c[order[1] as usize],
                        c[order[2] as usize],
                    );
                    probs[(a * card[1] + b) * card[2] + d] = self.p(x, y, z);
                }
            }
        }
        JointPmf3 { card, probs }
    }
}

/// Which axes play the two arguments and the conditioning variable of a CMI.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CmiRoles {
    pub a: Axis,
    pub b: Axis,
    pub given: Axis,
}

impl CmiRoles {
    /// `I(U;Z|Y)` on a pushed-forward joint, where the first axis holds `U`.
    pub const SEPARATION: CmiRoles = CmiRoles {
        a: Axis::X,
        b: Axis::Z,
        given: Axis::Y,
    };

    fn validate(&self) -> Result<()> {
        if self.a == self.b || self.a == self.given || self.b == self.given {
            return Err(Error::Precondition(format!(
                "CMI roles must be distinct: {self:?}"
            )));
        }
        Ok(())
    }
}

/// `I(A;B|C) = Σ_c p(c) Σ_{a,b} p(a,b|c) ln[p(a,b|c) / (p(a|c) p(b|c))]`.
pub fn conditional_mutual_information(joint: &JointPmf3, roles: CmiRoles) -> Result<f64> {
    roles.validate()?;
    let t = joint.permute([roles.given, roles.a, roles.b]);
    let [kc, ka, kb] = t.card;
    let mut total = 0.0;
    for c in 0..kc {
        let slab = &t.probs[c * ka * kb..(c + 1) * ka * kb];
        let pc: f64 = slab.iter().sum();
        if pc <= 0.0 {
            continue;
        }
        let mut pa = vec![0.0; ka];
        let mut pb = vec![0.0; kb];
        for a in 0..ka {
            for b in 0..kb {
                pa[a] += slab[a * kb + b];
                pb[b] += slab[a * kb + b];
            }
        }
        for a in 0..ka {
            for b in 0..kb {
                let pabc = slab[a * kb + b];
                if pabc > 0.0 {
                    total += pabc * (pabc * pc / (pa[a] * pb[b])).ln();
                }
            }
        }
    }
    Ok(total.max(0.0))
}

/// Utility `u = I(U;Y)` of a pushed-forward joint.
pub fn utility(joint_u: &JointPmf3) -> f64 {
    joint_u.mutual_information(&[Axis::X], &[Axis::Y])
}

/// Separation violation `v = I(U;Z|Y)` of a pushed-forward joint.
pub fn separation_violation(joint_u: &JointPmf3) -> f64 {
    conditional_mutual_information(joint_u, CmiRoles::SEPARATION)
        .expect("static roles are distinct")
}

/// A stochastic map from `(x, z)` to an output category.
pub trait Channel {
    fn card_x(&self) -> usize;
    fn card_z(&self) -> usize;
    fn card_u(&self) -> usize;
    /// Calls `emit(u, weight)` for each output reachable from `(x, z)`.
    fn outputs(&self, x: usize, z: usize, emit: &mut dyn FnMut(usize, f64));
}

/// Deterministic predictor `f: X × Z → {0, …, card_out−1}`, stored as a table over `x * card_z + z`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PredictorTable {
    card_x: usize,
    card_z: usize,
    card_out: usize,
    map: Vec<usize>,
}

impl PredictorTable {
    pub fn new(card_x: usize, card_z: usize, card_out: usize, map: Vec<usize>) -> Result<Self> {
        if card_out == 0 {
            return Err(Error::DimensionMismatch("card_out must be positive".into()));
        }
        if map.len() != card_x * card_z {
            return Err(Error::DimensionMismatch(format!(
                "table needs {} entries, got {}",
                card_x * card_z,
                map.len()
            )));
        }
        if let Some(v) = map.iter().find(|&&v| v >= card_out) {
            return Err(Error::DimensionMismatch(format!(
                "output {v} not below card_out {card_out}"
            )));
        }
        Ok(Self {
            card_x,
            card_z,
            card_out,
            map,
        })
    }

    /// The table whose cell `j` is digit `j` of `index` in base `card_out`.
    pub fn from_index(card_x: usize, card_z: usize, card_out: usize, mut index: u64) -> Self {
        let map = (0..card_x * card_z)
            .map(|_| {
                let d = (index % card_out as u64) as usize;
                index /= card_out as u64;
                d
            })
            .collect();
        Self {
            card_x,
            card_z,
            card_out,
            map,
        }
    }

    pub fn constant(card_x: usize, card_z: usize, card_out: usize, value: usize) -> Result<Self> {
        Self::new(card_x, card_z, card_out, vec![value; card_x * card_z])
    }

    /// A predictor that ignores `z` and applies `g` to `x`.
    pub fn x_only(card_z: usize, card_out: usize, g: &[usize]) -> Result<Self> {
        let map = g
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, card_z))
            .collect();
        Self::new(g.len(), card_z, card_out, map)
    }

    /// `U = (X, Z)` encoded as `x * card_z + z`.
    pub fn identity_xz(card_x: usize, card_z: usize) -> Self {
        Self {
            card_x,
            card_z,
            card_out: card_x * card_z,
            map: (0..card_x * card_z).collect(),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, z: usize) -> usize {
        self.map[x * self.card_z + z]
    }

    pub fn card_out(&self) -> usize {
        self.card_out
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }
}

impl Channel for PredictorTable {
    fn card_x(&self) -> usize {
        self.card_x
    }

    fn card_z(&self) -> usize {
        self.card_z
    }

    fn card_u(&self) -> usize {
        self.card_out
    }

    fn outputs(&self, x: usize, z: usize, emit: &mut dyn FnMut(usize, f64)) {
        emit(self.get(x, z), 1.0);
    }
}

/// Bernoulli mixture of two deterministic predictors; the selector bit is part of the output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomizedPredictor {
    f0: PredictorTable,
    f1: PredictorTable,
    mix: f64,
}

impl RandomizedPredictor {
    /// `mix` is the probability of selecting `f1`.
    pub fn new(f0: PredictorTable, f1: PredictorTable, mix: f64) -> Result<Self> {
        if f0.card_out != f1.card_out || f0.card_x != f1.card_x || f0.card_z != f1.card_z {
            return Err(Error::DimensionMismatch(
                "mixed predictors differ in shape".into(),
            ));
        }
        if !(0.0..=1.0).contains(&mix) {
            return Err(Error::Domain(format!(
                "mixing probability {mix} outside [0, 1]"
            )));
        }
        Ok(Self { f0, f1, mix })
    }

    pub fn f0(&self) -> &PredictorTable {
        &self.f0
    }

    pub fn f1(&self) -> &PredictorTable {
        &self.f1
    }

    pub fn mix(&self) -> f64 {
        self.mix
    }
}

impl Channel for RandomizedPredictor {
    fn card_x(&self) -> usize {
        self.f0.card_x
    }

    fn card_z(&self) -> usize {
        self.f0.card_z
    }

    fn card_u(&self) -> usize {
        2 * self.f0.card_out
    }

    fn outputs(&self, x: usize, z: usize, emit: &mut dyn FnMut(usize, f64)) {
        emit(self.f0.get(x, z), 1.0 - self.mix);
        emit(self.f0.card_out + self.f1.get(x, z), self.mix);
    }
}

/// Law of `(U, Y, Z)` with `U` drawn from `channel` given `(X, Z)`.
pub fn pushforward<C: Channel + ?Sized>(joint: &JointPmf3, channel: &C) -> Result<JointPmf3> {
    let [kx, ky, kz] = joint.card;
    if channel.card_x() != kx || channel.card_z() != kz {
        return Err(Error::DimensionMismatch(format!(
            "predictor is over {}x{}, joint has card_x={kx}, card_z={kz}",
            channel.card_x(),
            channel.card_z()
        )));
    }
    let ku = channel.card_u();
    if ku > MAX_CARD * MAX_CARD {
        return Err(Error::DimensionMismatch(format!(
            "output cardinality {ku} too large"
        )));
    }
    let mut probs = vec![0.0; ku * ky * kz];
    for x in 0..kx {
        for z in 0..kz {
            channel.outputs(x, z, &mut |u, w| {
                if w > 0.0 {
                    for y in 0..ky {
                        probs[(u * ky + y) * kz + z] += w * joint.p(x, y, z);
                    }
                }
            });
        }
    }
    Ok(JointPmf3 {
        card: [ku, ky, kz],
        probs,
    })
}

/// `(v, u)` coordinates of a predictor on the information plane.
pub fn plane_point<C: Channel + ?Sized>(joint: &JointPmf3, channel: &C) -> Result<(f64, f64)> {
    let ju = pushforward(joint, channel)?;
    Ok((separation_violation(&ju), utility(&ju)))
}

/// Conditional independence statements checked by [`check_conditional_independence`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CiKind {
    /// `X ⊥ Z | Y`
    XZGivenY,
    /// `Y ⊥ Z | X`
    YZGivenX,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CiReport {
    pub holds: bool,
    pub max_violation: f64,
}

/// Compares `p(a,b,c)` against `p(a,c) p(b,c) / p(c)` cell by cell.
pub fn check_conditional_independence(joint: &JointPmf3, kind: CiKind) -> CiReport {
    let (a, b, c) = match kind {
        CiKind::XZGivenY => (Axis::X, Axis::Z, Axis::Y),
        CiKind::YZGivenX => (Axis::Y, Axis::Z, Axis::X),
    };
    let t = joint.permute([c, a, b]);
    let [kc, ka, kb] = t.card;
    let mut max_violation: f64 = 0.0;
    for ci in 0..kc {
        let slab = &t.probs[ci * ka * kb..(ci + 1) * ka * kb];
        let pc: f64 = slab.iter().sum();
        if pc <= 0.0 {
            continue;
        }
        let pa: Vec<f64> = (0..ka)
            .map(|i| slab[i * kb..(i + 1) * kb].iter().sum())
            .collect();
        let pb: Vec<f64> = (0..kb)
            .map(|j| (0..ka).map(|i| slab[i * kb + j]).sum())
            .collect();
        for i in 0..ka {
            for j in 0..kb {
                let dev = (slab[i * kb + j] - pa[i] * pb[j] / pc).abs();
                max_violation = max_violation.max(dev);
            }
        }
    }
    CiReport {
        holds: max_violation <= CI_TOL,
        max_violation,
    }
}

/// Canonical joints with known information structure.
pub mod fixtures {
    use super::*;

    /// `Y` uniform, `X = Y` flipped with probability `flip_x`, `Z = Y` flipped with
    /// probability `flip_z`, the two flips independent given `Y`.
    pub fn noisy_channels(flip_x: f64, flip_z: f64) -> JointPmf3 {
        JointPmf3::from_weights([2, 2, 2], |x, y, z| {
            let px = if x == y { 1.0 - flip_x } else { flip_x };
            let pz = if z == y { 1.0 - flip_z } else { flip_z };
            0.5 * px * pz
        })
        .expect("valid fixture")
    }

    /// `X ⊥ Z | Y` with `I(Z;Y|X) > 0`: both flips at 0.25.
    pub fn necessity() -> JointPmf3 {
        noisy_channels(0.25, 0.25)
    }

    /// `Y` uniform, `Z = Y`, `X = Y` flipped with probability 0.25.
    pub fn y_equals_z() -> JointPmf3 {
        JointPmf3::from_weights([2, 2, 2], |x, y, z| {
            if z != y {
                return 0.0;
            }
            0.5 * if x == y { 0.75 } else { 0.25 }
        })
        .expect("valid fixture")
    }

    /// `Z` a fair bit independent of `(X, Y)`, with `X = Y` flipped w.p. 0.2.
    pub fn independence() -> JointPmf3 {
        JointPmf3::from_weights([2, 2, 2], |x, y, _z| 0.25 * if x == y { 0.8 } else { 0.2 })
            .expect("valid fixture")
    }
}
