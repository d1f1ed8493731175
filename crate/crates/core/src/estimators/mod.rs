//! Sample-based estimators of `I(U;Z|Y)` and the dependence bounds it controls.
//!
//! [`plugin_cmi_hard`] works on category samples; [`soft_cmi`] replaces the
//! hard `u` of each sample by a posterior vector and is differentiable in it.

mod bias;
mod bounds;
pub mod io;
mod soft;

pub use bias::{concentration_bound, miller_madow_correct, BiasModel, ConcentrationParams};
pub use bounds::{
    conditional_dependence_bound_check, conditional_dependence_ratio, dependence_bound_check,
    empirical_covariance_bound, l2_normalized_covariance, normalized_covariance, BoundCheckReport,
};
pub(crate) use soft::soft_cmi_raw;
pub use soft::{soft_cmi, soft_cmi_with_grad, SoftBatch};

use crate::error::{Error, Result};
use crate::finite_dist::JointPmf3;

/// Hard samples `(u_i, y_i, z_i)` with declared cardinalities.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    k_u: usize,
    k_y: usize,
    k_z: usize,
    u: Vec<usize>,
    y: Vec<usize>,
    z: Vec<usize>,
}

impl SampleBatch {
    pub fn new(
        k_u: usize,
        k_y: usize,
        k_z: usize,
        u: Vec<usize>,
        y: Vec<usize>,
        z: Vec<usize>,
    ) -> Result<Self> {
        if u.is_empty() {
            return Err(Error::Empty("sample batch has no rows".into()));
        }
        if u.len() != y.len() || u.len() != z.len() {
            return Err(Error::DimensionMismatch(
                "u, y, z columns differ in length".into(),
            ));
        }
        for (name, col, k) in [("u", &u, k_u), ("y", &y, k_y), ("z", &z, k_z)] {
            if let Some((i, v)) = col.iter().enumerate().find(|(_, &v)| v >= k) {
                return Err(Error::DimensionMismatch(format!(
                    "{name}[{i}] = {v} not below {k}"
                )));
            }
        }
        Ok(Self {
            k_u,
            k_y,
            k_z,
            u,
            y,
            z,
        })
    }

    /// Cardinalities taken as one more than the largest observed index.
    pub fn infer(u: Vec<usize>, y: Vec<usize>, z: Vec<usize>) -> Result<Self> {
        let k = |c: &[usize]| c.iter().max().map_or(1, |m| m + 1);
        Self::new(k(&u), k(&y), k(&z), u, y, z)
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn cards(&self) -> [usize; 3] {
        [self.k_u, self.k_y, self.k_z]
    }

    pub fn u(&self) -> &[usize] {
        &self.u
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn z(&self) -> &[usize] {
        &self.z
    }

    /// Empirical law of `(U, Y, Z)`, with `U` on the first axis.
    pub fn empirical_joint(&self) -> Result<JointPmf3> {
        JointPmf3::empirical(self.cards(), &self.u, &self.y, &self.z)
    }

    /// Smallest empirical `P(u, z | y)` over all cells of observed strata.
    pub fn min_cell_frequency(&self) -> f64 {
        let counts = self.counts();
        let mut min = f64::INFINITY;
        for y in 0..self.k_y {
            let slab = &counts[y * self.k_u * self.k_z..(y + 1) * self.k_u * self.k_z];
            let by: u64 = slab.iter().sum();
            if by == 0 {
                continue;
            }
            for &c in slab {
                min = min.min(c as f64 / by as f64);
            }
        }
        if min.is_finite() {
            min
        } else {
            0.0
        }
    }

    /// Counts indexed `[y][u][z]`.
    fn counts(&self) -> Vec<u64> {
        let mut n = vec![0u64; self.k_y * self.k_u * self.k_z];
        for i in 0..self.len() {
            n[(self.y[i] * self.k_u + self.u[i]) * self.k_z + self.z[i]] += 1;
        }
        n
    }
}

/// Stratified plug-in estimate `Σ_y (B_y/|B|) Î(U;Z | Y=y)`.
pub fn plugin_cmi_hard(batch: &SampleBatch) -> f64 {
    let (ku, kz) = (batch.k_u, batch.k_z);
    let counts = batch.counts();
    let total = batch.len() as f64;
    let mut acc = 0.0;
    let mut nu = vec![0u64; ku];
    let mut nz = vec![0u64; kz];
    for slab in counts.chunks(ku * kz) {
        let by: u64 = slab.iter().sum();
        if by == 0 {
            continue;
        }
        nu.iter_mut().for_each(|c| *c = 0);
        nz.iter_mut().for_each(|c| *c = 0);
        for u in 0..ku {
            for z in 0..kz {
                nu[u] += slab[u * kz + z];
                nz[z] += slab[u * kz + z];
            }
        }
        let by = by as f64;
        for u in 0..ku {
            for z in 0..kz {
                let n = slab[u * kz + z];
                if n > 0 {
                    let n = n as f64;
                    // (B_y / |B|) * (n / B_y) * ln(...) = (n / |B|) * ln(...)
                    acc += n / total * (n * by / (nu[u] as f64 * nz[z] as f64)).ln();
                }
            }
        }
    }
    acc.max(0.0)
}

/// Plug-in `I(U;Y)` from paired category samples.
pub fn plugin_mi_hard(k_u: usize, k_y: usize, u: &[usize], y: &[usize]) -> Result<f64> {
    let j = crate::finite_dist::JointPmf2::from_samples(k_u, k_y, u, y)?;
    Ok(crate::finite_dist::mutual_information(&j))
}
