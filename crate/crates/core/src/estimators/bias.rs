use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cardinalities and batch size that determine the leading bias of the plug-in CMI.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasModel {
    pub k_u: usize,
    pub k_y: usize,
    pub k_z: usize,
    pub batch_size: usize,
}

impl BiasModel {
    pub fn new(k_u: usize, k_y: usize, k_z: usize, batch_size: usize) -> Result<Self> {
        if k_u == 0 || k_y == 0 || k_z == 0 || batch_size == 0 {
            return Err(Error::Domain(
                "bias model needs positive cardinalities and batch size".into(),
            ));
        }
        Ok(Self {
            k_u,
            k_y,
            k_z,
            batch_size,
        })
    }

    /// `K_Y (K_U − 1)(K_Z − 1) / (2|B|)`.
    pub fn bias(&self) -> f64 {
        (self.k_y * (self.k_u - 1) * (self.k_z - 1)) as f64 / (2.0 * self.batch_size as f64)
    }
}

/// Subtracts the leading-order bias from a raw plug-in estimate, flooring at zero.
pub fn miller_madow_correct(raw: f64, model: &BiasModel) -> f64 {
    (raw - model.bias()).max(0.0)
}

/// Inputs of the high-probability deviation bound of the plug-in CMI.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationParams {
    pub k_u: usize,
    pub k_y: usize,
    pub k_z: usize,
    /// Lower bound on `P(Y = y)`.
    pub p_min: f64,
    /// Lower bound on `P(u, z | y)`.
    pub q_min: f64,
    pub delta: f64,
    pub batch_size: usize,
}

impl ConcentrationParams {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.delta) {
            return Err(Error::Domain(format!(
                "delta = {} outside (0, 1)",
                self.delta
            )));
        }
        if !open_unit(self.p_min) && self.p_min != 1.0 {
            return Err(Error::Domain(format!(
                "p_min = {} outside (0, 1]",
                self.p_min
            )));
        }
        if !open_unit(self.q_min) && self.q_min != 1.0 {
            return Err(Error::Domain(format!(
                "q_min = {} outside (0, 1]",
                self.q_min
            )));
        }
        if self.k_u == 0 || self.k_y == 0 || self.k_z == 0 || self.batch_size == 0 {
            return Err(Error::Domain(
                "cardinalities and batch size must be positive".into(),
            ));
        }
        if self.p_min * self.k_y as f64 > 1.0 + 1e-12 {
            return Err(Error::Domain("p_min * K_Y exceeds 1".into()));
        }
        if self.q_min * (self.k_u * self.k_z) as f64 > 1.0 + 1e-12 {
            return Err(Error::Domain("q_min * K_U * K_Z exceeds 1".into()));
        }
        Ok(())
    }

    /// `C = 2√2 (M_max + 6 L_0)` with `M_max = ln(K_U K_Z)` and `L_0 = 1 + ln(2 / q_min)`.
    pub fn constant(&self) -> f64 {
        let m_max = ((self.k_u * self.k_z) as f64).ln();
        let l0 = 1.0 + (2.0 / self.q_min).ln();
        2.0 * std::f64::consts::SQRT_2 * (m_max + 6.0 * l0)
    }
}

/// `C √(ln(2/δ) / |B|)`.
pub fn concentration_bound(params: &ConcentrationParams) -> Result<f64> {
    params.validate()?;
    Ok(params.constant() * ((2.0 / params.delta).ln() / params.batch_size as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(batch_size: usize, delta: f64) -> ConcentrationParams {
        ConcentrationParams {
            k_u: 2,
            k_y: 2,
            k_z: 2,
            p_min: 0.5,
            q_min: 0.25,
            delta,
            batch_size,
        }
    }

    #[test]
    fn miller_madow_examples() {
        let m = BiasModel::new(2, 2, 2, 100).unwrap();
        assert!((miller_madow_correct(0.02, &m) - 0.01).abs() < 1e-15);
        let constant = BiasModel::new(1, 2, 2, 100).unwrap();
        assert_eq!(miller_madow_correct(0.02, &constant), 0.02);
        assert_eq!(miller_madow_correct(0.001, &m), 0.0);
        assert!(BiasModel::new(2, 2, 2, 0).is_err());
    }

    #[test]
    fn concentration_constant_from_definitions() {
        let p = params(10_000, 0.05);
        let c = 2.0 * 2f64.sqrt() * (4f64.ln() + 6.0 * (1.0 + 8f64.ln()));
        assert!((p.constant() - c).abs() < 1e-12);
        assert!((p.constant() - 56.1811).abs() < 1e-3);
        let b = concentration_bound(&p).unwrap();
        assert!((b - c * (40f64.ln() / 10_000.0).sqrt()).abs() < 1e-12);
        assert!((b - 1.07904).abs() < 1e-4);
    }

    #[test]
    fn concentration_scales_with_inverse_root_batch() {
        let a = concentration_bound(&params(1000, 0.05)).unwrap();
        let b = concentration_bound(&params(4000, 0.05)).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn concentration_rejects_bad_delta() {
        assert!(matches!(
            concentration_bound(&params(10, 2.0)),
            Err(Error::Domain(_))
        ));
        assert!(concentration_bound(&params(10, 0.0)).is_err());
    }
}
