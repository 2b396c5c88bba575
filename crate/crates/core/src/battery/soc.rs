use nalgebra::{DMatrix, DVector, RowDVector};

use super::model::DiscreteStateSpace;
use super::TS;

/// Datasheet charge capacity, Ah.
pub const NOMINAL_CAPACITY_AH: f64 = 810.0;

/// Coulomb-counting SOC integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocModel {
    pub c_nom: f64,
    pub ts: f64,
}

impl Default for SocModel {
    fn default() -> Self {
        Self {
            c_nom: NOMINAL_CAPACITY_AH,
            ts: TS,
        }
    }
}

impl SocModel {
    /// SOC change per ampere per step.
    pub fn gain(&self) -> f64 {
        self.ts / 3600.0 / self.c_nom
    }

    pub fn step(&self, soc: f64, i: f64) -> f64 {
        soc + self.gain() * i
    }

    /// The integrator as a scalar state-space model with output = SOC.
    pub fn discrete(&self) -> DiscreteStateSpace {
        DiscreteStateSpace {
            a: DMatrix::identity(1, 1),
            b_i: DVector::from_element(1, self.gain()),
            b_1: DVector::zeros(1),
            c: RowDVector::from_element(1, 1.0),
            d_i: 0.0,
            d_1: 0.0,
            k: DMatrix::zeros(1, 1),
            meas_var: 0.0,
            range: None,
        }
    }
}

/// `soc + (10/3600) i / 810` with the default capacity.
pub fn soc_step(soc: f64, i: f64) -> f64 {
    SocModel::default().step(soc, i)
}
