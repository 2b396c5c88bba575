//! Battery models: SOC-scheduled equivalent-circuit parameters, the reduced
//! discrete voltage model, the SOC integrator, transition matrices for
//! horizon predictions and the voltage-state Kalman filter.

mod kalman;
mod model;
mod params;
mod soc;

pub use kalman::{kalman_update, CovarianceUpdate, KalmanState, INITIAL_VARIANCE};
pub use model::{
    build_transition, reduce_and_discretize, voltage_step, ContinuousStateSpace, DiscreteStateSpace,
    TransitionMatrices,
};
pub use params::{
    read_parameter_overrides, schedule_index, schedule_model, nominal_parameters, write_parameter_table, ParameterSet,
    SocRange, TtcParameters,
};
pub use soc::{soc_step, SocModel, NOMINAL_CAPACITY_AH};

/// Control / sampling period of the battery models, seconds.
pub const TS: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum BatteryError {
    #[error("{range}: discrete model unstable, spectral radius {radius}")]
    Unstable { range: SocRange, radius: f64 },
    #[error("{range}: invalid parameter {name} = {value}")]
    InvalidParameter {
        range: SocRange,
        name: &'static str,
        value: f64,
    },
    #[error("sampling period must be positive, got {0}")]
    SamplingPeriod(f64),
    #[error("parameter file: {0}")]
    File(String),
}
