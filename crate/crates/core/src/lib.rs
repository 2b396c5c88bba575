//! Day-ahead dispatch planning and real-time tracking for a distribution
//! feeder whose prosumption is made dispatchable by a co-located battery.
//!
//! The crate is organised bottom-up:
//!
//! * [`timegrid`]: the 5-minute dispatch grid and 10-second control grid.
//! * [`forecast`]: similar-day prosumption forecasts and uncertainty envelopes.
//! * [`solver`]: LP and single-quadratic-constraint QP interior-point kernels.
//! * [`dayahead`]: robust offset-plan optimization and dispatch plan assembly.
//! * [`battery`]: SOC-scheduled equivalent-circuit voltage models, SOC
//!   integrator, transition matrices and Kalman filtering.
//! * [`mpc`]: the shrinking-horizon current controller.
//! * [`sim`]: closed-loop plant simulation, run artifacts and tracking reports.
//! * [`config`]: the run configuration document.

pub mod battery;
pub mod config;
pub mod dayahead;
pub mod forecast;
pub mod mpc;
pub mod sim;
pub mod solver;
pub mod timegrid;

mod textio;

pub use battery::{DiscreteStateSpace, KalmanState, TtcParameters};
pub use dayahead::{DayAheadConfig, DispatchPlan, OffsetPlan};
pub use forecast::{HistoricalDay, ProsumptionForecast, TargetDayInfo};
pub use mpc::{ControlDecision, MpcLimits};
pub use timegrid::{SlotWindow, TimeGrid};
