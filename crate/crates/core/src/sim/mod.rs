//! Closed-loop simulation: a replayed prosumption trace plus battery
//! physics, driven step by step by the tracking controller.

mod artifacts;
mod plant;
mod report;

pub use artifacts::{
    read_plot, read_trace, read_trace_records, write_plots, write_report, write_trace, write_trace_records, PlotData,
    PlotKind, TRACE_COLUMNS,
};
pub use plant::{plant_parameters, Plant, PlantConfig, PlantModel, PlantState};
pub use report::{
    combined_report, error_stats, peak_shave_check, report_from_records, slot_averages, tracking_report, ErrorStats, PeakViolation,
    TrackingReport, PEAK_TOLERANCE_KW,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::battery::{kalman_update, BatteryError, CovarianceUpdate, KalmanState, ParameterSet};
use crate::dayahead::{plan_day, DayAheadConfig, DayAheadError, DispatchPlan, PlanTable};
use crate::forecast::{point_forecast, select_days, ForecastError, HistoricalDay};
use crate::mpc::{alpha, build_problem, solve, DecisionStatus, ModelBank, MpcError, MpcLimits, Telemetry};
use crate::textio::TableError;
use crate::timegrid::{average_gcp_power, window_of, TimeGridError, N_SLOTS, N_STEPS, STEPS_PER_SLOT};

const PERTURBATION_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 1 << 20;
const TRACE_STREAM: u64 = 1 << 30;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{what} has {got} entries, expected {expected}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("day {day}, step {k}: plant SOC {soc} left [0, 1]")]
    PlantAbort { day: usize, k: usize, soc: f64 },
    #[error("controller: {0}")]
    Mpc(#[from] MpcError),
    #[error("battery model: {0}")]
    Battery(#[from] BatteryError),
    #[error("time grid: {0}")]
    TimeGrid(#[from] TimeGridError),
    #[error("forecast: {0}")]
    Forecast(#[from] ForecastError),
    #[error("table: {0}")]
    Table(#[from] TableError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Prosumption at control-step resolution, kW.
#[derive(Debug, Clone, PartialEq)]
pub struct ProsumptionTrace {
    pub l: Vec<f64>,
}

impl ProsumptionTrace {
    /// Each slot value held for its 30 steps.
    pub fn piecewise_constant(profile: &[f64]) -> Result<Self, SimError> {
        check_len("profile", N_SLOTS, profile.len())?;
        Ok(Self {
            l: (0..N_STEPS).map(|k| profile[k / STEPS_PER_SLOT]).collect(),
        })
    }

    /// Slot values plus a stationary AR(1) fluctuation with std-dev `sd`.
    pub fn with_fluctuation(profile: &[f64], sd: f64, rho: f64, rng: &mut ChaCha8Rng) -> Result<Self, SimError> {
        let mut t = Self::piecewise_constant(profile)?;
        let innov = sd * (1.0 - rho * rho).sqrt();
        let mut z = sd * rng.sample::<f64, _>(StandardNormal);
        for l in t.l.iter_mut() {
            *l += z;
            z = rho * z + innov * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(t)
    }

    pub fn from_values(l: Vec<f64>) -> Result<Self, SimError> {
        check_len("trace", N_STEPS, l.len())?;
        Ok(Self { l })
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), SimError> {
    if expected == got {
        Ok(())
    } else {
        Err(SimError::Length { what, expected, got })
    }
}

/// Telemetry of the last executed step, read at the next step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub p_gcp: f64,
    pub v: f64,
    pub i: f64,
    pub b: f64,
}

/// Controller memory carried between steps and days.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub kalman: KalmanState,
    pub soc_est: f64,
    pub i_prev: f64,
    pub last_l: f64,
    pub pending: Option<Measurement>,
}

impl ControllerState {
    pub fn initial(soc: f64, last_l: f64) -> Self {
        Self {
            kalman: KalmanState::initial(2),
            soc_est: soc,
            i_prev: 0.0,
            last_l,
            pending: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayStart {
    pub plant: PlantState,
    pub controller: ControllerState,
}

impl DayStart {
    /// Battery at rest with both plant and controller at `soc`.
    pub fn rested(plant: &PlantConfig, soc: f64, last_l: f64) -> Self {
        Self {
            plant: PlantState::rested(plant.model, soc),
            controller: ControllerState::initial(soc, last_l),
        }
    }
}

/// Everything that stays fixed over a run.
#[derive(Debug, Clone, PartialEq)]
#[derive(Default)]
pub struct SimSetup {
    pub plant: PlantConfig,
    pub limits: MpcLimits,
    pub covariance: CovarianceUpdate,
    /// Nominal parameters known to the controller.
    pub params: ParameterSet,
    pub seed: u64,
}


#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub l: f64,
    pub b: f64,
    pub p: f64,
    /// Plant SOC at the start of the step.
    pub soc: f64,
    pub soc_est: f64,
    pub v: f64,
    pub i: f64,
    pub e_k: f64,
    pub b_setpoint: f64,
    /// `None` when the battery is disabled.
    pub status: Option<DecisionStatus>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub day: usize,
    pub seed: u64,
    pub plant: PlantConfig,
    pub plan: PlanTable,
    pub records: Vec<StepRecord>,
    pub start: DayStart,
    pub end: DayStart,
}

impl SimulationRun {
    pub fn status_count(&self, status: DecisionStatus) -> usize {
        self.records.iter().filter(|r| r.status == Some(status)).count()
    }
}

/// Simulates one day of closed-loop operation.
///
/// At every step the controller reads the previous step's telemetry, updates
/// its state estimate and SOC, builds and solves the step problem for the
/// current slot, and the plant executes the first current.
pub fn run_day(
    plan: &PlanTable,
    trace: &ProsumptionTrace,
    setup: &SimSetup,
    day: usize,
    start: &DayStart,
) -> Result<SimulationRun, SimError> {
    setup.plant.validate()?;
    setup.limits.validate()?;
    check_len("plan", N_SLOTS, plan.p_hat.len())?;
    check_len("trace", N_STEPS, trace.l.len())?;
    let bank = ModelBank::new(setup.params, Default::default())?;
    let mut plant = Plant::new(
        &setup.plant,
        plant_parameters(&setup.plant, &setup.params, setup.seed),
        start.plant.clone(),
    )?;
    let mut rng = stream_rng(setup.seed, NOISE_STREAM + day as u64);
    let a = alpha(setup.plant.converter_efficiency);
    let eta = setup.plant.converter_efficiency;
    let mut ctrl = start.controller.clone();
    let mut slot_samples = Vec::with_capacity(STEPS_PER_SLOT);
    let mut records = Vec::with_capacity(N_STEPS);
    for k in 0..N_STEPS {
        let window = window_of(k)?;
        if k == window.k_lo {
            slot_samples.clear();
        }
        if let Some(m) = ctrl.pending.take() {
            ctrl.last_l = m.p_gcp - m.b;
            if k > window.k_lo {
                slot_samples.push(m.p_gcp);
            }
            let (_, model) = bank.model(ctrl.soc_est);
            ctrl.kalman = kalman_update(&ctrl.kalman, model, m.i, m.v, setup.covariance);
            ctrl.soc_est = bank.soc_model.step(ctrl.soc_est, m.i);
            ctrl.i_prev = m.i;
        }
        let tel = Telemetry {
            p_k: average_gcp_power(&window, k, &slot_samples)?,
            soc_k: ctrl.soc_est,
            x_k: ctrl.kalman.x.clone(),
            last_l: ctrl.last_l,
            i_prev: ctrl.i_prev,
        };
        let problem = build_problem(k, &window, plan.p_hat[window.slot], &tel, &bank, &setup.limits, a)?;
        let (status, b_setpoint, i) = if setup.plant.bess_enabled {
            let d = solve(&problem);
            (Some(d.status), d.b_setpoint, plant.actuate(d.b_setpoint, &mut rng))
        } else {
            (None, 0.0, 0.0)
        };
        let v = plant.terminal_voltage(i);
        let b = eta * v * i / 1000.0;
        let l = trace.l[k];
        let p = l + b;
        records.push(StepRecord {
            k,
            l,
            b,
            p,
            soc: plant.state.soc,
            soc_est: ctrl.soc_est,
            v,
            i,
            e_k: problem.e_k,
            b_setpoint,
            status,
        });
        let v_end = plant.step(i);
        if !(0.0..=1.0).contains(&plant.state.soc) {
            return Err(SimError::PlantAbort {
                day,
                k,
                soc: plant.state.soc,
            });
        }
        let v_noise: f64 = rng.sample(StandardNormal);
        let p_noise: f64 = rng.sample(StandardNormal);
        ctrl.pending = Some(Measurement {
            p_gcp: p + setup.plant.power_noise_sd * p_noise,
            v: v_end + setup.plant.voltage_noise_sd * v_noise,
            i,
            b,
        });
    }
    Ok(SimulationRun {
        day,
        seed: setup.seed,
        plant: setup.plant.clone(),
        plan: plan.clone(),
        records,
        start: start.clone(),
        end: DayStart {
            plant: plant.state,
            controller: ctrl,
        },
    })
}

/// Options of a chained multi-day run.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiDaySetup {
    pub sim: SimSetup,
    pub dayahead: DayAheadConfig,
    pub initial_soc: f64,
    /// Relative bias applied to every forecast (0.05 = 5% high).
    pub forecast_bias: f64,
    /// Step of the previous day at which the next plan is computed.
    pub plan_lead_step: usize,
}

impl Default for MultiDaySetup {
    fn default() -> Self {
        Self {
            sim: SimSetup::default(),
            dayahead: DayAheadConfig::default(),
            initial_soc: 0.5,
            forecast_bias: 0.0,
            plan_lead_step: N_STEPS - 12 * STEPS_PER_SLOT,
        }
    }
}

#[derive(Debug)]
pub struct MultiDayRun {
    pub runs: Vec<SimulationRun>,
    pub plans: Vec<DispatchPlan>,
    /// Day whose plan could not be computed, which ended the chain.
    pub stopped: Option<(usize, DayAheadError)>,
}

/// Plans the target day from `history` with the configured bias.
pub fn forecast_and_plan(
    history: &[HistoricalDay],
    target: &HistoricalDay,
    cfg: &DayAheadConfig,
    bias: f64,
) -> Result<DispatchPlan, DayAheadError> {
    let info = target.target_info(target.daily_radiation);
    let forecast = point_forecast(&select_days(history, &info)?)?;
    let forecast = if bias == 0.0 { forecast } else { forecast.scaled(1.0 + bias) };
    plan_day(&forecast, cfg)
}

/// The 10-second trace of `day` generated from its slot profile with the
/// configured intra-slot fluctuation.
pub fn realized_trace(profile: &[f64], plant: &PlantConfig, seed: u64, day: usize) -> Result<ProsumptionTrace, SimError> {
    let mut rng = stream_rng(seed, TRACE_STREAM + day as u64);
    ProsumptionTrace::with_fluctuation(profile, plant.intra_slot_sd, plant.intra_slot_rho, &mut rng)
}

/// Simulates the `realized` days back to back.
///
/// Each day is forecast from `history` plus the days already simulated, and
/// planned with the controller's SOC estimate at `plan_lead_step` of the
/// previous day taken as the starting state of energy.
pub fn run_multi_day(
    history: &[HistoricalDay],
    realized: &[HistoricalDay],
    setup: &MultiDaySetup,
) -> Result<MultiDayRun, SimError> {
    if realized.is_empty() {
        return Err(SimError::Config("at least one day must be simulated".into()));
    }
    if setup.plan_lead_step >= N_STEPS {
        return Err(SimError::Config(format!("plan_lead_step must be below {N_STEPS}")));
    }
    let cap = setup.sim.plant.capacity_kwh;
    let mut known: Vec<HistoricalDay> = history.to_vec();
    let mut out = MultiDayRun {
        runs: Vec::new(),
        plans: Vec::new(),
        stopped: None,
    };
    let mut start: Option<DayStart> = None;
    let mut soc_at_planning = setup.initial_soc;
    for (d, today) in realized.iter().enumerate() {
        let cfg = DayAheadConfig {
            soe0: soc_at_planning * cap,
            ..setup.dayahead
        };
        let plan = match forecast_and_plan(&known, today, &cfg, setup.forecast_bias) {
            Ok(p) => p,
            Err(e) => {
                log::error!("day {d}: planning failed: {e}");
                out.stopped = Some((d, e));
                break;
            }
        };
        let s = start
            .take()
            .unwrap_or_else(|| DayStart::rested(&setup.sim.plant, setup.initial_soc, plan.forecast.point[0]));
        let trace = realized_trace(&today.profile, &setup.sim.plant, setup.sim.seed, d)?;
        let run = run_day(&PlanTable::from(&plan), &trace, &setup.sim, d, &s)?;
        soc_at_planning = run.records[setup.plan_lead_step].soc_est;
        start = Some(run.end.clone());
        log::info!(
            "day {d}: plant SOC {:.3} -> {:.3}, offset mean {:+.2} kW",
            run.start.plant.soc,
            run.end.plant.soc,
            plan.offset.f.iter().sum::<f64>() / N_SLOTS as f64
        );
        out.runs.push(run);
        out.plans.push(plan);
        known.push(today.clone());
    }
    Ok(out)
}

/// Runs `n` independent jobs on a pool of scoped worker threads.
pub fn run_parallel<T, F>(n: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = std::thread::available_parallelism().map_or(1, |w| w.get()).min(n.max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut results: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let slots = std::sync::Mutex::new(&mut results);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if idx >= n {
                    break;
                }
                let r = job(idx);
                slots.lock().expect("result lock")[idx] = Some(r);
            });
        }
    });
    results.into_iter().map(|r| r.expect("every job ran")).collect()
}
