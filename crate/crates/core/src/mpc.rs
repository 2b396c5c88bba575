//! Shrinking-horizon tracking controller.
//!
//! At control step `k` inside slot window `[k_lo, k_hi]` the controller
//! computes the energy the battery still has to exchange to make the slot's
//! average GCP power hit the plan, then chooses the current trajectory for
//! the remaining steps that maximizes the total current while the predicted
//! battery energy throughput stays at or below that target. Only the first
//! current is applied.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::{
    build_transition, reduce_and_discretize, BatteryError, DiscreteStateSpace, ParameterSet, SocModel, SocRange,
    TransitionMatrices, TS,
};
use crate::solver::{
    min_eigenvalue, solve_qcqp, QcqpProblem, QcqpSolution, SolveCertificate, SolveStatus, SolverError, PSD_TOLERANCE,
};
use crate::timegrid::{SlotWindow, SLOT_SECONDS, STEPS_PER_SLOT};

/// Converter efficiency between battery DC power and GCP AC power.
pub const CONVERTER_EFFICIENCY: f64 = 0.98;

/// kWh of AC energy per (V·A) of DC power held for one control step.
pub fn alpha(converter_efficiency: f64) -> f64 {
    TS / 3600.0 * converter_efficiency / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcLimits {
    pub i_min: f64,
    pub i_max: f64,
    pub di_min: f64,
    pub di_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    /// Back-off applied to both SOC bounds inside the controller.
    pub soc_margin: f64,
}

impl Default for MpcLimits {
    fn default() -> Self {
        Self {
            i_min: -810.0,
            i_max: 810.0,
            di_min: -200.0,
            di_max: 200.0,
            v_min: 530.0,
            v_max: 750.0,
            soc_min: 0.1,
            soc_max: 0.9,
            soc_margin: 0.005,
        }
    }
}

impl MpcLimits {
    pub fn validate(&self) -> Result<(), MpcError> {
        let ok = self.i_min < 0.0
            && 0.0 < self.i_max
            && self.di_min < 0.0
            && 0.0 < self.di_max
            && self.v_min < self.v_max
            && 0.0 <= self.soc_min
            && self.soc_min < self.soc_max
            && self.soc_max <= 1.0
            && self.soc_margin >= 0.0
            && 2.0 * self.soc_margin < self.soc_max - self.soc_min;
        if ok {
            Ok(())
        } else {
            Err(MpcError::Limits(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("invalid limits: {0}")]
    Limits(String),
    #[error("{range}: horizon-{horizon} input response is not positive semidefinite (min eigenvalue {min_eig:e})")]
    NotConvex {
        range: SocRange,
        horizon: usize,
        min_eig: f64,
    },
    #[error("battery model: {0}")]
    Battery(#[from] BatteryError),
    #[error("short-term prediction has {got} values, expected {expected}")]
    PredictionLength { expected: usize, got: usize },
    #[error("solver: {0}")]
    Solver(#[from] SolverError),
}

/// `(300/3600) (p_star - p_plus)`: kWh the battery must still exchange in the slot.
pub fn dispatch_error(p_star: f64, p_plus: f64) -> f64 {
    SLOT_SECONDS / 3600.0 * (p_star - p_plus)
}

/// Expected slot-average GCP power: measured average so far plus predictions.
pub fn expected_average(window: &SlotWindow, k: usize, p_k: f64, short_term: &[f64]) -> Result<f64, MpcError> {
    let expected = window.remaining(k);
    if short_term.len() != expected {
        return Err(MpcError::PredictionLength {
            expected,
            got: short_term.len(),
        });
    }
    let observed = (k - window.k_lo) as f64;
    Ok((observed * p_k + short_term.iter().sum::<f64>()) / STEPS_PER_SLOT as f64)
}

/// `v i / 1000`, kW (positive = charging).
pub fn to_power_setpoint(i_first: f64, v_k: f64) -> f64 {
    v_k * i_first / 1000.0
}

/// Discrete voltage models for every SOC range with their transition
/// matrices for horizons `1..=STEPS_PER_SLOT`, checked for convexity.
#[derive(Debug, Clone)]
pub struct ModelBank {
    pub params: ParameterSet,
    pub models: Vec<DiscreteStateSpace>,
    pub soc_model: SocModel,
    voltage: Vec<Vec<TransitionMatrices>>,
    soc: Vec<TransitionMatrices>,
}

impl ModelBank {
    pub fn new(params: ParameterSet, soc_model: SocModel) -> Result<Self, MpcError> {
        let models = params
            .iter()
            .map(|p| reduce_and_discretize(p, TS))
            .collect::<Result<Vec<_>, _>>()?;
        let mut voltage = Vec::with_capacity(models.len());
        for m in &models {
            let mut per_h = Vec::with_capacity(STEPS_PER_SLOT);
            for h in 1..=STEPS_PER_SLOT {
                let t = build_transition(m, h);
                let min_eig = min_eigenvalue(&t.psi_i);
                if min_eig < -PSD_TOLERANCE {
                    return Err(MpcError::NotConvex {
                        range: m.range.unwrap_or(SocRange::R0to20),
                        horizon: h,
                        min_eig,
                    });
                }
                per_h.push(t);
            }
            voltage.push(per_h);
        }
        let soc_dss = soc_model.discrete();
        let soc = (1..=STEPS_PER_SLOT).map(|h| build_transition(&soc_dss, h + 1)).collect();
        Ok(Self {
            params,
            models,
            soc_model,
            voltage,
            soc,
        })
    }

    pub fn model(&self, soc: f64) -> (usize, &DiscreteStateSpace) {
        let idx = crate::battery::schedule_index(soc);
        (idx, &self.models[idx])
    }

    pub fn voltage_transition(&self, model: usize, horizon: usize) -> &TransitionMatrices {
        &self.voltage[model][horizon - 1]
    }

    /// SOC transition over `horizon + 1` outputs (row 0 is the current SOC).
    pub fn soc_transition(&self, horizon: usize) -> &TransitionMatrices {
        &self.soc[horizon - 1]
    }
}

/// Measurements and estimates available at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Telemetry {
    /// Average measured GCP power since the slot start, kW.
    pub p_k: f64,
    pub soc_k: f64,
    /// Voltage-model state estimate.
    pub x_k: DVector<f64>,
    /// Last measured prosumption, kW.
    pub last_l: f64,
    /// Current applied over the previous step, A.
    pub i_prev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub k: usize,
    pub horizon: usize,
    pub e_k: f64,
    pub voltage: TransitionMatrices,
    pub soc: TransitionMatrices,
    pub x_k: DVector<f64>,
    pub soc_k: f64,
    pub i_prev: f64,
    pub limits: MpcLimits,
    pub alpha: f64,
    pub range: Option<SocRange>,
}

/// Builds the step-`k` problem for a slot whose plan value is `p_star`.
pub fn build_problem(
    k: usize,
    window: &SlotWindow,
    p_star: f64,
    tel: &Telemetry,
    bank: &ModelBank,
    limits: &MpcLimits,
    alpha: f64,
) -> Result<MpcProblem, MpcError> {
    let horizon = window.remaining(k);
    let short = crate::forecast::short_term_predict(tel.last_l, horizon);
    let p_plus = expected_average(window, k, tel.p_k, &short)?;
    let e_k = dispatch_error(p_star, p_plus);
    let (idx, model) = bank.model(tel.soc_k);
    Ok(MpcProblem {
        k,
        horizon,
        e_k,
        voltage: bank.voltage_transition(idx, horizon).clone(),
        soc: bank.soc_transition(horizon).clone(),
        x_k: tel.x_k.clone(),
        soc_k: tel.soc_k,
        i_prev: tel.i_prev,
        limits: *limits,
        alpha,
        range: model.range,
    })
}

/// Row groups of the linear constraint system, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowLayout {
    pub current: (usize, usize),
    pub rate: (usize, usize),
    pub voltage: (usize, usize),
    pub soc: (usize, usize),
}

impl MpcProblem {
    /// Voltage predicted with zero current: `phi x_k + psi_1 1`.
    pub fn free_voltage(&self) -> DVector<f64> {
        &self.voltage.phi * &self.x_k + self.voltage.constant_response()
    }

    pub fn predicted_voltage(&self, i: &DVector<f64>) -> DVector<f64> {
        self.free_voltage() + &self.voltage.psi_i * i
    }

    /// Predicted energy exchanged over the horizon, kWh.
    pub fn throughput(&self, i: &DVector<f64>) -> f64 {
        self.alpha * self.predicted_voltage(i).dot(i)
    }

    /// SOC after each applied current.
    pub fn predicted_soc(&self, i: &DVector<f64>) -> DVector<f64> {
        let h = self.horizon;
        let psi = self.soc.psi_i.view((1, 0), (h, h));
        DVector::from_element(h, self.soc_k) + psi * i
    }

    /// Linear constraints `A i ≤ b` (box, rate, voltage, SOC).
    pub fn linear_constraints(&self) -> (DMatrix<f64>, DVector<f64>, RowLayout) {
        let h = self.horizon;
        let lim = &self.limits;
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(8 * h);
        let unit = |j: usize, s: f64| {
            let mut r = vec![0.0; h];
            r[j] = s;
            r
        };
        for j in 0..h {
            rows.push((unit(j, 1.0), lim.i_max));
            rows.push((unit(j, -1.0), -lim.i_min));
        }
        let current = (0, rows.len());
        for j in 0..h {
            let mut up = unit(j, 1.0);
            let mut dn = unit(j, -1.0);
            let prev = if j == 0 { self.i_prev } else { 0.0 };
            if j > 0 {
                up[j - 1] = -1.0;
                dn[j - 1] = 1.0;
            }
            rows.push((up, lim.di_max + prev));
            rows.push((dn, -lim.di_min - prev));
        }
        let rate = (current.1, rows.len());
        let free = self.free_voltage();
        for j in 0..h {
            let r: Vec<f64> = self.voltage.psi_i.row(j).iter().copied().collect();
            rows.push((r.clone(), lim.v_max - free[j]));
            rows.push((r.iter().map(|v| -v).collect(), free[j] - lim.v_min));
        }
        let voltage = (rate.1, rows.len());
        for j in 0..h {
            let r: Vec<f64> = self.soc.psi_i.row(j + 1).iter().take(h).copied().collect();
            rows.push((r.clone(), lim.soc_max - lim.soc_margin - self.soc_k));
            rows.push((r.iter().map(|v| -v).collect(), self.soc_k - lim.soc_min - lim.soc_margin));
        }
        let soc = (voltage.1, rows.len());
        let a = DMatrix::from_fn(rows.len(), h, |i, j| rows[i].0[j]);
        let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        (
            a,
            b,
            RowLayout {
                current,
                rate,
                voltage,
                soc,
            },
        )
    }

    /// The full QCQP: `max 1ᵀi  s.t.  α(iᵀψ_i i + (φx + ψ_1 1)ᵀ i) ≤ e_k,  A i ≤ b`.
    ///
    /// The objective weights decrease by [`TIE_BREAK`] over the horizon so
    /// that among trajectories with equal total current the one charging
    /// earliest (or discharging latest) is returned.
    pub fn to_qcqp(&self) -> QcqpProblem {
        let (a, b, _) = self.linear_constraints();
        let h = self.horizon as f64;
        QcqpProblem {
            c: DVector::from_fn(self.horizon, |j, _| 1.0 - TIE_BREAK * j as f64 / h),
            q: &self.voltage.psi_i * self.alpha,
            l: self.free_voltage() * self.alpha,
            r: self.e_k,
            a_ineq: a,
            b_ineq: b,
        }
    }

    /// Least worst-case violation of the voltage and SOC rows (each
    /// normalized by its largest coefficient) with current and rate limits
    /// kept hard. Variables are `(i, t)`.
    fn least_violation_qcqp(&self) -> QcqpProblem {
        let h = self.horizon;
        let (a, b, layout) = self.linear_constraints();
        let m = a.nrows();
        let mut a2 = DMatrix::zeros(m + 1, h + 1);
        let mut b2 = DVector::zeros(m + 1);
        for r in 0..m {
            let soft = r >= layout.voltage.0;
            let s = if soft { a.row(r).amax().max(f64::MIN_POSITIVE) } else { 1.0 };
            a2.view_mut((r, 0), (1, h)).copy_from(&(a.row(r) / s));
            if soft {
                a2[(r, h)] = -1.0;
            }
            b2[r] = b[r] / s;
        }
        a2[(m, h)] = -1.0;
        let mut c = DVector::zeros(h + 1);
        c[h] = -1.0;
        QcqpProblem {
            c,
            q: DMatrix::zeros(h + 1, h + 1),
            l: DVector::zeros(h + 1),
            r: 0.0,
            a_ineq: a2,
            b_ineq: b2,
        }
    }

    /// Epigraph problem minimizing throughput under all linear rows.
    fn min_throughput_qcqp(&self) -> QcqpProblem {
        let h = self.horizon;
        let (a, b, _) = self.linear_constraints();
        let rows = a.nrows();
        let mut q = DMatrix::zeros(h + 1, h + 1);
        q.view_mut((0, 0), (h, h)).copy_from(&(&self.voltage.psi_i * self.alpha));
        let mut l = DVector::zeros(h + 1);
        l.rows_mut(0, h).copy_from(&(self.free_voltage() * self.alpha));
        l[h] = -1.0;
        let mut a2 = DMatrix::zeros(rows, h + 1);
        a2.view_mut((0, 0), (rows, h)).copy_from(&a);
        let mut c = DVector::zeros(h + 1);
        c[h] = -1.0;
        QcqpProblem {
            c,
            q,
            l,
            r: 0.0,
            a_ineq: a2,
            b_ineq: b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionStatus {
    Solved,
    InfeasibleClipped,
    SolverFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ActiveConstraints {
    pub throughput: bool,
    pub current: bool,
    pub rate: bool,
    pub voltage: bool,
    pub soc: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub i_traj: Vec<f64>,
    pub i_first: f64,
    /// Model-predicted voltage at the first step, V.
    pub v_first: f64,
    /// DC power set-point, kW.
    pub b_setpoint: f64,
    pub status: DecisionStatus,
    pub active: ActiveConstraints,
    pub certificate: Option<SolveCertificate>,
}

/// One line of the per-step decision log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecisionRecord {
    pub k: usize,
    pub e_k: f64,
    pub horizon: usize,
    pub status: DecisionStatus,
    pub i_first: f64,
    pub b_setpoint: f64,
    pub throughput_active: bool,
    pub current_active: bool,
    pub rate_active: bool,
    pub voltage_active: bool,
    pub soc_active: bool,
}

impl ControlDecision {
    pub fn record(&self, p: &MpcProblem) -> DecisionRecord {
        DecisionRecord {
            k: p.k,
            e_k: p.e_k,
            horizon: p.horizon,
            status: self.status,
            i_first: self.i_first,
            b_setpoint: self.b_setpoint,
            throughput_active: self.active.throughput,
            current_active: self.active.current,
            rate_active: self.active.rate,
            voltage_active: self.active.voltage,
            soc_active: self.active.soc,
        }
    }
}

/// Relative slack below which a constraint counts as active.
const ACTIVE_TOL: f64 = 1e-6;

fn active_set(p: &MpcProblem, i: &DVector<f64>) -> ActiveConstraints {
    let (a, b, layout) = p.linear_constraints();
    let slack = &b - &a * i;
    let any = |(lo, hi): (usize, usize)| (lo..hi).any(|r| slack[r] <= ACTIVE_TOL * (1.0 + b[r].abs()));
    ActiveConstraints {
        throughput: (p.e_k - p.throughput(i)).abs() <= 1e-4,
        current: any(layout.current),
        rate: any(layout.rate),
        voltage: any(layout.voltage),
        soc: any(layout.soc),
    }
}

fn decision(p: &MpcProblem, i: DVector<f64>, status: DecisionStatus, cert: Option<SolveCertificate>) -> ControlDecision {
    let v_first = p.predicted_voltage(&i)[0];
    let i_first = i[0];
    ControlDecision {
        active: active_set(p, &i),
        i_traj: i.iter().copied().collect(),
        i_first,
        v_first,
        b_setpoint: to_power_setpoint(i_first, v_first),
        status,
        certificate: cert,
    }
}

/// Relative decrease of the objective weights over the horizon.
pub const TIE_BREAK: f64 = 1e-4;

/// Solves the step problem, degrading gracefully when it is infeasible:
/// the throughput target is dropped first (throughput is then minimized
/// under all linear constraints); if the linear constraints themselves
/// conflict, the current and rate limits are kept and the worst voltage or
/// SOC violation is minimized. A solver failure yields zero current.
pub fn solve(p: &MpcProblem) -> ControlDecision {
    let h = p.horizon;
    let zero = || decision(p, DVector::zeros(h), DecisionStatus::SolverFailure, None);
    let attempt = |q: &QcqpProblem| -> Option<(QcqpSolution, SolveCertificate)> {
        match solve_qcqp(q) {
            Ok(r) => Some(r),
            Err(e) => {
                log::error!("mpc step {}: solver rejected problem: {e}", p.k);
                None
            }
        }
    };
    let failed = |cert: &SolveCertificate| {
        log::warn!("mpc step {}: solver failure (KKT residual {:e})", p.k, cert.kkt_residual);
        zero()
    };
    let Some((sol, cert)) = attempt(&p.to_qcqp()) else {
        return zero();
    };
    match cert.status {
        SolveStatus::Optimal => return decision(p, sol.x, DecisionStatus::Solved, Some(cert)),
        SolveStatus::Failure => return failed(&cert),
        SolveStatus::Infeasible => {}
    }
    let Some((sol, cert)) = attempt(&p.min_throughput_qcqp()) else {
        return zero();
    };
    match cert.status {
        SolveStatus::Optimal => {
            log::debug!("mpc step {}: target {:.4} kWh unreachable, throughput minimized", p.k, p.e_k);
            let i = sol.x.rows(0, h).into_owned();
            return decision(p, i, DecisionStatus::InfeasibleClipped, Some(cert));
        }
        SolveStatus::Failure => return failed(&cert),
        SolveStatus::Infeasible => {}
    }
    let Some((sol, cert)) = attempt(&p.least_violation_qcqp()) else {
        return zero();
    };
    if cert.status != SolveStatus::Optimal {
        return failed(&cert);
    }
    log::debug!("mpc step {}: voltage/SOC limits unreachable, violation {:.3e} minimized", p.k, sol.x[h]);
    let i = sol.x.rows(0, h).into_owned();
    decision(p, i, DecisionStatus::InfeasibleClipped, Some(cert))
}
