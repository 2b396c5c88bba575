//! Day-ahead dispatch plan: the offset profile that keeps the battery within
//! its energy and power limits for every realization inside the forecast
//! envelope, and the resulting plan `p_hat = point + offset`.
//!
//! Per slot `i` the battery must absorb `F_i + L↓_i` in the high-consumption
//! case and `F_i + L↑_i` in the low-consumption case. Splitting both into
//! non-negative parts `K± ` and `G±` turns the worst-case energy recursions
//! into linear constraints; minimizing `Σ(K⁺ + K⁻ + G⁺ + G⁻)` then yields a
//! linear program.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecast::ProsumptionForecast;
use crate::solver::{solve_lp, LinearProgram, LpRow, SolveCertificate, SolveStatus, SolverError};
use crate::textio::{read_table, write_table, TableError};
use crate::timegrid::{N_SLOTS, SLOT_SECONDS};

/// Tolerance of the independent feasibility check, kWh / kW.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OffsetObjective {
    /// `Σ(K⁺ + K⁻ + G⁺ + G⁻)`.
    #[default]
    L1,
    /// `Σ F²` with a small L1 term to keep the split unique.
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DayAheadConfig {
    pub soe_min: f64,
    pub soe_max: f64,
    pub b_min: f64,
    pub b_max: f64,
    /// Optional cap on the planned GCP power, kW.
    pub p_max: Option<f64>,
    pub eta: f64,
    /// Slot length, s.
    pub ts: f64,
    /// Predicted SOE at the start of the day, kWh.
    pub soe0: f64,
    /// Margin tightening both SOE bounds, kWh.
    pub soe_backoff: f64,
    /// Margin tightening both power bounds, kW.
    pub power_backoff: f64,
    pub objective: OffsetObjective,
}

impl Default for DayAheadConfig {
    fn default() -> Self {
        Self {
            soe_min: 50.0,
            soe_max: 450.0,
            b_min: -450.0,
            b_max: 450.0,
            p_max: None,
            eta: 0.96,
            ts: SLOT_SECONDS,
            soe0: 250.0,
            soe_backoff: 0.0,
            power_backoff: 0.0,
            objective: OffsetObjective::L1,
        }
    }
}

impl DayAheadConfig {
    pub fn validate(&self) -> Result<(), DayAheadError> {
        let bad = |m: &str| Err(DayAheadError::Config(m.to_string()));
        let all = [self.soe_min, self.soe_max, self.b_min, self.b_max, self.eta, self.ts, self.soe0, self.soe_backoff, self.power_backoff];
        if all.iter().any(|v| !v.is_finite()) || self.p_max.is_some_and(|p| !p.is_finite()) {
            return bad("non-finite value");
        }
        if self.soe_min + self.soe_backoff >= self.soe_max - self.soe_backoff {
            return bad("soe_min must be below soe_max (after back-off)");
        }
        if !(self.b_min + self.power_backoff < 0.0 && 0.0 < self.b_max - self.power_backoff) {
            return bad("need b_min < 0 < b_max (after back-off)");
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad("eta must lie in (0, 1]");
        }
        if self.ts <= 0.0 || self.soe_backoff < 0.0 || self.power_backoff < 0.0 {
            return bad("ts must be positive and back-offs non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DayAheadError {
    #[error("invalid day-ahead configuration: {0}")]
    Config(String),
    #[error("bad slot count {0}")]
    Length(usize),
    #[error("day-ahead problem infeasible; first violated slot {} (phase-1 residual {residual:.4})", .first_slot.map_or("unknown".to_string(), |s| s.to_string()))]
    Infeasible { first_slot: Option<usize>, residual: f64 },
    #[error("day-ahead solver did not converge (status {status:?}, KKT residual {kkt:e})")]
    Solver { status: SolveStatus, kkt: f64 },
    #[error("solver rejected the problem: {0}")]
    Problem(#[from] SolverError),
    #[error("plan file: {0}")]
    File(#[from] TableError),
    #[error("offset search exhausted its budget of {0} nodes without an exact solution")]
    SearchLimit(usize),
    #[error("forecast: {0}")]
    Forecast(#[from] crate::forecast::ForecastError),
}

/// `(β⁺, β⁻)`: stored kWh per kW of charging, drawn kWh per kW of discharging over one slot.
pub fn beta_coeffs(cfg: &DayAheadConfig) -> (f64, f64) {
    let h = cfg.ts / 3600.0;
    (h * cfg.eta, h / cfg.eta)
}

/// Non-negative parts of the two worst-case battery powers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OffsetSplit {
    pub k_plus: Vec<f64>,
    pub k_minus: Vec<f64>,
    pub g_plus: Vec<f64>,
    pub g_minus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetPlan {
    /// Offset per slot, kW.
    pub f: Vec<f64>,
    /// Worst-case SOE trajectories re-propagated from `f`, 289 entries, kWh.
    pub soe_low: Vec<f64>,
    pub soe_high: Vec<f64>,
    /// SOE trajectories as carried by the optimizer.
    pub lp_soe_low: Vec<f64>,
    pub lp_soe_high: Vec<f64>,
    pub split: OffsetSplit,
    pub objective: f64,
    pub certificate: Option<SolveCertificate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchPlan {
    pub p_hat: Vec<f64>,
    pub forecast: ProsumptionForecast,
    pub offset: OffsetPlan,
}

/// Applies the worst-case energy recursions to an offset profile.
pub fn worst_case_soe(f: &[f64], forecast: &ProsumptionForecast, cfg: &DayAheadConfig) -> (Vec<f64>, Vec<f64>) {
    let (bp, bm) = beta_coeffs(cfg);
    let step = |soe: f64, p: f64| soe + bp * p.max(0.0) - bm * (-p).max(0.0);
    let mut low = Vec::with_capacity(f.len() + 1);
    let mut high = Vec::with_capacity(f.len() + 1);
    low.push(cfg.soe0);
    high.push(cfg.soe0);
    for (i, fi) in f.iter().enumerate() {
        low.push(step(low[i], fi + forecast.envelope_low[i]));
        high.push(step(high[i], fi + forecast.envelope_high[i]));
    }
    (low, high)
}

/// A constraint broken by an offset profile.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub slot: usize,
    pub what: &'static str,
    pub amount: f64,
}

/// Independent check of every plan constraint. Returns the first violation.
pub fn check_offset(f: &[f64], forecast: &ProsumptionForecast, cfg: &DayAheadConfig) -> Result<(), Violation> {
    let (low, high) = worst_case_soe(f, forecast, cfg);
    let tol = FEASIBILITY_TOLERANCE;
    for i in 0..f.len() {
        let checks = [
            ("soe_low below minimum", cfg.soe_min + cfg.soe_backoff - low[i + 1]),
            ("soe_high above maximum", high[i + 1] - (cfg.soe_max - cfg.soe_backoff)),
            ("battery power below b_min", cfg.b_min + cfg.power_backoff - (f[i] + forecast.envelope_low[i])),
            ("battery power above b_max", f[i] + forecast.envelope_high[i] - (cfg.b_max - cfg.power_backoff)),
            ("plan above p_max", cfg.p_max.map_or(f64::NEG_INFINITY, |p| forecast.point[i] + f[i] - p)),
        ];
        for (what, amount) in checks {
            if amount > tol * (1.0 + cfg.soe_max.abs().max(cfg.b_max.abs())) {
                return Err(Violation { slot: i, what, amount });
            }
        }
    }
    Ok(())
}

/// Node budget of the branch-and-bound search run when the relaxed LP is not exact.
pub const MAX_BRANCH_NODES: usize = 200;

/// Raw solution of one LP of the offset problem.
struct LpOutcome {
    split: OffsetSplit,
    lp_soe_low: Vec<f64>,
    lp_soe_high: Vec<f64>,
    cert: SolveCertificate,
}

impl LpOutcome {
    fn f(&self, fc: &ProsumptionForecast) -> Vec<f64> {
        (0..fc.len())
            .map(|i| self.split.k_plus[i] - self.split.k_minus[i] - fc.envelope_low[i])
            .collect()
    }

    fn objective(&self) -> f64 {
        let s = &self.split;
        (0..s.k_plus.len()).map(|i| s.k_plus[i] + s.k_minus[i] + s.g_plus[i] + s.g_minus[i]).sum()
    }

    /// Unfixed slot where the high-case power is split into both charging and discharging the most.
    fn branch_slot(&self, signs: &[Option<bool>]) -> Option<usize> {
        let s = &self.split;
        (0..signs.len())
            .filter(|&i| signs[i].is_none())
            .map(|i| (i, s.g_plus[i].min(s.g_minus[i])))
            .filter(|(_, overlap)| *overlap > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }
}

fn run_lp(fc: &ProsumptionForecast, cfg: &DayAheadConfig, signs: &[Option<bool>]) -> Result<LpOutcome, DayAheadError> {
    let n = fc.len();
    let built = build_lp(fc, cfg, signs);
    let (sol, cert) = solve_lp(&built.lp)?;
    match cert.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            let witness = sol.witness.unwrap_or_else(|| unreachable!("infeasible status always carries a witness"));
            let first_slot = witness
                .rows
                .iter()
                .map(|(row, _)| match row {
                    LpRow::Eq(r) => built.eq_slot[*r],
                    LpRow::Ineq(r) => built.ineq_slot[*r],
                })
                .min();
            return Err(DayAheadError::Infeasible {
                first_slot,
                residual: witness.phase1_objective,
            });
        }
        SolveStatus::Failure => {
            return Err(DayAheadError::Solver {
                status: cert.status,
                kkt: cert.kkt_residual,
            })
        }
    }
    let s = built.stride;
    let x = &sol.x;
    let pick = |off: usize| -> Vec<f64> { (0..n).map(|i| x[i * s + off]).collect() };
    let mut lp_soe_low = vec![cfg.soe0];
    lp_soe_low.extend(pick(4));
    let mut lp_soe_high = vec![cfg.soe0];
    lp_soe_high.extend(pick(5));
    Ok(LpOutcome {
        split: OffsetSplit {
            k_plus: pick(0),
            k_minus: pick(1),
            g_plus: pick(2),
            g_minus: pick(3),
        },
        lp_soe_low,
        lp_soe_high,
        cert,
    })
}

fn recursion_gap(out: &LpOutcome, fc: &ProsumptionForecast, cfg: &DayAheadConfig) -> f64 {
    let (low, high) = worst_case_soe(&out.f(fc), fc, cfg);
    (0..low.len())
        .map(|i| (low[i] - out.lp_soe_low[i]).abs().max((high[i] - out.lp_soe_high[i]).abs()))
        .fold(0.0, f64::max)
}

/// Solves the robust offset problem for one day.
///
/// The high-case energy ceiling is not convex in the offset, so the split LP
/// is a relaxation: its optimum may charge and discharge within one slot of
/// the high trajectory. When it does, a branch-and-bound search fixes the
/// sign of the high-case power in such slots (which makes their recursion
/// exact) until the relaxed optimum satisfies the exact recursion.
pub fn solve_offset(forecast: &ProsumptionForecast, cfg: &DayAheadConfig) -> Result<OffsetPlan, DayAheadError> {
    cfg.validate()?;
    let n = forecast.len();
    if n == 0 || forecast.envelope_low.len() != n || forecast.envelope_high.len() != n {
        return Err(DayAheadError::Length(n));
    }
    let root = run_lp(forecast, cfg, &vec![None; n])?;
    let out = if recursion_gap(&root, forecast, cfg) <= FEASIBILITY_TOLERANCE {
        root
    } else {
        branch_and_bound(forecast, cfg, root)?
    };
    let f = out.f(forecast);
    let (soe_low, soe_high) = worst_case_soe(&f, forecast, cfg);
    if let Err(v) = check_offset(&f, forecast, cfg) {
        log::warn!("offset plan fails the independent check: {v:?}");
        return Err(DayAheadError::Infeasible {
            first_slot: Some(v.slot),
            residual: v.amount,
        });
    }
    let objective = out.objective();
    Ok(OffsetPlan {
        f,
        soe_low,
        soe_high,
        lp_soe_low: out.lp_soe_low,
        lp_soe_high: out.lp_soe_high,
        split: out.split,
        objective,
        certificate: Some(out.cert),
    })
}

fn branch_and_bound(fc: &ProsumptionForecast, cfg: &DayAheadConfig, root: LpOutcome) -> Result<LpOutcome, DayAheadError> {
    let n = fc.len();
    let root_violation = check_offset(&root.f(fc), fc, cfg).err();
    let mut incumbent: Option<LpOutcome> = None;
    let mut stack = vec![(vec![None; n], root)];
    let mut nodes = 1;
    while let Some((signs, node)) = stack.pop() {
        if incumbent.as_ref().is_some_and(|b| node.objective() >= b.objective() - FEASIBILITY_TOLERANCE) {
            continue;
        }
        if recursion_gap(&node, fc, cfg) <= FEASIBILITY_TOLERANCE {
            incumbent = Some(node);
            continue;
        }
        let Some(slot) = node.branch_slot(&signs) else {
            log::warn!("offset search: node without a branchable slot misses the exact recursion");
            continue;
        };
        let charging_first = node.split.g_plus[slot] >= node.split.g_minus[slot];
        // Pushed in reverse so that the side matching the current net power is explored first.
        for charging in [!charging_first, charging_first] {
            if nodes >= MAX_BRANCH_NODES {
                break;
            }
            let mut child = signs.clone();
            child[slot] = Some(charging);
            nodes += 1;
            match run_lp(fc, cfg, &child) {
                Ok(out) => stack.push((child, out)),
                Err(DayAheadError::Infeasible { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    log::debug!("offset search: {nodes} nodes");
    if nodes >= MAX_BRANCH_NODES {
        log::warn!("offset search stopped at its node budget of {MAX_BRANCH_NODES}");
    }
    match incumbent {
        Some(best) => Ok(best),
        None if nodes >= MAX_BRANCH_NODES => Err(DayAheadError::SearchLimit(MAX_BRANCH_NODES)),
        None => Err(DayAheadError::Infeasible {
            first_slot: root_violation.as_ref().map(|v| v.slot),
            residual: root_violation.map_or(0.0, |v| v.amount),
        }),
    }
}

struct BuiltLp {
    lp: LinearProgram,
    stride: usize,
    eq_slot: Vec<usize>,
    ineq_slot: Vec<usize>,
}

/// Slot-major layout: `[K⁺, K⁻, G⁺, G⁻, SOE↓_{i+1}, SOE↑_{i+1}]` (+ `[F⁺, F⁻]`
/// for the quadratic objective).
///
/// A slot with a fixed sign (`true` = charging) in `signs` constrains its
/// high-case power to that sign and applies the matching efficiency to the
/// net power, in place of the split `β⁺ G⁺ − β⁻ G⁻`.
#[allow(clippy::needless_range_loop)]
fn build_lp(fc: &ProsumptionForecast, cfg: &DayAheadConfig, signs: &[Option<bool>]) -> BuiltLp {
    let n = fc.len();
    let quad = cfg.objective == OffsetObjective::Quadratic;
    let s = if quad { 8 } else { 6 };
    let (bp, bm) = beta_coeffs(cfg);
    let mut lp = LinearProgram::new(n * s);
    let l1_weight = if quad { 1e-6 } else { 1.0 };
    if quad {
        lp.q = vec![0.0; n * s];
    }
    let mut eq_slot = Vec::new();
    let mut ineq_slot = Vec::new();
    let b_lo = cfg.b_min + cfg.power_backoff;
    let b_hi = cfg.b_max - cfg.power_backoff;
    for i in 0..n {
        let v = |off: usize| i * s + off;
        let (kp, km, gp, gm, sl, sh) = (v(0), v(1), v(2), v(3), v(4), v(5));
        for j in [kp, km, gp, gm] {
            lp.c[j] = l1_weight;
            lp.lower[j] = 0.0;
        }
        lp.lower[sl] = cfg.soe_min + cfg.soe_backoff;
        lp.upper[sh] = cfg.soe_max - cfg.soe_backoff;
        let (dn, up) = (fc.envelope_low[i], fc.envelope_high[i]);

        lp.add_eq([(kp, 1.0), (km, -1.0), (gp, -1.0), (gm, 1.0)], dn - up);
        let prev = |off: usize| if i == 0 { None } else { Some(((i - 1) * s + off, -1.0)) };
        lp.add_eq([(sl, 1.0), (kp, -bp), (km, bm)].into_iter().chain(prev(4)), if i == 0 { cfg.soe0 } else { 0.0 });
        let (up_slope, dn_slope) = match signs[i] {
            None => (bp, bm),
            Some(true) => (bp, bp),
            Some(false) => (bm, bm),
        };
        lp.add_eq([(sh, 1.0), (gp, -up_slope), (gm, dn_slope)].into_iter().chain(prev(5)), if i == 0 { cfg.soe0 } else { 0.0 });
        eq_slot.extend([i; 3]);
        if quad {
            let (fp, fm) = (v(6), v(7));
            lp.lower[fp] = 0.0;
            lp.lower[fm] = 0.0;
            lp.q[fp] = 2.0;
            lp.q[fm] = 2.0;
            lp.add_eq([(fp, 1.0), (fm, -1.0), (kp, -1.0), (km, 1.0)], -dn);
            eq_slot.push(i);
        }

        lp.add_ineq([(kp, 1.0), (km, -1.0)], b_hi);
        lp.add_ineq([(kp, -1.0), (km, 1.0)], -b_lo);
        lp.add_ineq([(gp, 1.0), (gm, -1.0)], b_hi);
        lp.add_ineq([(gp, -1.0), (gm, 1.0)], -b_lo);
        ineq_slot.extend([i; 4]);
        if let Some(charging) = signs[i] {
            let d = if charging { 1.0 } else { -1.0 };
            lp.add_ineq([(gp, -d), (gm, d)], 0.0);
            ineq_slot.push(i);
        }
        if let Some(p_max) = cfg.p_max {
            lp.add_ineq([(kp, 1.0), (km, -1.0)], p_max - fc.point[i] + dn);
            ineq_slot.push(i);
        }
    }
    BuiltLp {
        lp,
        stride: s,
        eq_slot,
        ineq_slot,
    }
}

/// `p_hat = point + f`, element-wise.
pub fn assemble_plan(forecast: &ProsumptionForecast, offset: &OffsetPlan) -> DispatchPlan {
    assert_eq!(forecast.len(), offset.f.len(), "forecast and offset lengths differ");
    DispatchPlan {
        p_hat: forecast.point.iter().zip(&offset.f).map(|(l, f)| l + f).collect(),
        forecast: forecast.clone(),
        offset: offset.clone(),
    }
}

/// Forecast plus solved plan in one call.
pub fn plan_day(forecast: &ProsumptionForecast, cfg: &DayAheadConfig) -> Result<DispatchPlan, DayAheadError> {
    let offset = solve_offset(forecast, cfg)?;
    Ok(assemble_plan(forecast, &offset))
}

pub const PLAN_SCHEMA: &str = "dispatch-plan v1";
pub const PLAN_COLUMNS: [&str; 6] = ["slot", "p_hat_kW", "f_kW", "l_hat_kW", "env_low_kW", "env_high_kW"];

/// Columns of a plan file.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanTable {
    pub p_hat: Vec<f64>,
    pub f: Vec<f64>,
    pub l_hat: Vec<f64>,
    pub env_low: Vec<f64>,
    pub env_high: Vec<f64>,
}

impl From<&DispatchPlan> for PlanTable {
    fn from(p: &DispatchPlan) -> Self {
        Self {
            p_hat: p.p_hat.clone(),
            f: p.offset.f.clone(),
            l_hat: p.forecast.point.clone(),
            env_low: p.forecast.envelope_low.clone(),
            env_high: p.forecast.envelope_high.clone(),
        }
    }
}

pub fn write_plan<W: Write>(out: W, plan: &PlanTable, comments: &[String]) -> Result<(), DayAheadError> {
    let rows = (0..plan.p_hat.len()).map(|i| {
        vec![
            i as f64,
            plan.p_hat[i],
            plan.f[i],
            plan.l_hat[i],
            plan.env_low[i],
            plan.env_high[i],
        ]
    });
    write_table(out, PLAN_SCHEMA, comments, &PLAN_COLUMNS, rows)?;
    Ok(())
}

pub fn read_plan<R: Read>(input: R) -> Result<PlanTable, DayAheadError> {
    let t = read_table(input, PLAN_SCHEMA, &PLAN_COLUMNS)?;
    for c in &t.comments {
        log::debug!("plan file: {c}");
    }
    if t.rows.len() != N_SLOTS {
        return Err(DayAheadError::Length(t.rows.len()));
    }
    for (i, r) in t.rows.iter().enumerate() {
        if r[0] != i as f64 {
            return Err(TableError::Row {
                row: i,
                msg: format!("slot column must be {i}, found {}", r[0]),
            }
            .into());
        }
    }
    let col = |c: usize| t.rows.iter().map(|r| r[c]).collect::<Vec<_>>();
    Ok(PlanTable {
        p_hat: col(1),
        f: col(2),
        l_hat: col(3),
        env_low: col(4),
        env_high: col(5),
    })
}
