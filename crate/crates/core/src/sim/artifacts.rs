use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::mpc::{DecisionStatus, MpcLimits};
use crate::textio::{read_table, write_table, TableError};

use super::report::slot_averages;
use super::{ProsumptionTrace, SimError, SimulationRun, StepRecord};

const PROSUMPTION_SCHEMA: &str = "prosumption-trace v1";
const PROSUMPTION_COLUMNS: [&str; 2] = ["k", "l_kW"];

pub fn write_trace<W: Write>(out: W, trace: &ProsumptionTrace) -> Result<(), SimError> {
    let rows = trace.l.iter().enumerate().map(|(k, l)| vec![k as f64, *l]);
    write_table(out, PROSUMPTION_SCHEMA, &[], &PROSUMPTION_COLUMNS, rows)?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<ProsumptionTrace, SimError> {
    let t = read_table(input, PROSUMPTION_SCHEMA, &PROSUMPTION_COLUMNS)?;
    ProsumptionTrace::from_values(t.rows.iter().map(|r| r[1]).collect())
}

const RECORD_SCHEMA: &str = "sim-trace v1";
/// Columns of the per-step run trace. `status`: 0 solved, 1 infeasible-clipped,
/// 2 solver failure, -1 battery disabled.
pub const TRACE_COLUMNS: [&str; 11] = [
    "k", "l_kW", "b_kW", "p_kW", "soc", "soc_est", "v_V", "i_A", "e_kWh", "b_set_kW", "status",
];

fn status_code(s: Option<DecisionStatus>) -> f64 {
    match s {
        Some(DecisionStatus::Solved) => 0.0,
        Some(DecisionStatus::InfeasibleClipped) => 1.0,
        Some(DecisionStatus::SolverFailure) => 2.0,
        None => -1.0,
    }
}

fn status_from_code(c: f64, row: usize) -> Result<Option<DecisionStatus>, TableError> {
    Ok(match c as i64 {
        0 => Some(DecisionStatus::Solved),
        1 => Some(DecisionStatus::InfeasibleClipped),
        2 => Some(DecisionStatus::SolverFailure),
        -1 => None,
        _ => {
            return Err(TableError::Row {
                row,
                msg: format!("unknown status code {c}"),
            })
        }
    })
}

pub fn write_trace_records<W: Write>(out: W, run: &SimulationRun) -> Result<(), SimError> {
    let comments = vec![format!("day {} seed {}", run.day, run.seed)];
    let rows = run.records.iter().map(|r| {
        vec![
            r.k as f64,
            r.l,
            r.b,
            r.p,
            r.soc,
            r.soc_est,
            r.v,
            r.i,
            r.e_k,
            r.b_setpoint,
            status_code(r.status),
        ]
    });
    write_table(out, RECORD_SCHEMA, &comments, &TRACE_COLUMNS, rows)?;
    Ok(())
}

pub fn read_trace_records<R: Read>(input: R) -> Result<Vec<StepRecord>, SimError> {
    let t = read_table(input, RECORD_SCHEMA, &TRACE_COLUMNS)?;
    t.rows
        .iter()
        .enumerate()
        .map(|(row, r)| {
            Ok(StepRecord {
                k: r[0] as usize,
                l: r[1],
                b: r[2],
                p: r[3],
                soc: r[4],
                soc_est: r[5],
                v: r[6],
                i: r[7],
                e_k: r[8],
                b_setpoint: r[9],
                status: status_from_code(r[10], row)?,
            })
        })
        .collect()
}

const REPORT_SCHEMA: &str = "tracking-report v1";

/// Writes one row per (label, mode).
pub fn write_report<W: Write>(mut out: W, reports: &[(String, super::TrackingReport)]) -> Result<(), SimError> {
    writeln!(out, "# {REPORT_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| SimError::Table(TableError::Csv(e));
    w.write_record(["run", "mode", "rmse_kW", "mean_kW", "max_abs_kW"])
        .map_err(csv_err)?;
    for (label, r) in reports {
        for (mode, s) in [("no-dispatch", r.no_dispatch), ("dispatch", r.dispatch)] {
            w.write_record([
                label.clone(),
                mode.to_string(),
                s.rmse.to_string(),
                s.mean.to_string(),
                s.max_abs.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// The four panels of the daily operation figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Forecast, member band, offset and plan per slot.
    Forecast,
    /// Plan, realized GCP power and prosumption per step.
    Tracking,
    /// SOC and current with their limits per step.
    SocCurrent,
    /// DC voltage with its limits per step.
    Voltage,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [PlotKind::Forecast, PlotKind::Tracking, PlotKind::SocCurrent, PlotKind::Voltage];

    fn schema(self) -> &'static str {
        match self {
            PlotKind::Forecast => "plot-forecast v1",
            PlotKind::Tracking => "plot-tracking v1",
            PlotKind::SocCurrent => "plot-soc-current v1",
            PlotKind::Voltage => "plot-voltage v1",
        }
    }

    pub fn columns(self) -> &'static [&'static str] {
        match self {
            PlotKind::Forecast => &["slot", "l_hat_kW", "member_min_kW", "member_max_kW", "f_kW", "p_hat_kW"],
            PlotKind::Tracking => &["k", "p_hat_kW", "p_kW", "l_kW", "p_slot_avg_kW"],
            PlotKind::SocCurrent => &["k", "soc", "soc_min", "soc_max", "i_A", "i_min_A", "i_max_A"],
            PlotKind::Voltage => &["k", "v_V", "v_min_V", "v_max_V"],
        }
    }

    pub fn file_name(self, day: usize) -> String {
        let stem = match self {
            PlotKind::Forecast => "forecast",
            PlotKind::Tracking => "tracking",
            PlotKind::SocCurrent => "soc_current",
            PlotKind::Voltage => "voltage",
        };
        format!("plot_{stem}_day{day}.csv")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub kind: PlotKind,
    pub rows: Vec<Vec<f64>>,
}

impl PlotData {
    pub fn build(kind: PlotKind, run: &SimulationRun, limits: &MpcLimits) -> Self {
        let plan = &run.plan;
        let rows: Vec<Vec<f64>> = match kind {
            PlotKind::Forecast => (0..plan.p_hat.len())
                .map(|i| {
                    vec![
                        i as f64,
                        plan.l_hat[i],
                        plan.l_hat[i] - plan.env_high[i],
                        plan.l_hat[i] - plan.env_low[i],
                        plan.f[i],
                        plan.p_hat[i],
                    ]
                })
                .collect(),
            PlotKind::Tracking => {
                let avg = slot_averages(&run.records, |r| r.p);
                run.records
                    .iter()
                    .map(|r| {
                        let slot = r.k / crate::timegrid::STEPS_PER_SLOT;
                        vec![r.k as f64, plan.p_hat[slot], r.p, r.l, avg[slot]]
                    })
                    .collect()
            }
            PlotKind::SocCurrent => run
                .records
                .iter()
                .map(|r| {
                    vec![
                        r.k as f64,
                        r.soc,
                        limits.soc_min,
                        limits.soc_max,
                        r.i,
                        limits.i_min,
                        limits.i_max,
                    ]
                })
                .collect(),
            PlotKind::Voltage => run
                .records
                .iter()
                .map(|r| vec![r.k as f64, r.v, limits.v_min, limits.v_max])
                .collect(),
        };
        Self { kind, rows }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.kind.columns().iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn write<W: Write>(&self, out: W) -> Result<(), SimError> {
        write_table(out, self.kind.schema(), &[], self.kind.columns(), self.rows.iter().cloned())?;
        Ok(())
    }
}

pub fn read_plot<R: Read>(input: R, kind: PlotKind) -> Result<PlotData, SimError> {
    let t = read_table(input, kind.schema(), kind.columns())?;
    Ok(PlotData { kind, rows: t.rows })
}

/// Writes all four panel files for `run` into `dir` and returns their paths.
pub fn write_plots(dir: &Path, run: &SimulationRun, limits: &MpcLimits) -> Result<Vec<PathBuf>, SimError> {
    PlotKind::ALL
        .iter()
        .map(|&kind| {
            let path = dir.join(kind.file_name(run.day));
            let f = File::create(&path)?;
            PlotData::build(kind, run, limits).write(BufWriter::new(f))?;
            Ok(path)
        })
        .collect()
}
