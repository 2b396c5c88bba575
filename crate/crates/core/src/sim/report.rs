use std::fmt;

use serde::Serialize;

use crate::timegrid::{N_SLOTS, STEPS_PER_SLOT};

use super::{SimError, SimulationRun, StepRecord};
use crate::dayahead::PlanTable;

/// Default allowance on slot-average GCP power above the cap, kW.
pub const PEAK_TOLERANCE_KW: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorStats {
    pub rmse: f64,
    pub mean: f64,
    pub max_abs: f64,
}

pub fn error_stats(errors: &[f64]) -> ErrorStats {
    if errors.is_empty() {
        return ErrorStats {
            rmse: 0.0,
            mean: 0.0,
            max_abs: 0.0,
        };
    }
    let n = errors.len() as f64;
    ErrorStats {
        rmse: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        mean: errors.iter().sum::<f64>() / n,
        max_abs: errors.iter().fold(0.0, |m, e| m.max(e.abs())),
    }
}

/// Tracking error statistics with and without battery dispatch, kW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackingReport {
    /// Slot-average GCP power against the dispatch plan.
    pub dispatch: ErrorStats,
    /// Slot-average prosumption against its point forecast.
    pub no_dispatch: ErrorStats,
}

impl fmt::Display for TrackingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>10} {:>10} {:>10}", "mode", "RMSE", "mean", "max")?;
        for (name, s) in [("no dispatch", self.no_dispatch), ("dispatch", self.dispatch)] {
            writeln!(f, "{name:<12} {:>10.3} {:>10.3} {:>10.3}", s.rmse, s.mean, s.max_abs)?;
        }
        Ok(())
    }
}

/// Mean of `value` over the 30 steps of every slot.
pub fn slot_averages(records: &[StepRecord], value: impl Fn(&StepRecord) -> f64) -> Vec<f64> {
    records
        .chunks(STEPS_PER_SLOT)
        .map(|c| c.iter().map(&value).sum::<f64>() / c.len() as f64)
        .collect()
}

fn errors(records: &[StepRecord], plan: &PlanTable) -> (Vec<f64>, Vec<f64>) {
    let p = slot_averages(records, |r| r.p);
    let l = slot_averages(records, |r| r.l);
    let dispatch = p.iter().zip(&plan.p_hat).map(|(a, b)| a - b).collect();
    let no_dispatch = l.iter().zip(&plan.l_hat).map(|(a, b)| a - b).collect();
    (dispatch, no_dispatch)
}

pub fn tracking_report(run: &SimulationRun) -> TrackingReport {
    debug_assert_eq!(run.records.len(), N_SLOTS * STEPS_PER_SLOT);
    let (d, n) = errors(&run.records, &run.plan);
    TrackingReport {
        dispatch: error_stats(&d),
        no_dispatch: error_stats(&n),
    }
}

/// Report for stored step records of a full day against their plan.
pub fn report_from_records(records: &[StepRecord], plan: &PlanTable) -> Result<TrackingReport, SimError> {
    if records.len() != N_SLOTS * STEPS_PER_SLOT || plan.p_hat.len() != N_SLOTS {
        return Err(SimError::Length {
            what: "step records",
            expected: N_SLOTS * STEPS_PER_SLOT,
            got: records.len(),
        });
    }
    let (d, n) = errors(records, plan);
    Ok(TrackingReport {
        dispatch: error_stats(&d),
        no_dispatch: error_stats(&n),
    })
}

/// Statistics over the slots of all runs together.
pub fn combined_report(runs: &[SimulationRun]) -> TrackingReport {
    let (mut d, mut n) = (Vec::new(), Vec::new());
    for r in runs {
        let (a, b) = errors(&r.records, &r.plan);
        d.extend(a);
        n.extend(b);
    }
    TrackingReport {
        dispatch: error_stats(&d),
        no_dispatch: error_stats(&n),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeakViolation {
    pub slot: usize,
    pub average_kw: f64,
    pub excess_kw: f64,
}

/// Slots whose average GCP power exceeds `p_max + tolerance`.
pub fn peak_shave_check(run: &SimulationRun, p_max: f64, tolerance: f64) -> Vec<PeakViolation> {
    slot_averages(&run.records, |r| r.p)
        .into_iter()
        .enumerate()
        .filter(|(_, p)| *p > p_max + tolerance)
        .map(|(slot, p)| PeakViolation {
            slot,
            average_kw: p,
            excess_kw: p - p_max,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_examples() {
        assert_eq!(
            error_stats(&[0.0; 288]),
            ErrorStats {
                rmse: 0.0,
                mean: 0.0,
                max_abs: 0.0
            }
        );
        let s = error_stats(&[1.0; 288]);
        assert_eq!((s.rmse, s.mean, s.max_abs), (1.0, 1.0, 1.0));
        let s = error_stats(&[3.0, -4.0]);
        assert!((s.rmse - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.mean, -0.5);
        assert_eq!(s.max_abs, 4.0);
    }

    proptest::proptest! {
        #[test]
        fn max_dominates_rms_dominates_mean(xs in proptest::collection::vec(-100.0f64..100.0, 1..300)) {
            let s = error_stats(&xs);
            proptest::prop_assert!(s.max_abs + 1e-12 >= s.rmse);
            proptest::prop_assert!(s.rmse + 1e-12 >= s.mean.abs());
        }
    }
}
