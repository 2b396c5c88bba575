//! Index arithmetic between the 5-minute dispatch grid (slot `i`) and the
//! 10-second control grid (step `k`) of one UTC day.
//!
//! Step `k` covers `[10k, 10k + 10)` seconds after midnight; slot `i` covers
//! `[300i, 300i + 300)`. Both index systems are zero-based.

use thiserror::Error;

/// Number of 5-minute slots in a day.
pub const N_SLOTS: usize = 288;
/// Number of 10-second control steps in a day.
pub const N_STEPS: usize = 8640;
/// Control steps per dispatch slot.
pub const STEPS_PER_SLOT: usize = 30;
/// Length of a dispatch slot in seconds.
pub const SLOT_SECONDS: f64 = 300.0;
/// Length of a control step in seconds.
pub const STEP_SECONDS: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimeGridError {
    #[error("step index {0} outside [0, {N_STEPS})")]
    StepOutOfRange(usize),
    #[error("expected {expected} GCP samples between slot start and step, got {got}")]
    SampleCount { expected: usize, got: usize },
}

/// The day's two discretizations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub n_slots: usize,
    pub n_steps: usize,
    pub steps_per_slot: usize,
    pub slot_seconds: f64,
    pub step_seconds: f64,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self {
            n_slots: N_SLOTS,
            n_steps: N_STEPS,
            steps_per_slot: STEPS_PER_SLOT,
            slot_seconds: SLOT_SECONDS,
            step_seconds: STEP_SECONDS,
        }
    }
}

/// The control steps belonging to one dispatch slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotWindow {
    /// First step of the slot.
    pub k_lo: usize,
    /// Last step of the slot (inclusive).
    pub k_hi: usize,
    pub slot: usize,
}

impl SlotWindow {
    /// Steps from `k` to the end of the slot, inclusive.
    pub fn remaining(&self, k: usize) -> usize {
        self.k_hi + 1 - k
    }

    pub fn contains(&self, k: usize) -> bool {
        (self.k_lo..=self.k_hi).contains(&k)
    }
}

fn check_step(k: usize) -> Result<(), TimeGridError> {
    if k < N_STEPS {
        Ok(())
    } else {
        Err(TimeGridError::StepOutOfRange(k))
    }
}

/// Dispatch slot containing control step `k`.
pub fn slot_of(k: usize) -> Result<usize, TimeGridError> {
    check_step(k)?;
    Ok(k / STEPS_PER_SLOT)
}

pub fn window_of(k: usize) -> Result<SlotWindow, TimeGridError> {
    let slot = slot_of(k)?;
    let k_lo = slot * STEPS_PER_SLOT;
    Ok(SlotWindow {
        k_lo,
        k_hi: k_lo + STEPS_PER_SLOT - 1,
        slot,
    })
}

/// Average composite GCP power observed in the current slot before step `k`.
///
/// `samples` must hold `L_j + B_j` for `j` in `[k_lo, k)`. At the slot start
/// nothing has been observed yet and the average is defined as zero.
/// `k = k_hi + 1` is accepted and averages the complete slot.
pub fn average_gcp_power(window: &SlotWindow, k: usize, samples: &[f64]) -> Result<f64, TimeGridError> {
    let expected = k.checked_sub(window.k_lo).ok_or(TimeGridError::StepOutOfRange(k))?;
    if expected > STEPS_PER_SLOT {
        return Err(TimeGridError::StepOutOfRange(k));
    }
    if samples.len() != expected {
        return Err(TimeGridError::SampleCount {
            expected,
            got: samples.len(),
        });
    }
    if expected == 0 {
        return Ok(0.0);
    }
    Ok(samples.iter().sum::<f64>() / expected as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sixteen_minutes_past_midnight() {
        assert_eq!(slot_of(96).unwrap(), 3);
        let w = window_of(96).unwrap();
        assert_eq!((w.k_lo, w.k_hi, w.slot), (90, 119, 3));
    }

    #[test]
    fn slot_edges() {
        assert_eq!(slot_of(0).unwrap(), 0);
        assert_eq!(slot_of(8639).unwrap(), 287);
        assert_eq!(window_of(90).unwrap().k_lo, 90);
        let w = window_of(29).unwrap();
        assert_eq!((w.k_lo, w.k_hi), (0, 29));
        assert_eq!(slot_of(8640), Err(TimeGridError::StepOutOfRange(8640)));
        assert!(window_of(usize::MAX).is_err());
    }

    #[test]
    fn grid_invariants() {
        let g = TimeGrid::default();
        assert_eq!(g.n_steps, g.n_slots * g.steps_per_slot);
        assert_eq!(g.slot_seconds, g.steps_per_slot as f64 * g.step_seconds);
    }

    #[test]
    fn average_power_cases() {
        let w = window_of(95).unwrap();
        assert_eq!(average_gcp_power(&w, 90, &[]).unwrap(), 0.0);
        assert_eq!(average_gcp_power(&w, 92, &[100.0, 102.0]).unwrap(), 101.0);
        let full = vec![42.5; 30];
        assert_eq!(average_gcp_power(&w, 120, &full).unwrap(), 42.5);
        assert_eq!(
            average_gcp_power(&w, 93, &[1.0]),
            Err(TimeGridError::SampleCount { expected: 3, got: 1 })
        );
    }

    proptest! {
        #[test]
        fn window_brackets_step(k in 0usize..N_STEPS) {
            let w = window_of(k).unwrap();
            prop_assert!(w.k_lo <= k && k <= w.k_hi);
            prop_assert_eq!(slot_of(w.k_lo).unwrap(), slot_of(k).unwrap());
            prop_assert_eq!(slot_of(w.k_hi).unwrap(), slot_of(k).unwrap());
            prop_assert_eq!(w.k_hi, w.k_lo + 29);
        }

        #[test]
        fn average_is_permutation_invariant(mut xs in proptest::collection::vec(-500.0f64..500.0, 1..30), seed in any::<u64>()) {
            let w = window_of(0).unwrap();
            let k = xs.len();
            let a = average_gcp_power(&w, k, &xs).unwrap();
            // deterministic shuffle
            let n = xs.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                xs.swap(i, (s >> 33) as usize % (i + 1));
            }
            let b = average_gcp_power(&w, k, &xs).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}
