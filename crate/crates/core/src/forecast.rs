//! Similar-day prosumption forecasting.
//!
//! A day-ahead forecast is built from the historical daily profiles that are
//! (i) of the same working/non-working kind as the target day, (ii) closest in
//! time to it and (iii) closest to its forecast daily radiation. The selected
//! profiles form per-slot uncertainty sets; their mean is the point forecast
//! and their extremes bound the battery usage in the day-ahead problem.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timegrid::N_SLOTS;

/// Days kept after the time-distance stage.
pub const TIME_STAGE_SIZE: usize = 10;
/// Days kept after the radiation stage (uncertainty-set size).
pub const RADIATION_STAGE_SIZE: usize = 5;
/// Smallest history accepted by [`synthesize_history`].
pub const MIN_SYNTH_DAYS: usize = 15;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("profile for {year}/{day_of_year} has {len} values, expected {N_SLOTS}")]
    ProfileLength { year: i32, day_of_year: u16, len: usize },
    #[error("invalid day of year {0}")]
    DayOfYear(u16),
    #[error("radiation must be finite and non-negative, got {0}")]
    Radiation(f64),
    #[error("{stage}: need at least {needed} days, found {found}")]
    InsufficientHistory {
        stage: &'static str,
        needed: usize,
        found: usize,
    },
    #[error("forecast needs at least one member profile")]
    NoMembers,
    #[error("synthetic history needs at least {MIN_SYNTH_DAYS} days, requested {0}")]
    TooFewDays(usize),
    #[error("dataset row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("dataset io: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
}

/// One day of historical prosumption at 5-minute resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalDay {
    pub year: i32,
    pub day_of_year: u16,
    /// Net power (kW) per slot, positive = consumption.
    pub profile: Vec<f64>,
    /// Daily global horizontal radiation, kWh/day/m².
    pub daily_radiation: f64,
    pub is_working_day: bool,
}

impl HistoricalDay {
    pub fn new(
        year: i32,
        day_of_year: u16,
        is_working_day: bool,
        daily_radiation: f64,
        profile: Vec<f64>,
    ) -> Result<Self, ForecastError> {
        if profile.len() != N_SLOTS {
            return Err(ForecastError::ProfileLength {
                year,
                day_of_year,
                len: profile.len(),
            });
        }
        if !(1..=366).contains(&day_of_year) {
            return Err(ForecastError::DayOfYear(day_of_year));
        }
        if !daily_radiation.is_finite() || daily_radiation < 0.0 {
            return Err(ForecastError::Radiation(daily_radiation));
        }
        Ok(Self {
            year,
            day_of_year,
            profile,
            daily_radiation,
            is_working_day,
        })
    }

    pub fn target_info(&self, radiation_forecast: f64) -> TargetDayInfo {
        TargetDayInfo {
            year: self.year,
            day_of_year: self.day_of_year,
            radiation_forecast,
            is_working_day: self.is_working_day,
        }
    }
}

/// What is known about the day to forecast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetDayInfo {
    pub year: i32,
    pub day_of_year: u16,
    pub radiation_forecast: f64,
    pub is_working_day: bool,
}

/// Point forecast plus uncertainty envelope, all in kW per slot.
///
/// `envelope_low[i] = point[i] - max(members[.][i])` (never positive) and
/// `envelope_high[i] = point[i] - min(members[.][i])` (never negative): they
/// are the extreme battery injections needed to absorb a member realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ProsumptionForecast {
    pub point: Vec<f64>,
    pub envelope_low: Vec<f64>,
    pub envelope_high: Vec<f64>,
    pub members: Vec<Vec<f64>>,
}

impl ProsumptionForecast {
    pub fn len(&self) -> usize {
        self.point.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point.is_empty()
    }

    /// Forecast whose members are scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> ProsumptionForecast {
        let members: Vec<Vec<f64>> = self
            .members
            .iter()
            .map(|m| m.iter().map(|v| v * factor).collect())
            .collect();
        forecast_from_members(members)
    }

    /// Forecast with a single member equal to `profile`: zero-width envelope.
    pub fn exact(profile: Vec<f64>) -> ProsumptionForecast {
        forecast_from_members(vec![profile])
    }
}

/// Calendar distance in days between a historical day and the target day.
///
/// Years count as 365 days so that a day one year back has distance ~365.
pub fn time_distance(year: i32, day: u16, target: &TargetDayInfo) -> i64 {
    (365 * (year as i64 - target.year as i64) + (day as i64 - target.day_of_year as i64)).abs()
}

/// Selects the uncertainty-set members for `target`.
///
/// Ties are broken by more recent year, then lower day of year, then input
/// order, so the result is fully deterministic.
pub fn select_days(history: &[HistoricalDay], target: &TargetDayInfo) -> Result<Vec<HistoricalDay>, ForecastError> {
    let mut same_kind: Vec<(usize, &HistoricalDay)> = history
        .iter()
        .enumerate()
        .filter(|(_, d)| d.is_working_day == target.is_working_day)
        .collect();
    if same_kind.len() < TIME_STAGE_SIZE {
        return Err(ForecastError::InsufficientHistory {
            stage: "same-kind days",
            needed: TIME_STAGE_SIZE,
            found: same_kind.len(),
        });
    }
    let tie = |a: &(usize, &HistoricalDay), b: &(usize, &HistoricalDay)| {
        b.1.year
            .cmp(&a.1.year)
            .then(a.1.day_of_year.cmp(&b.1.day_of_year))
            .then(a.0.cmp(&b.0))
    };
    same_kind.sort_by(|a, b| {
        time_distance(a.1.year, a.1.day_of_year, target)
            .cmp(&time_distance(b.1.year, b.1.day_of_year, target))
            .then_with(|| tie(a, b))
    });
    let mut nearest: Vec<_> = same_kind.into_iter().take(TIME_STAGE_SIZE).collect();
    if nearest.len() < RADIATION_STAGE_SIZE {
        return Err(ForecastError::InsufficientHistory {
            stage: "time-distance stage",
            needed: RADIATION_STAGE_SIZE,
            found: nearest.len(),
        });
    }
    let rad = |d: &HistoricalDay| (target.radiation_forecast - d.daily_radiation).abs();
    nearest.sort_by(|a, b| rad(a.1).total_cmp(&rad(b.1)).then_with(|| tie(a, b)));
    Ok(nearest
        .into_iter()
        .take(RADIATION_STAGE_SIZE)
        .map(|(_, d)| d.clone())
        .collect())
}

/// Averages the selected profiles slot by slot and derives the envelopes.
pub fn point_forecast(selected: &[HistoricalDay]) -> Result<ProsumptionForecast, ForecastError> {
    if selected.is_empty() {
        return Err(ForecastError::NoMembers);
    }
    Ok(forecast_from_members(selected.iter().map(|d| d.profile.clone()).collect()))
}

fn forecast_from_members(members: Vec<Vec<f64>>) -> ProsumptionForecast {
    let n = members[0].len();
    let count = members.len() as f64;
    let mut point = Vec::with_capacity(n);
    let mut low = Vec::with_capacity(n);
    let mut high = Vec::with_capacity(n);
    for i in 0..n {
        let first = members[0][i];
        // Mean as an offset from the first member: exact when all members agree.
        let mean = first + members.iter().map(|m| m[i] - first).sum::<f64>() / count;
        let (lo, hi) = members
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| (lo.min(m[i]), hi.max(m[i])));
        let mean = mean.clamp(lo, hi);
        point.push(mean);
        low.push((mean - hi).min(0.0));
        high.push((mean - lo).max(0.0));
    }
    ProsumptionForecast {
        point,
        envelope_low: low,
        envelope_high: high,
        members,
    }
}

/// Persistence predictor: the last observed prosumption repeated `horizon` times.
pub fn short_term_predict(last_observed: f64, horizon: usize) -> Vec<f64> {
    vec![last_observed; horizon]
}

/// Parameters of the synthetic prosumption generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthShape {
    pub start_year: i32,
    pub start_day_of_year: u16,
    /// Weekday of the first generated day, 0 = Monday.
    pub first_weekday: u8,
    /// Night-time base load, kW.
    pub base_kw: f64,
    pub morning_peak_kw: f64,
    pub midday_kw: f64,
    pub evening_peak_kw: f64,
    /// Load multiplier applied on non-working days.
    pub weekend_factor: f64,
    /// PV output at mid-day for a day with `pv_reference_radiation`, kW.
    pub pv_peak_kw: f64,
    pub pv_reference_radiation: f64,
    pub radiation_mean: f64,
    /// Seasonal amplitude of the mean radiation (peak at day 172).
    pub radiation_seasonal_amplitude: f64,
    pub radiation_sd: f64,
    /// Standard deviation of the day-level load multiplier.
    pub day_level_sd: f64,
    /// Stationary standard deviation of the AR(1) slot noise, kW.
    pub noise_sd_kw: f64,
    /// Slot-to-slot correlation of the AR(1) noise.
    pub noise_rho: f64,
}

impl Default for SynthShape {
    fn default() -> Self {
        Self {
            start_year: 2016,
            start_day_of_year: 1,
            first_weekday: 4,
            base_kw: 165.0,
            morning_peak_kw: 45.0,
            midday_kw: 30.0,
            evening_peak_kw: 75.0,
            weekend_factor: 0.85,
            pv_peak_kw: 70.0,
            pv_reference_radiation: 7.0,
            radiation_mean: 3.5,
            radiation_seasonal_amplitude: 2.0,
            radiation_sd: 1.2,
            day_level_sd: 0.01,
            noise_sd_kw: 2.5,
            noise_rho: 0.9,
        }
    }
}

fn bump(hour: f64, centre: f64, width: f64) -> f64 {
    let z = (hour - centre) / width;
    (-0.5 * z * z).exp()
}

fn slot_hour(i: usize) -> f64 {
    (i as f64 + 0.5) * 24.0 / N_SLOTS as f64
}

/// Normalised PV production shape, zero outside 06:00-18:00.
pub fn pv_shape(i: usize) -> f64 {
    let h = slot_hour(i);
    if (6.0..18.0).contains(&h) {
        (std::f64::consts::PI * (h - 6.0) / 12.0).sin()
    } else {
        0.0
    }
}

fn days_in_year(year: i32) -> u16 {
    if (year % 4 == 0 && year % 100 != 0) || year % 400 == 0 {
        366
    } else {
        365
    }
}

impl SynthShape {
    /// Deterministic load shape (before PV) for a working or non-working day.
    pub fn load_shape(&self, working: bool) -> Vec<f64> {
        let factor = if working { 1.0 } else { self.weekend_factor };
        (0..N_SLOTS)
            .map(|i| {
                let h = slot_hour(i);
                factor
                    * (self.base_kw
                        + self.morning_peak_kw * bump(h, 8.0, 1.5)
                        + self.midday_kw * bump(h, 12.5, 2.0)
                        + self.evening_peak_kw * bump(h, 19.5, 2.0))
            })
            .collect()
    }

    /// PV contribution (negative kW) for a day with the given radiation.
    pub fn pv_component(&self, radiation: f64) -> Vec<f64> {
        let scale = if self.pv_reference_radiation > 0.0 {
            self.pv_peak_kw * radiation / self.pv_reference_radiation
        } else {
            0.0
        };
        (0..N_SLOTS).map(|i| -scale * pv_shape(i)).collect()
    }

    /// Seasonal mean radiation for a day of year, before noise and clipping.
    pub fn mean_radiation(&self, day_of_year: u16) -> f64 {
        let phase = 2.0 * std::f64::consts::PI * (day_of_year as f64 - 172.0) / 365.0;
        self.radiation_mean + self.radiation_seasonal_amplitude * phase.cos()
    }

    /// Per-slot standard deviation of a profile for a day of known radiation.
    pub fn slot_sd_given_radiation(&self, working: bool) -> Vec<f64> {
        self.load_shape(working)
            .iter()
            .map(|b| ((b * self.day_level_sd).powi(2) + self.noise_sd_kw.powi(2)).sqrt())
            .collect()
    }

    fn draw_day<R: Rng>(&self, rng: &mut R, year: i32, doy: u16, working: bool) -> HistoricalDay {
        let z: f64 = rng.sample(StandardNormal);
        let radiation = (self.mean_radiation(doy) + self.radiation_sd * z).clamp(0.0, 9.0);
        let level: f64 = rng.sample(StandardNormal);
        let level = 1.0 + self.day_level_sd * level;
        let pv = self.pv_component(radiation);
        let innov_sd = self.noise_sd_kw * (1.0 - self.noise_rho * self.noise_rho).max(0.0).sqrt();
        let mut ar = self.noise_sd_kw * rng.sample::<f64, _>(StandardNormal);
        let profile = self
            .load_shape(working)
            .into_iter()
            .zip(pv)
            .map(|(load, pv)| {
                let v = load * level + pv + ar;
                ar = self.noise_rho * ar + innov_sd * rng.sample::<f64, _>(StandardNormal);
                v
            })
            .collect();
        HistoricalDay {
            year,
            day_of_year: doy,
            profile,
            daily_radiation: radiation,
            is_working_day: working,
        }
    }
}

/// Deterministic synthetic dataset of `days` consecutive days.
///
/// Each profile is a load shape (scaled on weekends and by a random day
/// level) minus a mid-day PV bump proportional to the day's radiation, plus
/// AR(1) noise.
pub fn synthesize_history(seed: u64, days: usize, shape: &SynthShape) -> Result<Vec<HistoricalDay>, ForecastError> {
    if days < MIN_SYNTH_DAYS {
        return Err(ForecastError::TooFewDays(days));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut year = shape.start_year;
    let mut doy = shape.start_day_of_year.max(1);
    let mut out = Vec::with_capacity(days);
    for d in 0..days {
        let weekday = (shape.first_weekday as usize + d) % 7;
        out.push(shape.draw_day(&mut rng, year, doy, weekday < 5));
        doy += 1;
        if doy > days_in_year(year) {
            doy = 1;
            year += 1;
        }
    }
    Ok(out)
}

const DATASET_FIXED: [&str; 4] = ["year", "day_of_year", "working_day", "daily_radiation"];

fn dataset_header() -> Vec<String> {
    DATASET_FIXED
        .iter()
        .map(|s| s.to_string())
        .chain((0..N_SLOTS).map(|i| format!("p{i:03}")))
        .collect()
}

/// Writes the historical dataset: one CSV row per day.
pub fn write_dataset<W: Write>(out: W, days: &[HistoricalDay]) -> Result<(), ForecastError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(dataset_header())?;
    for d in days {
        let mut rec = vec![
            d.year.to_string(),
            d.day_of_year.to_string(),
            if d.is_working_day { "1" } else { "0" }.to_string(),
            format!("{}", d.daily_radiation),
        ];
        rec.extend(d.profile.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a historical dataset; rows without exactly 288 power values are rejected.
pub fn read_dataset<R: Read>(input: R) -> Result<Vec<HistoricalDay>, ForecastError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.len() < DATASET_FIXED.len() || header[..4].iter().zip(DATASET_FIXED).any(|(a, b)| a != b) {
        return Err(ForecastError::Parse {
            row: 0,
            msg: format!("header must start with {}", DATASET_FIXED.join(",")),
        });
    }
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let perr = |msg: String| ForecastError::Parse { row: row + 1, msg };
        if rec.len() != DATASET_FIXED.len() + N_SLOTS {
            return Err(perr(format!(
                "expected {} power values, found {}",
                N_SLOTS,
                rec.len().saturating_sub(DATASET_FIXED.len())
            )));
        }
        let year: i32 = rec[0].parse().map_err(|e| perr(format!("year: {e}")))?;
        let doy: u16 = rec[1].parse().map_err(|e| perr(format!("day_of_year: {e}")))?;
        let working = match &rec[2] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(perr(format!("working_day must be 0/1, got `{other}`"))),
        };
        let radiation: f64 = rec[3].parse().map_err(|e| perr(format!("daily_radiation: {e}")))?;
        let profile = rec
            .iter()
            .skip(4)
            .map(|f| f.parse::<f64>().map_err(|e| perr(format!("power `{f}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(HistoricalDay::new(year, doy, working, radiation, profile).map_err(|e| perr(e.to_string()))?);
    }
    Ok(out)
}
