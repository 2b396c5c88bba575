use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::BatteryError;

/// SOC interval a parameter set was identified on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SocRange {
    #[serde(rename = "0-20")]
    R0to20,
    #[serde(rename = "20-40")]
    R20to40,
    #[serde(rename = "40-60")]
    R40to60,
    #[serde(rename = "60-80")]
    R60to80,
    #[serde(rename = "80-100")]
    R80to100,
}

impl SocRange {
    pub const ALL: [SocRange; 5] = [
        SocRange::R0to20,
        SocRange::R20to40,
        SocRange::R40to60,
        SocRange::R60to80,
        SocRange::R80to100,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        ["0-20", "20-40", "40-60", "60-80", "80-100"][self.index()]
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.label() == s.trim().trim_end_matches('%'))
    }
}

impl fmt::Display for SocRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}%", self.label())
    }
}

/// Three-time-constant equivalent-circuit parameters for one SOC range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TtcParameters {
    pub soc_range: SocRange,
    /// Electromotive force, V.
    pub e: f64,
    pub rs: f64,
    pub r1: f64,
    pub c1: f64,
    pub r2: f64,
    pub c2: f64,
    pub r3: f64,
    pub c3: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    /// Natural logarithm of the measurement-noise variance.
    pub sigma2: f64,
}

impl TtcParameters {
    pub fn validate(&self) -> Result<(), BatteryError> {
        let checks = [
            ("e", self.e),
            ("rs", self.rs),
            ("r1", self.r1),
            ("c1", self.c1),
            ("r2", self.r2),
            ("c2", self.c2),
            ("r3", self.r3),
            ("c3", self.c3),
        ];
        for (name, value) in checks {
            if !(value > 0.0 && value.is_finite()) {
                return Err(BatteryError::InvalidParameter {
                    range: self.soc_range,
                    name,
                    value,
                });
            }
        }
        for (name, value) in [("k1", self.k1), ("k2", self.k2), ("k3", self.k3), ("sigma2", self.sigma2)] {
            if !value.is_finite() {
                return Err(BatteryError::InvalidParameter {
                    range: self.soc_range,
                    name,
                    value,
                });
            }
        }
        Ok(())
    }

    /// Total DC resistance `Rs + R1 + R2 + R3`.
    pub fn dc_resistance(&self) -> f64 {
        self.rs + self.r1 + self.r2 + self.r3
    }

    /// Measurement-noise variance, V².
    pub fn measurement_variance(&self) -> f64 {
        self.sigma2.exp()
    }
}

/// The five identified parameter sets, ordered by SOC range.
pub fn nominal_parameters() -> [TtcParameters; 5] {
    #[rustfmt::skip]
    const ROWS: [[f64; 12]; 5] = [
        // e      rs     r1     c1       r2     c2      r3      c3      k1     k2     k3    sigma2
        [592.2, 0.029, 0.095, 8930.0,  0.04,  909.0,  2.5e-3, 544.2,  0.639, -5.31, 5.41, -1.31],
        [625.0, 0.021, 0.075, 9809.0,  0.009, 2139.0, 4.9e-5, 789.0,  0.677, -0.22, 40.0, -0.42],
        [652.9, 0.015, 0.090, 13996.0, 0.009, 2482.0, 2.4e-4, 2959.7, 0.617, -0.36, 0.40, 0.3426],
        [680.2, 0.014, 0.079, 9499.0,  0.009, 2190.0, 6.8e-4, 100.2,  0.547, -0.28, 2.83, 3.5784],
        [733.2, 0.013, 0.199, 11234.0, 0.010, 2505.0, 6.0e-4, 6177.3, 0.795, 0.077, -0.24, 2.7694],
    ];
    std::array::from_fn(|k| {
        let r = ROWS[k];
        TtcParameters {
            soc_range: SocRange::ALL[k],
            e: r[0],
            rs: r[1],
            r1: r[2],
            c1: r[3],
            r2: r[4],
            c2: r[5],
            r3: r[6],
            c3: r[7],
            k1: r[8],
            k2: r[9],
            k3: r[10],
            sigma2: r[11],
        }
    })
}

/// Index of the range containing `soc`; a boundary belongs to the upper range
/// and values outside [0, 1] saturate to the end ranges.
pub fn schedule_index(soc: f64) -> usize {
    if soc.is_nan() {
        return 0;
    }
    ((soc * 5.0 + 1e-12).floor().max(0.0) as usize).min(4)
}

pub fn schedule_model(soc: f64) -> TtcParameters {
    nominal_parameters()[schedule_index(soc)]
}

/// Five parameter sets addressable by SOC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterSet(pub [TtcParameters; 5]);

impl Default for ParameterSet {
    fn default() -> Self {
        Self(nominal_parameters())
    }
}

impl ParameterSet {
    pub fn schedule(&self, soc: f64) -> &TtcParameters {
        &self.0[schedule_index(soc)]
    }

    pub fn get(&self, range: SocRange) -> &TtcParameters {
        &self.0[range.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &TtcParameters> {
        self.0.iter()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ParameterRow {
    range: String,
    e: f64,
    rs: f64,
    r1: f64,
    c1: f64,
    r2: f64,
    c2: f64,
    r3: f64,
    c3: f64,
    k1: f64,
    k2: f64,
    k3: f64,
    sigma2: f64,
}

/// Applies a CSV override file (columns `range,e,rs,r1,c1,r2,c2,r3,c3,k1,k2,k3,sigma2`,
/// one row per SOC range to replace) on top of `base`.
pub fn read_parameter_overrides<R: Read>(input: R, base: &ParameterSet) -> Result<ParameterSet, BatteryError> {
    let mut out = *base;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(input);
    for row in reader.deserialize::<ParameterRow>() {
        let row = row.map_err(|e| BatteryError::File(e.to_string()))?;
        let range = SocRange::from_label(&row.range)
            .ok_or_else(|| BatteryError::File(format!("unknown SOC range `{}`", row.range)))?;
        let p = TtcParameters {
            soc_range: range,
            e: row.e,
            rs: row.rs,
            r1: row.r1,
            c1: row.c1,
            r2: row.r2,
            c2: row.c2,
            r3: row.r3,
            c3: row.c3,
            k1: row.k1,
            k2: row.k2,
            k3: row.k3,
            sigma2: row.sigma2,
        };
        p.validate()?;
        out.0[range.index()] = p;
    }
    Ok(out)
}

/// Writes all five sets in the override-file format.
pub fn write_parameter_table<W: Write>(out: W, set: &ParameterSet) -> Result<(), BatteryError> {
    let mut w = csv::Writer::from_writer(out);
    for p in set.iter() {
        w.serialize(ParameterRow {
            range: p.soc_range.label().to_string(),
            e: p.e,
            rs: p.rs,
            r1: p.r1,
            c1: p.c1,
            r2: p.r2,
            c2: p.c2,
            r3: p.r3,
            c3: p.c3,
            k1: p.k1,
            k2: p.k2,
            k3: p.k3,
            sigma2: p.sigma2,
        })
        .map_err(|e| BatteryError::File(e.to_string()))?;
    }
    w.flush().map_err(|e| BatteryError::File(e.to_string()))?;
    Ok(())
}
