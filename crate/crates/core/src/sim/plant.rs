use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::battery::{reduce_and_discretize, schedule_index, ParameterSet, SocModel, TtcParameters, TS};

use super::{stream_rng, SimError, PERTURBATION_STREAM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantModel {
    /// Exact discretization of all three RC branches.
    ThreeBranch,
    /// The controller's own reduced discrete model.
    Matched,
}

/// Battery, converter and measurement behaviour of the simulated site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    pub model: PlantModel,
    /// Half-width of the uniform multiplicative spread on resistances and capacitances.
    pub param_perturbation: f64,
    /// Same for the EMF.
    pub emf_perturbation: f64,
    /// Std-dev of the DC voltage measurement, V.
    pub voltage_noise_sd: f64,
    /// Std-dev of the GCP power measurement, kW.
    pub power_noise_sd: f64,
    /// Multiplicative set-point tracking error std-dev of the converter.
    pub actuation_rel_sd: f64,
    /// Additive set-point tracking error std-dev, kW.
    pub actuation_abs_kw: f64,
    pub converter_efficiency: f64,
    /// Energy content between SOC 0 and 1, kWh.
    pub capacity_kwh: f64,
    /// Hardware current limit of the converter, A.
    pub current_limit: f64,
    /// Stationary std-dev of the 10-second prosumption fluctuation around the slot value, kW.
    pub intra_slot_sd: f64,
    pub intra_slot_rho: f64,
    pub bess_enabled: bool,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            model: PlantModel::ThreeBranch,
            param_perturbation: 0.05,
            emf_perturbation: 0.005,
            voltage_noise_sd: 0.2,
            power_noise_sd: 0.2,
            actuation_rel_sd: 0.01,
            actuation_abs_kw: 0.5,
            converter_efficiency: crate::mpc::CONVERTER_EFFICIENCY,
            capacity_kwh: 500.0,
            current_limit: 810.0,
            intra_slot_sd: 1.0,
            intra_slot_rho: 0.9,
            bess_enabled: true,
        }
    }
}

impl PlantConfig {
    /// Noise-free plant identical to the controller model.
    pub fn ideal() -> Self {
        Self {
            model: PlantModel::Matched,
            param_perturbation: 0.0,
            emf_perturbation: 0.0,
            voltage_noise_sd: 0.0,
            power_noise_sd: 0.0,
            actuation_rel_sd: 0.0,
            actuation_abs_kw: 0.0,
            intra_slot_sd: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let nonneg = [
            ("param_perturbation", self.param_perturbation),
            ("emf_perturbation", self.emf_perturbation),
            ("voltage_noise_sd", self.voltage_noise_sd),
            ("power_noise_sd", self.power_noise_sd),
            ("actuation_rel_sd", self.actuation_rel_sd),
            ("actuation_abs_kw", self.actuation_abs_kw),
            ("intra_slot_sd", self.intra_slot_sd),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        if self.param_perturbation >= 1.0 || self.emf_perturbation >= 1.0 {
            return Err(SimError::Config("perturbations must stay below 1".into()));
        }
        if !(self.converter_efficiency > 0.0 && self.converter_efficiency <= 1.0) {
            return Err(SimError::Config(format!(
                "converter_efficiency must be in (0, 1], got {}",
                self.converter_efficiency
            )));
        }
        if !(self.capacity_kwh > 0.0 && self.current_limit > 0.0) {
            return Err(SimError::Config("capacity_kwh and current_limit must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.intra_slot_rho) {
            return Err(SimError::Config(format!("intra_slot_rho must be in [0, 1), got {}", self.intra_slot_rho)));
        }
        Ok(())
    }
}

/// Physical battery state carried between days.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub soc: f64,
    /// RC branch voltages, V.
    pub x: Vec<f64>,
}

impl PlantState {
    pub fn rested(model: PlantModel, soc: f64) -> Self {
        let n = match model {
            PlantModel::ThreeBranch => 3,
            PlantModel::Matched => 2,
        };
        Self { soc, x: vec![0.0; n] }
    }
}

/// Parameters of the simulated battery: the nominal set with a seeded perturbation.
pub fn plant_parameters(cfg: &PlantConfig, nominal: &ParameterSet, seed: u64) -> ParameterSet {
    if cfg.param_perturbation == 0.0 && cfg.emf_perturbation == 0.0 {
        return *nominal;
    }
    let mut rng = stream_rng(seed, PERTURBATION_STREAM);
    let mut draw = |half: f64| {
        if half == 0.0 {
            1.0
        } else {
            rng.sample(Uniform::new_inclusive(1.0 - half, 1.0 + half).expect("valid range"))
        }
    };
    let mut out = *nominal;
    for p in out.0.iter_mut() {
        let h = cfg.param_perturbation;
        p.e *= draw(cfg.emf_perturbation);
        for v in [&mut p.rs, &mut p.r1, &mut p.c1, &mut p.r2, &mut p.c2, &mut p.r3, &mut p.c3] {
            *v *= draw(h);
        }
    }
    out
}

pub struct Plant {
    cfg: PlantConfig,
    params: ParameterSet,
    reduced: Vec<crate::battery::DiscreteStateSpace>,
    soc_model: SocModel,
    pub state: PlantState,
}

impl Plant {
    pub fn new(cfg: &PlantConfig, params: ParameterSet, state: PlantState) -> Result<Self, SimError> {
        let reduced = params
            .iter()
            .map(|p| reduce_and_discretize(p, TS))
            .collect::<Result<Vec<_>, _>>()?;
        let expected = PlantState::rested(cfg.model, 0.0).x.len();
        if state.x.len() != expected {
            return Err(SimError::Config(format!(
                "plant state has {} branch voltages, model needs {expected}",
                state.x.len()
            )));
        }
        Ok(Self {
            cfg: cfg.clone(),
            params,
            reduced,
            soc_model: SocModel::default(),
            state,
        })
    }

    fn active(&self) -> (usize, &TtcParameters) {
        let idx = schedule_index(self.state.soc);
        (idx, &self.params.0[idx])
    }

    /// `(open-circuit voltage, instantaneous resistance)` at the present state.
    fn thevenin(&self, idx: usize) -> (f64, f64) {
        match self.cfg.model {
            PlantModel::ThreeBranch => {
                let p = &self.params.0[idx];
                (p.e + self.state.x.iter().sum::<f64>(), p.rs)
            }
            PlantModel::Matched => {
                let m = &self.reduced[idx];
                let x = DVector::from_column_slice(&self.state.x);
                ((&m.c * x)[0] + m.d_1, m.d_i)
            }
        }
    }

    pub fn terminal_voltage(&self, i: f64) -> f64 {
        let (v_oc, r) = self.thevenin(self.active().0);
        v_oc + r * i
    }

    /// Current that draws `p_kw` of DC power, limited by the converter.
    pub fn current_for_power(&self, p_kw: f64) -> f64 {
        let (v_oc, r) = self.thevenin(self.active().0);
        let p = p_kw * 1000.0;
        let disc = v_oc * v_oc + 4.0 * r * p;
        let i = if disc <= 0.0 {
            -v_oc / (2.0 * r)
        } else {
            2.0 * p / (v_oc + disc.sqrt())
        };
        i.clamp(-self.cfg.current_limit, self.cfg.current_limit)
    }

    /// Converter response to a DC power set-point, with tracking error.
    pub fn actuate(&self, setpoint_kw: f64, rng: &mut ChaCha8Rng) -> f64 {
        let rel: f64 = rng.sample(StandardNormal);
        let abs: f64 = rng.sample(StandardNormal);
        let p = setpoint_kw * (1.0 + self.cfg.actuation_rel_sd * rel) + self.cfg.actuation_abs_kw * abs;
        self.current_for_power(p)
    }

    /// Holds `i` for one step; returns the terminal voltage at the end of the step.
    pub fn step(&mut self, i: f64) -> f64 {
        let (idx, p) = self.active();
        match self.cfg.model {
            PlantModel::ThreeBranch => {
                let rc = [(p.r1, p.c1), (p.r2, p.c2), (p.r3, p.c3)];
                for (x, (r, c)) in self.state.x.iter_mut().zip(rc) {
                    let decay = (-TS / (r * c)).exp();
                    *x = decay * *x + r * (1.0 - decay) * i;
                }
            }
            PlantModel::Matched => {
                let m = &self.reduced[idx];
                let x = DVector::from_column_slice(&self.state.x);
                let next = &m.a * x + &m.b_i * i + &m.b_1;
                self.state.x = next.iter().copied().collect();
            }
        }
        self.state.soc = self.soc_model.step(self.state.soc, i);
        let (v_oc, r) = self.thevenin(idx);
        v_oc + r * i
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_inversion_recovers_current() {
        let cfg = PlantConfig::default();
        let params = plant_parameters(&cfg, &ParameterSet::default(), 3);
        let mut plant = Plant::new(&cfg, params, PlantState::rested(cfg.model, 0.5)).unwrap();
        plant.step(300.0);
        for p in [-200.0, -1.0, 0.0, 5.0, 250.0] {
            let i = plant.current_for_power(p);
            assert!((plant.terminal_voltage(i) * i / 1000.0 - p).abs() < 1e-9 * (1.0 + p.abs()));
        }
        assert_eq!(plant.current_for_power(1e6), 810.0);
    }

    #[test]
    fn three_branch_settles_to_dc_resistance() {
        let cfg = PlantConfig {
            param_perturbation: 0.0,
            emf_perturbation: 0.0,
            ..PlantConfig::default()
        };
        let set = ParameterSet::default();
        let p = *set.schedule(0.5);
        let mut plant = Plant::new(&cfg, set, PlantState::rested(cfg.model, 0.5)).unwrap();
        let mut v = 0.0;
        for _ in 0..5000 {
            v = plant.step(1.0);
            plant.state.soc = 0.5;
        }
        assert!((v - p.e - p.dc_resistance()).abs() < 1e-9);
    }

    #[test]
    fn perturbation_is_seeded_and_bounded() {
        let cfg = PlantConfig::default();
        let base = ParameterSet::default();
        let a = plant_parameters(&cfg, &base, 11);
        assert_eq!(a, plant_parameters(&cfg, &base, 11));
        assert_ne!(a, plant_parameters(&cfg, &base, 12));
        for (p, q) in a.iter().zip(base.iter()) {
            assert!((p.r1 / q.r1 - 1.0).abs() <= 0.05 + 1e-12);
            assert!((p.e / q.e - 1.0).abs() <= 0.005 + 1e-12);
        }
    }
}
