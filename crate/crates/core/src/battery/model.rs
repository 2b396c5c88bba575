use nalgebra::{DMatrix, DVector, RowDVector};

use super::params::{SocRange, TtcParameters};
use super::BatteryError;

/// Continuous-time three-branch model with inputs `u = [i, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousStateSpace {
    pub a_c: DMatrix<f64>,
    pub b_c: DMatrix<f64>,
    pub k_c: DMatrix<f64>,
    pub c: RowDVector<f64>,
    /// Feed-through `[Rs, E]`.
    pub d: [f64; 2],
    /// Measurement-noise standard deviation, V.
    pub g: f64,
}

impl ContinuousStateSpace {
    pub fn from_parameters(p: &TtcParameters) -> Self {
        let rc = [(p.r1, p.c1), (p.r2, p.c2), (p.r3, p.c3)];
        let a_c = DMatrix::from_diagonal(&DVector::from_iterator(3, rc.iter().map(|(r, c)| -1.0 / (r * c))));
        let mut b_c = DMatrix::zeros(3, 2);
        for (j, (_, c)) in rc.iter().enumerate() {
            b_c[(j, 0)] = 1.0 / c;
        }
        Self {
            a_c,
            b_c,
            k_c: DMatrix::from_diagonal(&DVector::from_vec(vec![p.k1, p.k2, p.k3])),
            c: RowDVector::from_element(3, 1.0),
            d: [p.rs, p.e],
            g: p.measurement_variance().sqrt(),
        }
    }
}

/// Discrete model `x⁺ = a x + b_i i + b_1`, `v = c x + d_i i + d_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteStateSpace {
    pub a: DMatrix<f64>,
    pub b_i: DVector<f64>,
    pub b_1: DVector<f64>,
    pub c: RowDVector<f64>,
    pub d_i: f64,
    pub d_1: f64,
    /// Process-noise input matrix; the state noise covariance is `k kᵀ`.
    pub k: DMatrix<f64>,
    /// Measurement-noise variance, V².
    pub meas_var: f64,
    pub range: Option<SocRange>,
}

impl DiscreteStateSpace {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Output for a constant current held forever from any initial state.
    pub fn dc_output(&self, i: f64) -> Option<f64> {
        let n = self.n();
        let lhs = DMatrix::identity(n, n) - &self.a;
        let x = lhs.lu().solve(&(&self.b_i * i + &self.b_1))?;
        Some((&self.c * x)[0] + self.d_i * i + self.d_1)
    }
}

/// Drops the fastest (R3, C3) branch, keeping its DC contribution as series
/// resistance, and discretizes the remaining two states with forward Euler.
pub fn reduce_and_discretize(p: &TtcParameters, ts: f64) -> Result<DiscreteStateSpace, BatteryError> {
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(BatteryError::SamplingPeriod(ts));
    }
    p.validate()?;
    let full = ContinuousStateSpace::from_parameters(p);
    let a_r = full.a_c.view((0, 0), (2, 2)).into_owned();
    let b_r = full.b_c.view((0, 0), (2, 1)).column(0).into_owned();
    let k_r = full.k_c.view((0, 0), (2, 2)).into_owned();
    let eye = DMatrix::<f64>::identity(2, 2);
    let a = &eye + &a_r * ts;
    let m1 = &eye + &k_r * ts;
    let m2 = &eye + a_r.transpose() * ts;
    let model = DiscreteStateSpace {
        a,
        b_i: b_r * ts,
        b_1: DVector::zeros(2),
        c: RowDVector::from_element(2, 1.0),
        d_i: p.rs + p.r3,
        d_1: p.e,
        k: m1 * m2.transpose(),
        meas_var: full.g * full.g,
        range: Some(p.soc_range),
    };
    let radius = model.spectral_radius();
    if radius >= 1.0 {
        return Err(BatteryError::Unstable {
            range: p.soc_range,
            radius,
        });
    }
    Ok(model)
}

/// One noise-free step: returns the next state and the output at this step.
pub fn voltage_step(m: &DiscreteStateSpace, x: &DVector<f64>, i: f64) -> (DVector<f64>, f64) {
    let v = (&m.c * x)[0] + m.d_i * i + m.d_1;
    let next = &m.a * x + &m.b_i * i + &m.b_1;
    (next, v)
}

/// Stacked predictions `y = phi x₀ + psi_i u + psi_1 1` over a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrices {
    pub phi: DMatrix<f64>,
    pub psi_i: DMatrix<f64>,
    pub psi_1: DMatrix<f64>,
    pub horizon: usize,
}

impl TransitionMatrices {
    pub fn predict(&self, x0: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.phi * x0 + &self.psi_i * u + self.constant_response()
    }

    /// `psi_1 · 1`.
    pub fn constant_response(&self) -> DVector<f64> {
        DVector::from_iterator(self.horizon, self.psi_1.row_iter().map(|r| r.sum()))
    }
}

pub fn build_transition(m: &DiscreteStateSpace, horizon: usize) -> TransitionMatrices {
    let n = m.n();
    let mut phi = DMatrix::zeros(horizon, n);
    // markov_i[k] = C A^(k-1) b_i for k >= 1
    let mut markov_i = vec![m.d_i];
    let mut markov_1 = vec![m.d_1];
    let mut ca = m.c.clone();
    for j in 0..horizon {
        phi.set_row(j, &ca);
        if j + 1 < horizon {
            markov_i.push((&ca * &m.b_i)[0]);
            markov_1.push((&ca * &m.b_1)[0]);
            ca = &ca * &m.a;
        }
    }
    let toeplitz = |h: &[f64]| DMatrix::from_fn(horizon, horizon, |j, k| if k <= j { h[j - k] } else { 0.0 });
    TransitionMatrices {
        phi,
        psi_i: toeplitz(&markov_i),
        psi_1: toeplitz(&markov_1),
        horizon,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::params::nominal_parameters;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn mid_range_euler_matrix() {
        let p = nominal_parameters()[2];
        let m = reduce_and_discretize(&p, 10.0).unwrap();
        assert_relative_eq!(m.a[(0, 0)], 0.992063, epsilon = 1e-5);
        assert_relative_eq!(m.a[(1, 1)], 0.552287, epsilon = 1e-4);
        assert_eq!(m.a[(0, 1)], 0.0);
        assert_eq!(m.a[(0, 0)], 1.0 - 10.0 / (0.090 * 13996.0));
        assert_eq!(m.d_i, 0.015 + 2.4e-4);
        assert_eq!(m.d_1, 652.9);
    }

    #[test]
    fn all_sets_are_stable_and_keep_dc_gain() {
        for p in nominal_parameters() {
            let m = reduce_and_discretize(&p, 10.0).unwrap();
            assert!(m.spectral_radius() < 1.0);
            for i in [-500.0, 0.0, 123.0] {
                let dc = m.dc_output(i).unwrap();
                let analytic = p.e + i * p.dc_resistance();
                assert_relative_eq!(dc, analytic, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn euler_limit() {
        let p = nominal_parameters()[1];
        let m = reduce_and_discretize(&p, 1e-9).unwrap();
        assert!((&m.a - DMatrix::identity(2, 2)).amax() < 1e-9);
        assert!(m.b_i.amax() < 1e-9);
        assert!(matches!(reduce_and_discretize(&p, 0.0), Err(BatteryError::SamplingPeriod(_))));
    }

    #[test]
    fn instability_is_reported() {
        let mut p = nominal_parameters()[0];
        p.c2 = 1.0;
        assert!(matches!(reduce_and_discretize(&p, 10.0), Err(BatteryError::Unstable { .. })));
    }

    #[test]
    fn open_circuit_and_steady_state() {
        let p = nominal_parameters()[3];
        let m = reduce_and_discretize(&p, 10.0).unwrap();
        let (_, v) = voltage_step(&m, &DVector::zeros(2), 0.0);
        assert_eq!(v, p.e);
        let mut x = DVector::zeros(2);
        let mut v = 0.0;
        for _ in 0..20_000 {
            (x, v) = voltage_step(&m, &x, 200.0);
        }
        assert_relative_eq!(v, p.e + 200.0 * p.dc_resistance(), max_relative = 1e-9);
    }

    #[test]
    fn horizon_one_transition() {
        let m = reduce_and_discretize(&nominal_parameters()[2], 10.0).unwrap();
        let t = build_transition(&m, 1);
        assert_eq!(t.phi, DMatrix::from_row_slice(1, 2, &[1.0, 1.0]));
        assert_eq!(t.psi_i[(0, 0)], m.d_i);
        assert_eq!(t.psi_1[(0, 0)], m.d_1);
    }

    proptest! {
        #[test]
        fn stacked_prediction_matches_stepping(
            set in 0usize..5,
            x0 in proptest::collection::vec(-20.0f64..20.0, 2),
            u in proptest::collection::vec(-800.0f64..800.0, 5),
        ) {
            let m = reduce_and_discretize(&nominal_parameters()[set], 10.0).unwrap();
            let t = build_transition(&m, 5);
            let pred = t.predict(&DVector::from_vec(x0.clone()), &DVector::from_vec(u.clone()));
            let mut x = DVector::from_vec(x0);
            for (j, uj) in u.iter().enumerate() {
                let (next, v) = voltage_step(&m, &x, *uj);
                prop_assert!((pred[j] - v).abs() <= 1e-12 * v.abs().max(1.0));
                x = next;
            }
            for j in 0..5 {
                prop_assert_eq!(t.psi_i[(j, j)], m.d_i);
                for k in j + 1..5 {
                    prop_assert_eq!(t.psi_i[(j, k)], 0.0);
                }
            }
        }

        #[test]
        fn superposition(set in 0usize..5, a in -400.0f64..400.0, b in -400.0f64..400.0) {
            let m = reduce_and_discretize(&nominal_parameters()[set], 10.0).unwrap();
            let run = |i: f64| {
                let mut x = DVector::zeros(2);
                let mut out = Vec::new();
                for _ in 0..10 {
                    let (next, v) = voltage_step(&m, &x, i);
                    out.push(v - m.d_1);
                    x = next;
                }
                out
            };
            let (ra, rb, rab) = (run(a), run(b), run(a + b));
            for j in 0..10 {
                prop_assert!((ra[j] + rb[j] - rab[j]).abs() < 1e-9);
            }
        }

        #[test]
        fn constant_current_power_is_increasing(set in 0usize..5, i in -1000.0f64..999.0) {
            let m = reduce_and_discretize(&nominal_parameters()[set], 10.0).unwrap();
            let t = build_transition(&m, 30);
            let power = |i: f64| {
                let u = DVector::from_element(30, i);
                t.predict(&DVector::zeros(2), &u).sum() * i
            };
            prop_assert!(power(i + 1.0) > power(i));
        }
    }
}
