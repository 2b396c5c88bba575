use nalgebra::{DMatrix, DVector};

use super::model::DiscreteStateSpace;

/// Prior variance of each voltage state at the start of a day, V².
pub const INITIAL_VARIANCE: f64 = 100.0;

/// Measurement-update form of the state covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceUpdate {
    /// `P = (P⁻⁻¹ + Cᵀ C / σ_g²)⁻¹`.
    #[default]
    Information,
    /// `P = (I − G C) P⁻ (I − G C)ᵀ + G σ_g² Gᵀ`.
    Joseph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl KalmanState {
    pub fn initial(n: usize) -> Self {
        Self {
            x: DVector::zeros(n),
            p: DMatrix::identity(n, n) * INITIAL_VARIANCE,
        }
    }
}

/// One predict + measurement-update cycle.
///
/// `i_prev` is the current applied over the interval just ended; it drives the
/// state prediction and the feed-through of the measured voltage.
pub fn kalman_update(
    st: &KalmanState,
    m: &DiscreteStateSpace,
    i_prev: f64,
    v_meas: f64,
    form: CovarianceUpdate,
) -> KalmanState {
    let n = m.n();
    let x_pred = &m.a * &st.x + &m.b_i * i_prev + &m.b_1;
    let p_pred = &m.a * &st.p * m.a.transpose() + &m.k * m.k.transpose();
    let ct = m.c.transpose();
    let s = (&m.c * &p_pred * &ct)[0] + m.meas_var;
    let gain = &p_pred * &ct / s;
    let innovation = v_meas - (&m.c * &x_pred)[0] - m.d_i * i_prev - m.d_1;
    let x = &x_pred + &gain * innovation;
    let eye = DMatrix::<f64>::identity(n, n);
    let p = match form {
        CovarianceUpdate::Information => {
            let info = p_pred.clone().try_inverse().map(|pi| pi + &ct * &m.c / m.meas_var);
            match info.and_then(|i| i.try_inverse()) {
                Some(p) => p,
                None => {
                    log::warn!("kalman: information form singular, using Joseph form");
                    joseph(&eye, &gain, m, &p_pred)
                }
            }
        }
        CovarianceUpdate::Joseph => joseph(&eye, &gain, m, &p_pred),
    };
    KalmanState { x, p: make_psd(p) }
}

fn joseph(eye: &DMatrix<f64>, gain: &DVector<f64>, m: &DiscreteStateSpace, p_pred: &DMatrix<f64>) -> DMatrix<f64> {
    let ikc = eye - gain * &m.c;
    &ikc * p_pred * ikc.transpose() + gain * gain.transpose() * m.meas_var
}

/// Symmetrizes `p` and clips negative eigenvalues, warning when clipping was needed.
fn make_psd(p: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&p + p.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|l| *l >= 0.0) {
        return sym;
    }
    log::warn!("kalman: covariance lost positive semidefiniteness, clipping eigenvalues {:?}", eig.eigenvalues.as_slice());
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::model::{reduce_and_discretize, voltage_step};
    use crate::battery::params::nominal_parameters;

    fn model(set: usize) -> DiscreteStateSpace {
        reduce_and_discretize(&nominal_parameters()[set], 10.0).unwrap()
    }

    #[test]
    fn huge_measurement_noise_ignores_measurement() {
        let mut m = model(2);
        m.meas_var = 1e30;
        let st = KalmanState::initial(2);
        let a = kalman_update(&st, &m, 50.0, 1000.0, CovarianceUpdate::Information);
        let b = kalman_update(&st, &m, 50.0, 0.0, CovarianceUpdate::Information);
        assert!((&a.x - &b.x).amax() < 1e-20);
    }

    #[test]
    fn perfect_measurement_is_matched() {
        let mut m = model(2);
        m.meas_var = 1e-14;
        let st = KalmanState::initial(2);
        let v = 661.0;
        let i_prev = 100.0;
        for form in [CovarianceUpdate::Information, CovarianceUpdate::Joseph] {
            let up = kalman_update(&st, &m, i_prev, v, form);
            let out = (&m.c * &up.x)[0] + m.d_i * i_prev + m.d_1;
            assert!((out - v).abs() < 1e-9, "{form:?}: {out}");
        }
    }

    #[test]
    fn forms_agree_and_trace_shrinks() {
        let m = model(4);
        let mut a = KalmanState::initial(2);
        let mut b = KalmanState::initial(2);
        let mut x = DVector::from_vec(vec![3.0, -1.0]);
        for k in 0..50 {
            let i = 300.0 * ((k as f64) * 0.3).sin();
            let (next, v) = voltage_step(&m, &x, i);
            x = next;
            let p_prior = &m.a * &a.p * m.a.transpose() + &m.k * m.k.transpose();
            a = kalman_update(&a, &m, i, v, CovarianceUpdate::Information);
            b = kalman_update(&b, &m, i, v, CovarianceUpdate::Joseph);
            assert!(a.p.trace() <= p_prior.trace() + 1e-9);
            assert!((&a.x - &b.x).amax() < 1e-8 * (1.0 + a.x.amax()));
        }
    }
}
