use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{SolveCertificate, SolveStatus, SolverError, KKT_TOLERANCE};

/// `max cᵀx  s.t.  xᵀ Q x + lᵀx ≤ r,  A x ≤ b`, with the symmetric part of `Q` PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct QcqpProblem {
    pub c: DVector<f64>,
    pub q: DMatrix<f64>,
    pub l: DVector<f64>,
    pub r: f64,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
}

/// Eigenvalue tolerance for the convexity check.
pub const PSD_TOLERANCE: f64 = 1e-9;

impl QcqpProblem {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.n();
        if self.q.shape() != (n, n) || self.l.len() != n || self.a_ineq.ncols() != n || self.a_ineq.nrows() != self.b_ineq.len() {
            return Err(SolverError::Dimension(format!(
                "n = {n}, q {:?}, l {}, a {:?}, b {}",
                self.q.shape(),
                self.l.len(),
                self.a_ineq.shape(),
                self.b_ineq.len()
            )));
        }
        let finite = self.c.iter().chain(self.q.iter()).chain(self.l.iter()).chain(self.a_ineq.iter()).chain(self.b_ineq.iter()).all(|v| v.is_finite());
        if !finite || !self.r.is_finite() {
            return Err(SolverError::NonFinite("qcqp data"));
        }
        let min_eig = min_eigenvalue(&self.q);
        if min_eig < -PSD_TOLERANCE {
            return Err(SolverError::NotConvex(min_eig));
        }
        Ok(())
    }

    /// Value of the quadratic constraint function `xᵀQx + lᵀx - r`.
    pub fn quadratic_value(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.q * x)) + self.l.dot(x) - self.r
    }

    pub fn sym_q(&self) -> DMatrix<f64> {
        (&self.q + self.q.transpose()) * 0.5
    }
}

/// Smallest eigenvalue of the symmetric part of `q`.
pub fn min_eigenvalue(q: &DMatrix<f64>) -> f64 {
    if q.nrows() == 0 {
        return 0.0;
    }
    let s = (q + q.transpose()) * 0.5;
    s.symmetric_eigenvalues().min()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpSolution {
    pub x: DVector<f64>,
    pub lambda_quad: f64,
    pub lambda_ineq: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QcqpOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for QcqpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-10,
        }
    }
}

pub fn solve_qcqp(p: &QcqpProblem) -> Result<(QcqpSolution, SolveCertificate), SolverError> {
    solve_qcqp_from(p, &DVector::zeros(p.n()))
}

/// Solves from a caller-chosen starting point (need not be feasible).
pub fn solve_qcqp_from(p: &QcqpProblem, x0: &DVector<f64>) -> Result<(QcqpSolution, SolveCertificate), SolverError> {
    solve_qcqp_with(p, x0, &QcqpOptions::default())
}

pub fn solve_qcqp_with(
    p: &QcqpProblem,
    x0: &DVector<f64>,
    opts: &QcqpOptions,
) -> Result<(QcqpSolution, SolveCertificate), SolverError> {
    let started = Instant::now();
    p.validate()?;
    if x0.len() != p.n() {
        return Err(SolverError::Dimension(format!("x0 has {} entries, expected {}", x0.len(), p.n())));
    }
    let n = p.n();
    let fail = |iterations, x: DVector<f64>, status| {
        let sol = QcqpSolution {
            x,
            lambda_quad: 0.0,
            lambda_ineq: DVector::zeros(p.b_ineq.len()),
        };
        let kkt = qcqp_kkt_residual(p, &sol);
        let cert = SolveCertificate {
            status,
            objective: p.c.dot(&sol.x),
            kkt_residual: kkt,
            iterations,
            wall_time: started.elapsed(),
        };
        (sol, cert)
    };

    let scaled = match Scaled::new(p) {
        Some(s) => s,
        None => return Ok(fail(0, x0.clone(), SolveStatus::Infeasible)),
    };
    let mut iterations = 0;
    let start = if scaled.constraint_values(x0).iter().all(|g| *g < 0.0) {
        x0.clone()
    } else {
        // Phase 1: min t  s.t.  g_j(x) - t <= 0,  t >= -1, from a strictly feasible (x0, t0).
        let quad1 = scaled.quad.as_ref().map(|q| Quad {
            h: q.h.clone().resize(n + 1, n + 1, 0.0),
            l: q.l.clone().push(-1.0),
            r: q.r,
        });
        let ml = scaled.a.nrows();
        let mut a1 = DMatrix::zeros(ml + 1, n + 1);
        a1.view_mut((0, 0), (ml, n)).copy_from(&scaled.a);
        for i in 0..ml {
            a1[(i, n)] = -1.0;
        }
        a1[(ml, n)] = -1.0;
        let b1 = scaled.b.clone().push(1.0);
        let mut g1 = DVector::zeros(n + 1);
        g1[n] = 1.0;
        let t0 = scaled.constraint_values(x0).iter().cloned().fold(0.0f64, f64::max) + 1.0;
        let ph1 = interior_point(&g1, quad1.as_ref(), &a1, &b1, &x0.clone().push(t0), Some(-PHASE1_MARGIN), opts);
        iterations += ph1.iterations;
        let t = ph1.x[n];
        log::debug!("qcqp phase 1: t = {t:e} (converged: {})", ph1.converged);
        let x1 = ph1.x.rows(0, n).into_owned();
        if !scaled.constraint_values(&x1).iter().all(|g| *g < 0.0) {
            let status = if t > PHASE1_TOLERANCE && ph1.converged {
                SolveStatus::Infeasible
            } else {
                SolveStatus::Failure
            };
            return Ok(fail(iterations, x0.clone(), status));
        }
        x1
    };
    let core = interior_point(&scaled.grad_f, scaled.quad.as_ref(), &scaled.a, &scaled.b, &start, None, opts);
    iterations += core.iterations;
    if !core.converged {
        return Ok(fail(iterations, start, SolveStatus::Failure));
    }
    let sol = scaled.unscale(p, &core);
    let kkt = qcqp_kkt_residual(p, &sol);
    let status = if kkt <= KKT_TOLERANCE {
        SolveStatus::Optimal
    } else {
        log::warn!("qcqp: converged but KKT residual {kkt:e} exceeds tolerance");
        SolveStatus::Failure
    };
    let cert = SolveCertificate {
        status,
        objective: p.c.dot(&sol.x),
        kkt_residual: kkt,
        iterations,
        wall_time: started.elapsed(),
    };
    Ok((sol, cert))
}

/// Phase 1 stops once every scaled constraint has at least this slack.
const PHASE1_MARGIN: f64 = 1e-2;

/// Phase-1 optimum above which the constraints are reported infeasible.
const PHASE1_TOLERANCE: f64 = 1e-7;

/// Relative KKT residual of `sol` for `p` in the original problem scaling.
///
/// Maximum of: stationarity `‖c − λ_q ∇g_q − Aᵀλ‖∞ / (1 + ‖c‖∞)`, primal
/// violation of each constraint over `1 + |rhs|`, negative multipliers, and
/// complementarity `λ_j |g_j| / (1 + |cᵀx|)`.
pub fn qcqp_kkt_residual(p: &QcqpProblem, sol: &QcqpSolution) -> f64 {
    let x = &sol.x;
    if x.len() != p.n() || x.iter().any(|v| !v.is_finite()) || sol.lambda_ineq.len() != p.b_ineq.len() {
        return f64::INFINITY;
    }
    let qs = p.sym_q();
    let grad_q = &qs * x * 2.0 + &p.l;
    let stat = &p.c - &grad_q * sol.lambda_quad - p.a_ineq.transpose() * &sol.lambda_ineq;
    let cscale = 1.0 + p.c.amax();
    let obj_scale = 1.0 + p.c.dot(x).abs();
    let gq = p.quadratic_value(x);
    let mut res = stat.amax() / cscale;
    res = res.max(gq.max(0.0) / (1.0 + p.r.abs()));
    res = res.max((-sol.lambda_quad).max(0.0));
    res = res.max(sol.lambda_quad.abs() * gq.abs() / obj_scale);
    let ax = &p.a_ineq * x;
    for j in 0..p.b_ineq.len() {
        let g = ax[j] - p.b_ineq[j];
        res = res.max(g.max(0.0) / (1.0 + p.b_ineq[j].abs()));
        res = res.max((-sol.lambda_ineq[j]).max(0.0));
        res = res.max(sol.lambda_ineq[j].abs() * g.abs() / obj_scale);
    }
    res
}

/// Quadratic constraint in the form `½ xᵀ h x + lᵀx ≤ r`.
#[derive(Debug, Clone)]
struct Quad {
    h: DMatrix<f64>,
    l: DVector<f64>,
    r: f64,
}

/// Normalized copy of a problem: objective and every row scaled to unit size.
struct Scaled {
    grad_f: DVector<f64>,
    quad: Option<Quad>,
    quad_scale: f64,
    a: DMatrix<f64>,
    b: DVector<f64>,
    rows: Vec<usize>,
    row_scale: Vec<f64>,
    kappa: f64,
}

impl Scaled {
    /// `None` when a constant constraint is violated outright.
    fn new(p: &QcqpProblem) -> Option<Self> {
        let n = p.n();
        let kappa = if p.c.amax() > 0.0 { p.c.amax() } else { 1.0 };
        let grad_f = -&p.c / kappa;
        let qs = p.sym_q();
        let rho = p.l.amax().max(2.0 * qs.amax());
        let (quad, quad_scale) = if rho > 0.0 {
            (
                Some(Quad {
                    h: &qs * (2.0 / rho),
                    l: &p.l / rho,
                    r: p.r / rho,
                }),
                rho,
            )
        } else if p.r >= 0.0 {
            (None, 1.0)
        } else {
            return None;
        };
        let mut rows = Vec::new();
        let mut row_scale = Vec::new();
        for j in 0..p.a_ineq.nrows() {
            let s = p.a_ineq.row(j).amax();
            if s > 0.0 {
                rows.push(j);
                row_scale.push(s);
            } else if p.b_ineq[j] < 0.0 {
                return None;
            }
        }
        let mut a = DMatrix::zeros(rows.len(), n);
        let mut b = DVector::zeros(rows.len());
        for (k, (&j, &s)) in rows.iter().zip(&row_scale).enumerate() {
            a.set_row(k, &(p.a_ineq.row(j) / s));
            b[k] = p.b_ineq[j] / s;
        }
        Some(Self {
            grad_f,
            quad,
            quad_scale,
            a,
            b,
            rows,
            row_scale,
            kappa,
        })
    }

    fn constraint_values(&self, x: &DVector<f64>) -> Vec<f64> {
        let mut out: Vec<f64> = self.quad.iter().map(|q| quad_value(q, x)).collect();
        out.extend((&self.a * x - &self.b).iter());
        out
    }

    fn unscale(&self, p: &QcqpProblem, core: &Core) -> QcqpSolution {
        let mut lambda_ineq = DVector::zeros(p.b_ineq.len());
        for (k, (&j, &s)) in self.rows.iter().zip(&self.row_scale).enumerate() {
            lambda_ineq[j] = self.kappa * core.lambda[k] / s;
        }
        QcqpSolution {
            x: core.x.clone(),
            lambda_quad: self.kappa * core.lambda_quad / self.quad_scale,
            lambda_ineq,
        }
    }
}

fn quad_value(q: &Quad, x: &DVector<f64>) -> f64 {
    0.5 * x.dot(&(&q.h * x)) + q.l.dot(x) - q.r
}

struct Core {
    x: DVector<f64>,
    lambda_quad: f64,
    lambda: DVector<f64>,
    iterations: usize,
    converged: bool,
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(a, d)| -a / d)
        .fold(f64::INFINITY, f64::min)
}

/// Feasible primal-dual iteration for `min gfᵀx s.t. quad(x) ≤ 0, A x ≤ b`
/// from a strictly feasible `x0`.
///
/// Slacks are always `s = −g(x)`. Steps use Mehrotra's predictor-corrector
/// direction, backtracked to stay strictly feasible and to reduce the
/// residual of the centered system; the plain centered Newton direction is
/// tried when the corrected one gives no reduction.
fn interior_point(
    gf: &DVector<f64>,
    quad: Option<&Quad>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x0: &DVector<f64>,
    stop_below: Option<f64>,
    opts: &QcqpOptions,
) -> Core {
    let n = gf.len();
    let ml = a.nrows();
    let at = a.transpose();
    // Quadratic constraint value and gradient, or zeros without one.
    let quad_eval = |x: &DVector<f64>| match quad {
        Some(q) => {
            let hx = &q.h * x;
            (0.5 * x.dot(&hx) + q.l.dot(x) - q.r, hx + &q.l)
        }
        None => (-1.0, DVector::zeros(n)),
    };
    let dual_residual = |grad_q: &DVector<f64>, lq: f64, lam: &DVector<f64>| gf + &at * lam + grad_q * lq;
    let split = |x: DVector<f64>, lq: f64, lam: DVector<f64>, iterations, converged| Core {
        x,
        lambda_quad: if quad.is_some() { lq } else { 0.0 },
        lambda: lam,
        iterations,
        converged,
    };

    let mt = ml + usize::from(quad.is_some());
    let mut x = x0.clone();
    let mut lam = DVector::from_element(ml, 1.0);
    let mut lq = if quad.is_some() { 1.0 } else { 0.0 };
    let gscale = 1.0 + gf.amax();

    // Near the optimum the Newton system can lose all accuracy; the best
    // iterate seen is kept and returned if the iteration stalls close to it.
    type Best = Option<(f64, DVector<f64>, f64, DVector<f64>, usize)>;
    let mut best: Best = None;
    let fallback = |best: Best, iter| match best {
        Some((merit, bx, bq, bl, _)) if merit <= NEAR_CONVERGED => split(bx, bq, bl, iter, true),
        _ => split(x0.clone(), 0.0, DVector::zeros(ml), iter, false),
    };
    for iter in 0..opts.max_iterations {
        let (gq, grad_q) = quad_eval(&x);
        let s = b - a * &x;
        let sq = -gq;
        let r_d = dual_residual(&grad_q, lq, &lam);
        let mu = if mt > 0 { (s.dot(&lam) + if quad.is_some() { sq * lq } else { 0.0 }) / mt as f64 } else { 0.0 };
        if !x.iter().chain(lam.iter()).all(|v| v.is_finite()) || !lq.is_finite() || x.amax() > 1e12 || lam.amax().max(lq) > 1e14 {
            return fallback(best, iter);
        }
        let merit = (r_d.amax() / gscale).max(mu);
        if merit <= opts.tolerance || stop_below.is_some_and(|v| gf.dot(&x) < v) {
            return split(x, lq, lam, iter, true);
        }
        match &best {
            Some((m, _, _, _, at)) if merit >= *m => {
                if *m <= NEAR_CONVERGED && iter - at >= STALL_ITERATIONS {
                    return fallback(best, iter);
                }
            }
            _ => best = Some((merit, x.clone(), lq, lam.clone(), iter)),
        }
        let w = lam.component_div(&s);
        let mut k = &at * DMatrix::from_fn(ml, n, |i, j| a[(i, j)] * w[i]);
        if let Some(q) = quad {
            k += &q.h * lq;
            k += &grad_q * grad_q.transpose() * (lq / sq);
        }
        let Some(chol) = factor_regularized(k) else {
            return fallback(best, iter);
        };
        // Newton step for complementarity targets `rc` (linear rows) and `rcq` (quadratic row).
        let direction = |rc: &DVector<f64>, rcq: f64| {
            let mut rhs = -&r_d + &at * rc.component_div(&s);
            if quad.is_some() {
                rhs += &grad_q * (rcq / sq);
            }
            let dx = chol.solve(&rhs);
            let adx = a * &dx;
            let dsq = -grad_q.dot(&dx);
            let dl = (-rc + lam.component_mul(&adx)).component_div(&s);
            let dlq = if quad.is_some() { (-rcq - lq * dsq) / sq } else { 0.0 };
            (dx, adx, dsq, dl, dlq)
        };
        let (_, adx_a, dsq_a, dl_a, dlq_a) = direction(&lam.component_mul(&s), lq * sq);
        let ds_a = -&adx_a;
        let step_to_boundary = |ds: &DVector<f64>, dl: &DVector<f64>, dsq: f64, dlq: f64| {
            let mut m = max_step(&s, ds).min(max_step(&lam, dl));
            if quad.is_some() {
                for (v, d) in [(sq, dsq), (lq, dlq)] {
                    if d < 0.0 {
                        m = m.min(-v / d);
                    }
                }
            }
            m
        };
        let aa = step_to_boundary(&ds_a, &dl_a, dsq_a, dlq_a).min(1.0);
        let mu_aff = if mt > 0 {
            let lin = (&s + &ds_a * aa).dot(&(&lam + &dl_a * aa));
            let qd = if quad.is_some() { (sq + dsq_a * aa) * (lq + dlq_a * aa) } else { 0.0 };
            (lin + qd) / mt as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).clamp(0.0, 1.0).powi(3).max(SIGMA_MIN) } else { 0.0 };
        let target = sigma * mu;
        let residual = |rd: &DVector<f64>, s: &DVector<f64>, lam: &DVector<f64>, sq: f64, lq: f64| {
            let rc = lam.component_mul(s).add_scalar(-target);
            let rcq = if quad.is_some() { sq * lq - target } else { 0.0 };
            (rd.norm_squared() + rc.norm_squared() + rcq * rcq).sqrt()
        };
        let r0 = residual(&r_d, &s, &lam, sq, lq);
        let corrected = (lam.component_mul(&s) + ds_a.component_mul(&dl_a)).add_scalar(-target);
        let corrected_q = lq * sq + dsq_a * dlq_a - target;
        let centered = lam.component_mul(&s).add_scalar(-target);
        let centered_q = lq * sq - target;
        let mut accepted = None;
        for (rc, rcq) in [(corrected, corrected_q), (centered, centered_q)] {
            let (dx, adx, dsq, dl, dlq) = direction(&rc, rcq);
            let mut alpha = (0.99 * step_to_boundary(&-&adx, &dl, dsq, dlq)).min(1.0);
            for _ in 0..BACKTRACKS {
                let nx = &x + &dx * alpha;
                let ns = &s - &adx * alpha;
                let (ngq, ngrad) = quad_eval(&nx);
                if ns.iter().all(|v| *v > 0.0) && ngq < 0.0 {
                    let nl = &lam + &dl * alpha;
                    let nlq = lq + dlq * alpha;
                    let nrd = dual_residual(&ngrad, nlq, &nl);
                    if residual(&nrd, &ns, &nl, -ngq, nlq) <= (1.0 - 1e-4 * alpha) * r0 {
                        accepted = Some((nx, nl, nlq));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((nx, nl, nlq)) = accepted else {
            return fallback(best, iter);
        };
        (x, lam, lq) = (nx, nl, nlq);
    }
    fallback(best, opts.max_iterations)
}

/// Merit below which a stalled iterate is handed to the residual check.
const NEAR_CONVERGED: f64 = KKT_TOLERANCE;
const STALL_ITERATIONS: usize = 8;
const BACKTRACKS: usize = 40;
/// Lower bound on the centering parameter; keeps iterates away from the curved boundary.
const SIGMA_MIN: f64 = 0.1;

fn factor_regularized(k: DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = k.nrows();
    let scale = (0..n).map(|i| k[(i, i)].abs()).fold(0.0f64, f64::max).max(1e-300);
    let mut delta = 0.0;
    for _ in 0..8 {
        let mut kk = k.clone();
        for i in 0..n {
            kk[(i, i)] += delta;
        }
        if let Some(c) = kk.cholesky() {
            return Some(c);
        }
        delta = if delta == 0.0 { 1e-14 * scale } else { delta * 100.0 };
    }
    None
}
