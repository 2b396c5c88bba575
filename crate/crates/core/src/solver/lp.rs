use std::time::Instant;

use super::envelope::NormalMatrix;
use super::sparse::SparseMatrix;
use super::{dot, inf_norm, SolveCertificate, SolveStatus, SolverError, KKT_TOLERANCE};

/// `min cᵀx + ½ Σ q_j x_j²  s.t.  A_eq x = b_eq,  A_ineq x ≤ b_ineq,  lower ≤ x ≤ upper`.
///
/// Bounds may be infinite. `q` is either empty (pure LP) or has one
/// non-negative entry per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub c: Vec<f64>,
    pub q: Vec<f64>,
    pub a_eq: SparseMatrix,
    pub b_eq: Vec<f64>,
    pub a_ineq: SparseMatrix,
    pub b_ineq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// Empty program over `n` free variables with zero cost.
    pub fn new(n: usize) -> Self {
        Self {
            c: vec![0.0; n],
            q: Vec::new(),
            a_eq: SparseMatrix::new(n),
            b_eq: Vec::new(),
            a_ineq: SparseMatrix::new(n),
            b_ineq: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn add_eq(&mut self, entries: impl IntoIterator<Item = (usize, f64)>, rhs: f64) -> usize {
        self.b_eq.push(rhs);
        self.a_eq.push_row(entries)
    }

    pub fn add_ineq(&mut self, entries: impl IntoIterator<Item = (usize, f64)>, rhs: f64) -> usize {
        self.b_ineq.push(rhs);
        self.a_ineq.push_row(entries)
    }

    fn q_at(&self, j: usize) -> f64 {
        self.q.get(j).copied().unwrap_or(0.0)
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        (0..self.n()).map(|j| self.c[j] * x[j] + 0.5 * self.q_at(j) * x[j] * x[j]).sum()
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.n();
        let dim = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(SolverError::Dimension(format!("{what}: {got} != {want}")))
            }
        };
        dim("a_eq columns", self.a_eq.ncols(), n)?;
        dim("a_ineq columns", self.a_ineq.ncols(), n)?;
        dim("b_eq", self.b_eq.len(), self.a_eq.nrows())?;
        dim("b_ineq", self.b_ineq.len(), self.a_ineq.nrows())?;
        dim("lower", self.lower.len(), n)?;
        dim("upper", self.upper.len(), n)?;
        if !self.q.is_empty() {
            dim("q", self.q.len(), n)?;
        }
        if !self.c.iter().chain(&self.b_eq).chain(&self.b_ineq).all(|v| v.is_finite()) {
            return Err(SolverError::NonFinite("c/b"));
        }
        if self.q.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SolverError::NonFinite("q (must be finite and non-negative)"));
        }
        if !self.a_eq.is_finite() || !self.a_ineq.is_finite() {
            return Err(SolverError::NonFinite("constraint matrix"));
        }
        if self.lower.iter().any(|v| v.is_nan() || *v == f64::INFINITY)
            || self.upper.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY)
        {
            return Err(SolverError::NonFinite("bounds"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions {
    pub max_iterations: usize,
    /// Relative tolerance on primal/dual residuals and duality gap.
    pub tolerance: f64,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LpRow {
    Eq(usize),
    Ineq(usize),
}

/// Evidence of infeasibility: a positive phase-1 optimum and the rows that
/// still need artificial support there, or a pair of crossed bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibilityWitness {
    pub phase1_objective: f64,
    pub rows: Vec<(LpRow, f64)>,
    pub crossed_bounds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    /// Multipliers of the equality rows (sign: `c + Qx - A_eqᵀ y + A_ineqᵀ λ` = bound duals).
    pub y_eq: Vec<f64>,
    /// Non-negative multipliers of the inequality rows.
    pub lambda_ineq: Vec<f64>,
    pub witness: Option<InfeasibilityWitness>,
}

pub fn solve_lp(p: &LinearProgram) -> Result<(LpSolution, SolveCertificate), SolverError> {
    solve_lp_with(p, &LpOptions::default())
}

pub fn solve_lp_with(p: &LinearProgram, opts: &LpOptions) -> Result<(LpSolution, SolveCertificate), SolverError> {
    let started = Instant::now();
    p.validate()?;
    let n = p.n();
    let crossed: Vec<usize> = (0..n).filter(|j| p.lower[*j] > p.upper[*j]).collect();
    if !crossed.is_empty() {
        let sol = LpSolution {
            x: vec![f64::NAN; n],
            y_eq: vec![0.0; p.b_eq.len()],
            lambda_ineq: vec![0.0; p.b_ineq.len()],
            witness: Some(InfeasibilityWitness {
                phase1_objective: f64::INFINITY,
                rows: Vec::new(),
                crossed_bounds: crossed,
            }),
        };
        let cert = SolveCertificate {
            status: SolveStatus::Infeasible,
            objective: f64::NAN,
            kkt_residual: f64::INFINITY,
            iterations: 0,
            wall_time: started.elapsed(),
        };
        return Ok((sol, cert));
    }

    let conv = StandardForm::from_problem(p)?;
    let main = interior_point(&conv.sf, opts);
    let mut iterations = main.iterations;
    if main.converged {
        let sol = conv.recover(&main);
        let kkt = lp_kkt_residual(p, &sol);
        let status = if kkt <= KKT_TOLERANCE {
            SolveStatus::Optimal
        } else {
            SolveStatus::Failure
        };
        let cert = SolveCertificate {
            status,
            objective: p.objective(&sol.x),
            kkt_residual: kkt,
            iterations,
            wall_time: started.elapsed(),
        };
        return Ok((sol, cert));
    }

    log::debug!("lp: no convergence after {} iterations, running phase 1", main.iterations);
    let (phase1, witness) = conv.phase_one(opts);
    iterations += phase1;
    let mut sol = conv.recover(&main);
    let status = if witness.is_some() {
        SolveStatus::Infeasible
    } else {
        SolveStatus::Failure
    };
    sol.witness = witness;
    let cert = SolveCertificate {
        status,
        objective: p.objective(&sol.x),
        kkt_residual: lp_kkt_residual(p, &sol),
        iterations,
        wall_time: started.elapsed(),
    };
    Ok((sol, cert))
}

/// Relative KKT residual of `sol` for `p`, computed from the problem data only.
///
/// Bound multipliers are recovered from the reduced costs. The result is the
/// maximum of the scaled primal infeasibility, dual infeasibility,
/// stationarity and total complementarity.
pub fn lp_kkt_residual(p: &LinearProgram, sol: &LpSolution) -> f64 {
    let x = &sol.x;
    if x.len() != p.n() || x.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let mut g: Vec<f64> = (0..p.n()).map(|j| p.c[j] + p.q_at(j) * x[j]).collect();
    for (gj, a) in g.iter_mut().zip(p.a_eq.mul_t_vec(&sol.y_eq)) {
        *gj -= a;
    }
    for (gj, a) in g.iter_mut().zip(p.a_ineq.mul_t_vec(&sol.lambda_ineq)) {
        *gj += a;
    }
    let ax_eq = p.a_eq.mul_vec(x);
    let ax_in = p.a_ineq.mul_vec(x);
    let eq_res = ax_eq.iter().zip(&p.b_eq).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / (1.0 + inf_norm(&p.b_eq));
    let in_res = ax_in.iter().zip(&p.b_ineq).fold(0.0f64, |m, (a, b)| m.max(a - b)) / (1.0 + inf_norm(&p.b_ineq));
    let mut bound_res = 0.0f64;
    let mut stat = 0.0f64;
    let mut comp = 0.0;
    for j in 0..p.n() {
        let (lo, hi) = (p.lower[j], p.upper[j]);
        if lo.is_finite() {
            bound_res = bound_res.max((lo - x[j]).max(0.0) / (1.0 + lo.abs()));
        }
        if hi.is_finite() {
            bound_res = bound_res.max((x[j] - hi).max(0.0) / (1.0 + hi.abs()));
        }
        let zl = if lo.is_finite() { g[j].max(0.0) } else { 0.0 };
        let zu = if hi.is_finite() { (-g[j]).max(0.0) } else { 0.0 };
        stat = stat.max((g[j] - zl + zu).abs());
        if zl > 0.0 {
            comp += zl * (x[j] - lo).abs();
        }
        if zu > 0.0 {
            comp += zu * (hi - x[j]).abs();
        }
    }
    let mut dual_neg = 0.0f64;
    for (i, l) in sol.lambda_ineq.iter().enumerate() {
        dual_neg = dual_neg.max(-l);
        comp += l.abs() * (p.b_ineq[i] - ax_in[i]).abs();
    }
    let cscale = 1.0 + inf_norm(&p.c);
    let obj = p.objective(x);
    [
        eq_res,
        in_res,
        bound_res,
        dual_neg / cscale,
        stat / cscale,
        comp / (1.0 + obj.abs()),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// `min cᵀz + ½ Σ q z²  s.t.  A z = b,  0 ≤ z ≤ u`.
struct StdForm {
    m: usize,
    cols: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
    c: Vec<f64>,
    q: Vec<f64>,
    u: Vec<f64>,
}

impl StdForm {
    fn n(&self) -> usize {
        self.cols.len()
    }

    fn a_mul(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (col, zj) in self.cols.iter().zip(z) {
            for (r, v) in col {
                out[*r] += v * zj;
            }
        }
        out
    }

    fn at_mul(&self, y: &[f64]) -> Vec<f64> {
        self.cols.iter().map(|col| col.iter().map(|(r, v)| v * y[*r]).sum()).collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum VarMap {
    Shift { col: usize, lo: f64 },
    Neg { col: usize, hi: f64 },
    Split { pos: usize, neg: usize },
    Fixed(f64),
}

struct StandardForm {
    sf: StdForm,
    map: Vec<VarMap>,
    m_eq: usize,
}

struct IpmResult {
    z: Vec<f64>,
    y: Vec<f64>,
    iterations: usize,
    converged: bool,
}

impl StandardForm {
    fn from_problem(p: &LinearProgram) -> Result<Self, SolverError> {
        let m_eq = p.a_eq.nrows();
        let m = m_eq + p.a_ineq.nrows();
        let mut cols: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut c = Vec::new();
        let mut q = Vec::new();
        let mut u = Vec::new();
        let mut map = Vec::with_capacity(p.n());
        let mut new_col = |cost: f64, quad: f64, upper: f64, cols: &mut Vec<Vec<(usize, f64)>>| {
            cols.push(Vec::new());
            c.push(cost);
            q.push(quad);
            u.push(upper);
            cols.len() - 1
        };
        for j in 0..p.n() {
            let (lo, hi, cj, qj) = (p.lower[j], p.upper[j], p.c[j], p.q_at(j));
            let entry = if lo == hi {
                VarMap::Fixed(lo)
            } else if lo.is_finite() {
                VarMap::Shift {
                    col: new_col(cj + qj * lo, qj, hi - lo, &mut cols),
                    lo,
                }
            } else if hi.is_finite() {
                VarMap::Neg {
                    col: new_col(-cj - qj * hi, qj, f64::INFINITY, &mut cols),
                    hi,
                }
            } else {
                if qj != 0.0 {
                    return Err(SolverError::FreeQuadratic(j));
                }
                VarMap::Split {
                    pos: new_col(cj, 0.0, f64::INFINITY, &mut cols),
                    neg: new_col(-cj, 0.0, f64::INFINITY, &mut cols),
                }
            };
            map.push(entry);
        }
        let mut b: Vec<f64> = p.b_eq.iter().chain(&p.b_ineq).copied().collect();
        let rows = p.a_eq.rows().chain(p.a_ineq.rows());
        for (i, row) in rows.enumerate() {
            for (j, a) in row {
                match map[*j] {
                    VarMap::Shift { col, lo } => {
                        cols[col].push((i, *a));
                        b[i] -= a * lo;
                    }
                    VarMap::Neg { col, hi } => {
                        cols[col].push((i, -a));
                        b[i] -= a * hi;
                    }
                    VarMap::Split { pos, neg } => {
                        cols[pos].push((i, *a));
                        cols[neg].push((i, -a));
                    }
                    VarMap::Fixed(v) => b[i] -= a * v,
                }
            }
        }
        for i in m_eq..m {
            let col = new_col(0.0, 0.0, f64::INFINITY, &mut cols);
            cols[col].push((i, 1.0));
        }
        Ok(Self {
            sf: StdForm { m, cols, b, c, q, u },
            map,
            m_eq,
        })
    }

    fn recover(&self, r: &IpmResult) -> LpSolution {
        let x = self
            .map
            .iter()
            .map(|m| match *m {
                VarMap::Shift { col, lo } => lo + r.z[col],
                VarMap::Neg { col, hi } => hi - r.z[col],
                VarMap::Split { pos, neg } => r.z[pos] - r.z[neg],
                VarMap::Fixed(v) => v,
            })
            .collect();
        LpSolution {
            x,
            y_eq: r.y[..self.m_eq].to_vec(),
            lambda_ineq: r.y[self.m_eq..].iter().map(|v| -v).collect(),
            witness: None,
        }
    }

    /// Minimizes the total artificial support; returns iterations and a
    /// witness when the optimum is clearly positive.
    fn phase_one(&self, opts: &LpOptions) -> (usize, Option<InfeasibilityWitness>) {
        let sf = &self.sf;
        let mut cols = sf.cols.clone();
        let mut c = vec![0.0; sf.n()];
        let mut u = sf.u.clone();
        for i in 0..sf.m {
            cols.push(vec![(i, if sf.b[i] >= 0.0 { 1.0 } else { -1.0 })]);
            c.push(1.0);
            u.push(f64::INFINITY);
        }
        let n = cols.len();
        let aux = StdForm {
            m: sf.m,
            cols,
            b: sf.b.clone(),
            c,
            q: vec![0.0; n],
            u,
        };
        let r = interior_point(&aux, opts);
        let arts = &r.z[sf.n()..];
        let total: f64 = arts.iter().sum();
        let scale = 1.0 + inf_norm(&sf.b);
        log::debug!("lp phase 1: objective {total:e} after {} iterations", r.iterations);
        if total > 1e-6 * scale {
            let rows = arts
                .iter()
                .enumerate()
                .filter(|(_, a)| **a > 1e-7 * scale)
                .map(|(i, a)| {
                    let row = if i < self.m_eq { LpRow::Eq(i) } else { LpRow::Ineq(i - self.m_eq) };
                    (row, *a)
                })
                .collect();
            (
                r.iterations,
                Some(InfeasibilityWitness {
                    phase1_objective: total,
                    rows,
                    crossed_bounds: Vec::new(),
                }),
            )
        } else {
            (r.iterations, None)
        }
    }
}

/// Largest step in (0, ∞) keeping `x + α dx ≥ 0`.
fn max_step(x: &[f64], dx: &[f64]) -> f64 {
    x.iter()
        .zip(dx)
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

/// Mehrotra predictor-corrector on the bounded standard form.
fn interior_point(sf: &StdForm, opts: &LpOptions) -> IpmResult {
    let n = sf.n();
    let m = sf.m;
    let bounded: Vec<bool> = sf.u.iter().map(|u| u.is_finite()).collect();
    let nb = bounded.iter().filter(|b| **b).count();
    let quadratic = sf.q.iter().any(|q| *q > 0.0);
    let mut normal = NormalMatrix::new(m, &sf.cols);
    log::trace!("lp: {m} rows, normal-matrix envelope {} entries", normal.envelope_size());

    // Starting point from least-squares estimates, shifted into the interior.
    normal.assemble(&vec![1.0; n]);
    normal.factor();
    let mut z = sf.at_mul(&normal.solve(&sf.b));
    let mut y = normal.solve(&sf.a_mul(&sf.c));
    let aty = sf.at_mul(&y);
    let mut s: Vec<f64> = sf.c.iter().zip(&aty).map(|(c, a)| c - a).collect();
    let shift = |v: &mut Vec<f64>| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let d = (-1.5 * lo).max(0.0);
        v.iter_mut().for_each(|x| *x += d);
    };
    shift(&mut z);
    shift(&mut s);
    let zs = dot(&z, &s);
    let (sz, ss): (f64, f64) = (z.iter().sum(), s.iter().sum());
    let dz = if ss > 0.0 { 0.5 * zs / ss } else { 0.0 };
    let ds = if sz > 0.0 { 0.5 * zs / sz } else { 0.0 };
    let zscale = (inf_norm(&z) * 1e-2).max(1.0);
    let sscale = (inf_norm(&s) * 1e-2).max(1.0);
    for j in 0..n {
        z[j] += dz;
        s[j] += ds;
        if z[j].is_nan() || z[j] <= 1e-4 * zscale {
            z[j] = zscale;
        }
        if s[j].is_nan() || s[j] <= 1e-4 * sscale {
            s[j] = sscale;
        }
    }
    let mut w = vec![0.0; n];
    let mut v = vec![0.0; n];
    for j in 0..n {
        if bounded[j] {
            if z[j] >= sf.u[j] {
                z[j] = 0.5 * sf.u[j];
            }
            w[j] = sf.u[j] - z[j];
            v[j] = s[j];
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        y = vec![0.0; m];
    }

    let bnorm = 1.0 + inf_norm(&sf.b);
    let cnorm = 1.0 + inf_norm(&sf.c);
    let unorm = 1.0 + sf.u.iter().filter(|u| u.is_finite()).fold(0.0f64, |a, u| a.max(u.abs()));
    let count = (n + nb).max(1) as f64;
    let mut d = vec![0.0; n];

    for iter in 0..opts.max_iterations {
        let az = sf.a_mul(&z);
        let aty = sf.at_mul(&y);
        let r_b: Vec<f64> = sf.b.iter().zip(&az).map(|(b, a)| b - a).collect();
        let r_u: Vec<f64> = (0..n).map(|j| if bounded[j] { sf.u[j] - z[j] - w[j] } else { 0.0 }).collect();
        let r_c: Vec<f64> = (0..n).map(|j| sf.c[j] + sf.q[j] * z[j] - aty[j] - s[j] + v[j]).collect();
        let comp = dot(&z, &s) + dot(&w, &v);
        let mu = comp / count;
        let quad: f64 = (0..n).map(|j| 0.5 * sf.q[j] * z[j] * z[j]).sum();
        let pobj = dot(&sf.c, &z) + quad;
        let ufin: f64 = (0..n).filter(|j| bounded[*j]).map(|j| sf.u[j] * v[j]).sum();
        let dobj = dot(&sf.b, &y) - ufin - quad;
        let pres = (inf_norm(&r_b) / bnorm).max(inf_norm(&r_u) / unorm);
        let dres = inf_norm(&r_c) / cnorm;
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs());
        let cgap = comp / (1.0 + pobj.abs());
        if pres <= opts.tolerance && dres <= opts.tolerance && gap <= opts.tolerance && cgap <= opts.tolerance {
            return IpmResult {
                z,
                y,
                iterations: iter,
                converged: true,
            };
        }
        if !(pobj.is_finite() && dobj.is_finite()) || inf_norm(&z) > 1e14 || inf_norm(&y) > 1e14 {
            return IpmResult {
                z,
                y,
                iterations: iter,
                converged: false,
            };
        }

        for j in 0..n {
            let mut inv = sf.q[j] + s[j] / z[j];
            if bounded[j] {
                inv += v[j] / w[j];
            }
            d[j] = 1.0 / inv;
        }
        normal.assemble(&d);
        normal.factor();

        let direction = |r_zs: &[f64], r_wv: &[f64]| {
            let r: Vec<f64> = (0..n)
                .map(|j| {
                    let mut rj = -r_c[j] + r_zs[j] / z[j];
                    if bounded[j] {
                        rj -= (r_wv[j] - v[j] * r_u[j]) / w[j];
                    }
                    rj
                })
                .collect();
            let dr: Vec<f64> = (0..n).map(|j| d[j] * r[j]).collect();
            let adr = sf.a_mul(&dr);
            let rhs: Vec<f64> = r_b.iter().zip(&adr).map(|(a, b)| a - b).collect();
            let dy = normal.solve(&rhs);
            let atdy = sf.at_mul(&dy);
            let dz: Vec<f64> = (0..n).map(|j| d[j] * (r[j] + atdy[j])).collect();
            let ds: Vec<f64> = (0..n).map(|j| (r_zs[j] - s[j] * dz[j]) / z[j]).collect();
            let dw: Vec<f64> = (0..n).map(|j| if bounded[j] { r_u[j] - dz[j] } else { 0.0 }).collect();
            let dv: Vec<f64> = (0..n)
                .map(|j| if bounded[j] { (r_wv[j] - v[j] * dw[j]) / w[j] } else { 0.0 })
                .collect();
            (dz, dy, ds, dw, dv)
        };
        let steps = |dz: &[f64], ds: &[f64], dw: &[f64], dv: &[f64]| {
            let ap = max_step(&z, dz).min(max_step(&w, dw));
            let ad = max_step(&s, ds).min(max_step(&v, dv));
            if quadratic {
                let a = ap.min(ad);
                (a, a)
            } else {
                (ap, ad)
            }
        };

        let r_zs: Vec<f64> = (0..n).map(|j| -z[j] * s[j]).collect();
        let r_wv: Vec<f64> = (0..n).map(|j| -w[j] * v[j]).collect();
        let (dza, _, dsa, dwa, dva) = direction(&r_zs, &r_wv);
        let (ap, ad) = steps(&dza, &dsa, &dwa, &dva);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mut comp_aff = 0.0;
        for j in 0..n {
            comp_aff += (z[j] + ap * dza[j]) * (s[j] + ad * dsa[j]);
            if bounded[j] {
                comp_aff += (w[j] + ap * dwa[j]) * (v[j] + ad * dva[j]);
            }
        }
        let sigma = (comp_aff / comp).clamp(0.0, 1.0).powi(3);
        let target = sigma * mu;
        let r_zs: Vec<f64> = (0..n).map(|j| target - z[j] * s[j] - dza[j] * dsa[j]).collect();
        let r_wv: Vec<f64> = (0..n)
            .map(|j| if bounded[j] { target - w[j] * v[j] - dwa[j] * dva[j] } else { 0.0 })
            .collect();
        let (dz, dy, ds, dw, dv) = direction(&r_zs, &r_wv);
        let (ap, ad) = steps(&dz, &ds, &dw, &dv);
        let eta = 0.995f64.max(1.0 - 10.0 * mu / (1.0 + mu)).min(0.9999);
        let (ap, ad) = ((eta * ap).min(1.0), (eta * ad).min(1.0));
        for j in 0..n {
            z[j] += ap * dz[j];
            s[j] += ad * ds[j];
            if bounded[j] {
                w[j] += ap * dw[j];
                v[j] += ad * dv[j];
            }
        }
        for i in 0..m {
            y[i] += ad * dy[i];
        }
    }
    IpmResult {
        z,
        y,
        iterations: opts.max_iterations,
        converged: false,
    }
}
