//! Primal-dual interior-point method with slack variables on inequalities.
//!
//! Each iteration solves the reduced Newton system
//!
//! ```text
//! [ M   Jgᵀ ] [dx]   [-N]      M = ∇²L + Jhᵀ diag(μ/z) Jh
//! [ Jg  0   ] [dλ] = [-g]      N = ∇L + Jhᵀ ((μ∘h + γ)/z)
//! ```
//!
//! then recovers `dz`, `dμ` and takes fraction-to-boundary steps. Variable
//! bounds are inequality rows with a single unit Jacobian entry; fixed
//! variables are removed from the iteration.

use std::time::Instant;

use log::debug;
use nalgebra::{DMatrix, DVector};

use super::{IterRecord, NlpProblem, NlpSolution, NlpStatus, SolveOptions};

/// Bound on how far `μ_i z_i` may drift from the barrier parameter.
const MU_SAFEGUARD: f64 = 1e10;
/// Backtracking gives up below this step and takes the full step instead.
const MIN_STEP: f64 = 1e-8;
const INITIAL_BARRIER: f64 = 0.1;
/// A barrier subproblem counts as solved once its error is below this multiple of the barrier parameter.
const BARRIER_TOL_FACTOR: f64 = 10.0;

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

struct Rows {
    /// Free-variable position and sign (`-1` lower, `+1` upper) of each bound row.
    bounds: Vec<(usize, f64, f64)>,
}

struct Eval {
    f: f64,
    grad: Vec<f64>,
    g: Vec<f64>,
    /// General rows followed by bound rows.
    h: Vec<f64>,
    jg: DMatrix<f64>,
    jh: DMatrix<f64>,
}

struct Ctx<'a> {
    p: &'a NlpProblem,
    free: Vec<usize>,
    pos: Vec<Option<usize>>,
    rows: Rows,
    neq: usize,
    nh: usize,
    buf: std::cell::RefCell<Vec<(usize, usize, f64)>>,
}

impl Ctx<'_> {
    fn eval(&self, x: &[f64]) -> Eval {
        let fns = &*self.p.functions;
        let nf = self.free.len();
        let f = fns.objective(x);
        let mut full = vec![0.0; x.len()];
        fns.gradient(x, &mut full);
        let grad = self.free.iter().map(|&i| full[i]).collect();
        let mut g = vec![0.0; self.neq];
        fns.eq(x, &mut g);
        let mut h = vec![0.0; self.nh];
        fns.ineq(x, &mut h);
        for &(k, sign, bound) in &self.rows.bounds {
            let xi = x[self.free[k]];
            h.push(if sign < 0.0 { bound - xi } else { xi - bound });
        }
        let mut buf = self.buf.borrow_mut();
        let mut jg = DMatrix::zeros(self.neq, nf);
        buf.clear();
        fns.eq_jacobian(x, &mut buf);
        for &(r, c, v) in buf.iter() {
            if let Some(k) = self.pos[c] {
                jg[(r, k)] += v;
            }
        }
        let mut jh = DMatrix::zeros(self.nh, nf);
        buf.clear();
        fns.ineq_jacobian(x, &mut buf);
        for &(r, c, v) in buf.iter() {
            if let Some(k) = self.pos[c] {
                jh[(r, k)] += v;
            }
        }
        Eval { f, grad, g, h, jg, jh }
    }

    fn step(&self, x: &[f64], alpha: f64, dx: &DVector<f64>) -> Vec<f64> {
        let mut out = x.to_vec();
        for (k, &i) in self.free.iter().enumerate() {
            out[i] += alpha * dx[k];
        }
        out
    }

    /// Objective and constraint values only.
    fn values(&self, x: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let fns = &*self.p.functions;
        let mut g = vec![0.0; self.neq];
        fns.eq(x, &mut g);
        let mut h = vec![0.0; self.nh];
        fns.ineq(x, &mut h);
        for &(k, sign, bound) in &self.rows.bounds {
            let xi = x[self.free[k]];
            h.push(if sign < 0.0 { bound - xi } else { xi - bound });
        }
        (fns.objective(x), g, h)
    }

    fn hessian(&self, x: &[f64], lam: &[f64], mu: &[f64]) -> DMatrix<f64> {
        let nf = self.free.len();
        let mut m = DMatrix::zeros(nf, nf);
        let mut buf = self.buf.borrow_mut();
        buf.clear();
        self.p.functions.hessian(x, 1.0, lam, &mu[..self.nh], &mut buf);
        for &(r, c, v) in buf.iter() {
            if let (Some(i), Some(j)) = (self.pos[r], self.pos[c]) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// `Jhᵀ w` over general and bound rows.
    fn jh_t(&self, e: &Eval, w: &[f64]) -> DVector<f64> {
        let mut out = e.jh.tr_mul(&DVector::from_column_slice(&w[..self.nh]));
        for (r, &(k, sign, _)) in self.rows.bounds.iter().enumerate() {
            out[k] += sign * w[self.nh + r];
        }
        out
    }

    /// `Jh d` over general and bound rows.
    fn jh_mul(&self, e: &Eval, d: &DVector<f64>) -> Vec<f64> {
        let mut out: Vec<f64> = (&e.jh * d).iter().copied().collect();
        out.extend(self.rows.bounds.iter().map(|&(k, sign, _)| sign * d[k]));
        out
    }

    fn lagrangian_gradient(&self, e: &Eval, lam: &[f64], mu: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(&e.grad) + e.jg.tr_mul(&DVector::from_column_slice(lam)) + self.jh_t(e, mu)
    }
}

fn conditions(e: &Eval, lx: &DVector<f64>, x_free: &[f64], lam: &[f64], z: &[f64], mu: &[f64]) -> (f64, f64, f64) {
    let feas = inf_norm(&e.g).max(e.h.iter().fold(0.0f64, |m, &v| m.max(v)));
    let gradc = lx.amax() / (1.0 + inf_norm(lam).max(inf_norm(mu)));
    let zmu: f64 = z.iter().zip(mu).map(|(a, b)| a * b).sum();
    let compc = zmu / (1.0 + inf_norm(x_free));
    (feas, gradc, compc)
}

/// Diagonal shift making `m` positive definite on the null space of `jg`.
fn inertia_shift(m: &DMatrix<f64>, jg: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let k = jg.nrows();
    if n == 0 || k >= n {
        return 0.0;
    }
    let reduced = if k == 0 {
        m.clone()
    } else {
        let mut a = DMatrix::zeros(n, k + n);
        a.view_mut((0, 0), (n, k)).copy_from(&jg.transpose());
        a.view_mut((0, k), (n, n)).fill_with_identity();
        let q = a.qr().q();
        let z = q.columns(k, n - k);
        z.transpose() * m * z
    };
    let lmin = reduced.symmetric_eigenvalues().min();
    if lmin > 1e-10 {
        0.0
    } else {
        1.5 * (-lmin).max(0.0) + 1e-8
    }
}

fn solve_kkt(m: &DMatrix<f64>, jg: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let nf = m.nrows();
    let neq = jg.nrows();
    let dim = nf + neq;
    let scale = 1.0 + m.amax();
    for reg in [0.0, 1e-10, 1e-8, 1e-6] {
        let mut k = DMatrix::zeros(dim, dim);
        k.view_mut((0, 0), (nf, nf)).copy_from(m);
        k.view_mut((0, nf), (nf, neq)).copy_from(&jg.transpose());
        k.view_mut((nf, 0), (neq, nf)).copy_from(jg);
        if reg > 0.0 {
            for i in 0..nf {
                k[(i, i)] += reg * scale;
            }
            for i in nf..dim {
                k[(i, i)] -= reg;
            }
        }
        if let Some(sol) = k.lu().solve(rhs) {
            if sol.iter().all(|v| v.is_finite()) {
                return Some(sol);
            }
        }
    }
    None
}

/// Solve a nonlinear program. Deterministic for identical inputs.
pub fn solve_nlp(problem: &NlpProblem, opts: &SolveOptions) -> NlpSolution {
    let start = Instant::now();
    let n = problem.n();
    let fns = &*problem.functions;
    let neq = fns.n_eq();
    let nh = fns.n_ineq();

    let mut x = problem.x0.clone().unwrap_or_else(|| problem.default_start());
    assert_eq!(x.len(), n, "start point length");
    let infeasible_bounds = problem.vars.iter().any(|v| v.lb > v.ub || v.lb.is_nan() || v.ub.is_nan());
    let mut free = Vec::new();
    let mut pos = vec![None; n];
    for (i, v) in problem.vars.iter().enumerate() {
        if v.lb == v.ub {
            x[i] = v.lb;
        } else {
            pos[i] = Some(free.len());
            free.push(i);
        }
    }
    let mut bounds = Vec::new();
    for (k, &i) in free.iter().enumerate() {
        let v = &problem.vars[i];
        if v.lb.is_finite() {
            bounds.push((k, -1.0, v.lb));
        }
        if v.ub.is_finite() {
            bounds.push((k, 1.0, v.ub));
        }
    }
    let ctx = Ctx { p: problem, free, pos, rows: Rows { bounds }, neq, nh, buf: Default::default() };
    let nf = ctx.free.len();
    let ni = nh + ctx.rows.bounds.len();

    let mut e = ctx.eval(&x);
    let mut gamma = INITIAL_BARRIER;
    let mut z: Vec<f64> = e.h.iter().map(|&h| (-h).max(1e-2)).collect();
    let mut mu: Vec<f64> = z.iter().map(|z| gamma / z).collect();
    let mut lam = vec![0.0; neq];
    let mut history = Vec::new();

    let x_free = |x: &[f64]| ctx.free.iter().map(|&i| x[i]).collect::<Vec<f64>>();
    let mut lx = ctx.lagrangian_gradient(&e, &lam, &mu);
    let (mut feas, mut gradc, mut compc) = conditions(&e, &lx, &x_free(&x), &lam, &z, &mu);
    let mut status = if infeasible_bounds { NlpStatus::Infeasible } else { NlpStatus::IterationLimit };
    let mut iterations = 0;
    let mut nu = 1.0f64;
    let converged = |f: f64, g: f64, c: f64| f <= opts.feas_tol && g <= opts.opt_tol && c <= opts.opt_tol;
    let reached = |obj: f64, f: f64| opts.target.is_some_and(|t| f <= 0.1 * t && obj.max(0.0) + f <= t);

    if !infeasible_bounds && converged(feas, gradc, compc) {
        status = NlpStatus::Optimal;
    }
    while status == NlpStatus::IterationLimit && iterations < opts.max_iter {
        iterations += 1;
        let mut m = ctx.hessian(&x, &lam, &mu);
        let mut w = vec![0.0; ni];
        for r in 0..ni {
            w[r] = (mu[r] * e.h[r] + gamma) / z[r];
        }
        for r in 0..nh {
            let d = mu[r] / z[r];
            let row = e.jh.row(r);
            for a in 0..nf {
                let ra = row[a];
                if ra == 0.0 {
                    continue;
                }
                for b in 0..nf {
                    m[(a, b)] += d * ra * row[b];
                }
            }
        }
        for (r, &(k, _, _)) in ctx.rows.bounds.iter().enumerate() {
            m[(k, k)] += mu[nh + r] / z[nh + r];
        }
        let delta = inertia_shift(&m, &e.jg);
        for i in 0..nf {
            m[(i, i)] += delta;
        }
        let nvec = &lx + ctx.jh_t(&e, &w);
        let mut rhs = DVector::zeros(nf + neq);
        rhs.rows_mut(0, nf).copy_from(&(-&nvec));
        for r in 0..neq {
            rhs[nf + r] = -e.g[r];
        }
        let Some(sol) = solve_kkt(&m, &e.jg, &rhs) else {
            status = NlpStatus::NumericalFailure;
            break;
        };
        let dx = sol.rows(0, nf).into_owned();
        let dlam: Vec<f64> = sol.rows(nf, neq).iter().copied().collect();
        let jdx = ctx.jh_mul(&e, &dx);
        let dz: Vec<f64> = (0..ni).map(|r| -e.h[r] - z[r] - jdx[r]).collect();
        let dmu: Vec<f64> = (0..ni).map(|r| -mu[r] + (gamma - mu[r] * dz[r]) / z[r]).collect();

        let step = |v: &[f64], dv: &[f64]| {
            v.iter().zip(dv).filter(|(_, d)| **d < 0.0).map(|(v, d)| opts.xi * v / -d).fold(1.0f64, f64::min)
        };
        let alpha_max = step(&z, &dz);
        let alpha_d = step(&mu, &dmu);

        let violation = |g: &[f64], h: &[f64], z: &[f64]| -> f64 {
            g.iter().map(|v| v.abs()).sum::<f64>() + h.iter().zip(z).map(|(h, z)| (h + z).abs()).sum::<f64>()
        };
        let barrier = |f: f64, z: &[f64]| f - gamma * z.iter().map(|v| v.ln()).sum::<f64>();
        let c0 = violation(&e.g, &e.h, &z);
        let slope = DVector::from_column_slice(&e.grad).dot(&dx) - gamma * (0..ni).map(|r| dz[r] / z[r]).sum::<f64>();
        if c0 > 1e-2 * opts.feas_tol {
            let curvature = dx.dot(&(&m * &dx)).max(0.0);
            nu = nu.max((slope + 0.5 * curvature) / (0.9 * c0) + 1e-8);
        }
        let merit0 = barrier(e.f, &z) + nu * c0;
        let dmerit = slope - nu * c0;
        let tiny = alpha_max * dx.amax() <= 1e-7 * (1.0 + inf_norm(&x_free(&x)));
        let mut alpha_p = alpha_max;
        let mut accepted = tiny;
        while !accepted && alpha_p >= MIN_STEP {
            let trial_x = ctx.step(&x, alpha_p, &dx);
            let trial_z: Vec<f64> = (0..ni).map(|r| z[r] + alpha_p * dz[r]).collect();
            let (f, g, h) = ctx.values(&trial_x);
            let merit = barrier(f, &trial_z) + nu * violation(&g, &h, &trial_z);
            accepted = merit.is_finite() && merit <= merit0 + 1e-4 * alpha_p * dmerit.min(0.0);
            if !accepted {
                alpha_p *= 0.5;
            }
        }
        if !accepted {
            alpha_p = alpha_max;
        }
        x = ctx.step(&x, alpha_p, &dx);
        for r in 0..ni {
            z[r] += alpha_p * dz[r];
        }
        for r in 0..ni {
            mu[r] += alpha_d * dmu[r];
        }
        for r in 0..neq {
            lam[r] += alpha_d * dlam[r];
        }
        for r in 0..ni {
            mu[r] = mu[r].clamp(gamma / (MU_SAFEGUARD * z[r]), MU_SAFEGUARD * gamma / z[r]);
        }

        e = ctx.eval(&x);
        lx = ctx.lagrangian_gradient(&e, &lam, &mu);
        (feas, gradc, compc) = conditions(&e, &lx, &x_free(&x), &lam, &z, &mu);
        let slack_gap = e.h.iter().zip(&z).fold(0.0f64, |m, (h, z)| m.max((h + z).abs()));
        let barrier_error = |gamma: f64| {
            let centering = z.iter().zip(&mu).fold(0.0f64, |m, (z, u)| m.max((z * u - gamma).abs()));
            inf_norm(&e.g).max(slack_gap).max(gradc).max(centering)
        };
        let floor = 0.1 * opts.feas_tol.min(opts.opt_tol) / ni.max(1) as f64;
        while gamma > floor && barrier_error(gamma) <= BARRIER_TOL_FACTOR * gamma {
            gamma = floor.max((opts.barrier_decrease * gamma).min(gamma.powf(1.5)));
        }
        history.push(IterRecord {
            objective: e.f,
            feasibility: feas,
            stationarity: gradc,
            complementarity: compc,
            alpha_primal: alpha_p,
            alpha_dual: alpha_d,
        });
        debug!("ipm {iterations}: f={:.6e} feas={feas:.2e} grad={gradc:.2e} comp={compc:.2e} ap={alpha_p:.2e} ad={alpha_d:.2e}", e.f);

        let finite = x.iter().chain(&lam).chain(&mu).all(|v| v.is_finite()) && e.f.is_finite() && feas.is_finite();
        if !finite || !gamma.is_finite() {
            status = NlpStatus::NumericalFailure;
        } else if converged(feas, gradc, compc) {
            status = NlpStatus::Optimal;
        } else if reached(e.f, feas) {
            status = NlpStatus::TargetReached;
        }
    }

    let mut mu_lower = vec![0.0; n];
    let mut mu_upper = vec![0.0; n];
    for (r, &(k, sign, _)) in ctx.rows.bounds.iter().enumerate() {
        let i = ctx.free[k];
        if sign < 0.0 {
            mu_lower[i] = mu[nh + r];
        } else {
            mu_upper[i] = mu[nh + r];
        }
    }
    NlpSolution {
        status,
        objective: e.f,
        feasibility: feas,
        stationarity: gradc,
        complementarity: compc,
        lambda: lam,
        mu: mu[..nh].to_vec(),
        mu_lower,
        mu_upper,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        history,
        x,
    }
}
