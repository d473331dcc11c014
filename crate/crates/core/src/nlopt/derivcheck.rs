//! Dense central-difference check of [`NlpFunctions`] derivatives.

use nalgebra::{DMatrix, DVector};

use super::NlpFunctions;

/// Largest mixed absolute/relative error `|fd − exact| / max(1, |exact|)`
/// found in each derivative.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DerivReport {
    pub gradient: f64,
    pub eq_jacobian: f64,
    pub ineq_jacobian: f64,
    pub hessian: f64,
}

impl DerivReport {
    pub fn max_error(&self) -> f64 {
        self.gradient.max(self.eq_jacobian).max(self.ineq_jacobian).max(self.hessian)
    }
}

fn dense(n_rows: usize, n: usize, trip: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n_rows, n);
    for &(r, c, v) in trip {
        m[(r, c)] += v;
    }
    m
}

fn jac(f: &dyn NlpFunctions, x: &[f64], eq: bool) -> DMatrix<f64> {
    let mut t = Vec::new();
    if eq {
        f.eq_jacobian(x, &mut t);
        dense(f.n_eq(), x.len(), &t)
    } else {
        f.ineq_jacobian(x, &mut t);
        dense(f.n_ineq(), x.len(), &t)
    }
}

fn err(fd: f64, exact: f64) -> f64 {
    (fd - exact).abs() / exact.abs().max(1.0)
}

/// Compare analytic derivatives with central differences of step `h` at `x`.
/// The Hessian is checked with fixed pseudo-random multipliers.
pub fn check_derivatives(f: &dyn NlpFunctions, x: &[f64], h: f64) -> DerivReport {
    let n = x.len();
    let (neq, nin) = (f.n_eq(), f.n_ineq());
    let lam: Vec<f64> = (0..neq).map(|i| ((i * 37 + 11) % 17) as f64 / 17.0 - 0.4).collect();
    let mu: Vec<f64> = (0..nin).map(|i| ((i * 23 + 5) % 13) as f64 / 13.0 + 0.1).collect();
    let sigma = 0.7;
    let lagrangian_grad = |x: &[f64]| -> DVector<f64> {
        let mut g = vec![0.0; n];
        f.gradient(x, &mut g);
        let g = DVector::from_vec(g) * sigma;
        g + jac(f, x, true).tr_mul(&DVector::from_column_slice(&lam)) + jac(f, x, false).tr_mul(&DVector::from_column_slice(&mu))
    };

    let mut grad = vec![0.0; n];
    f.gradient(x, &mut grad);
    let jg = jac(f, x, true);
    let jh = jac(f, x, false);
    let mut t = Vec::new();
    f.hessian(x, sigma, &lam, &mu, &mut t);
    let hess = dense(n, n, &t);

    let mut rep = DerivReport::default();
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    for k in 0..n {
        xp[k] = x[k] + h;
        xm[k] = x[k] - h;
        let fd = (f.objective(&xp) - f.objective(&xm)) / (2.0 * h);
        rep.gradient = rep.gradient.max(err(fd, grad[k]));
        let (mut gp, mut gm) = (vec![0.0; neq], vec![0.0; neq]);
        f.eq(&xp, &mut gp);
        f.eq(&xm, &mut gm);
        for r in 0..neq {
            rep.eq_jacobian = rep.eq_jacobian.max(err((gp[r] - gm[r]) / (2.0 * h), jg[(r, k)]));
        }
        let (mut hp, mut hm) = (vec![0.0; nin], vec![0.0; nin]);
        f.ineq(&xp, &mut hp);
        f.ineq(&xm, &mut hm);
        for r in 0..nin {
            rep.ineq_jacobian = rep.ineq_jacobian.max(err((hp[r] - hm[r]) / (2.0 * h), jh[(r, k)]));
        }
        let lp = lagrangian_grad(&xp);
        let lm = lagrangian_grad(&xm);
        for r in 0..n {
            rep.hessian = rep.hessian.max(err((lp[r] - lm[r]) / (2.0 * h), hess[(r, k)]));
        }
        xp[k] = x[k];
        xm[k] = x[k];
    }
    rep
}
