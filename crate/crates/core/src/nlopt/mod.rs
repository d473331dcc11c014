//! Nonlinear programs over network variables and a primal-dual interior-point solver.

use serde::{Deserialize, Serialize};

pub mod derivcheck;
mod fixed;
mod ipm;
mod kernel;
mod opf;

pub use fixed::{feasibility_verdict, solve_fixed_pcc, FixedPccOptions, FixedPccResult, Verdict};
pub use ipm::solve_nlp;
pub use kernel::BranchEnd;
pub use opf::{assemble_opf, verify_with_powerflow, Axis, OpfBuilder, OpfError, OpfLayout, OpfObjective, OpfProblem, PortSpec, PqvFunction};

/// Operating point at a coupling bus: active power (MW), reactive power
/// (MVAr) and voltage magnitude (p.u.). Positive powers flow from the
/// distribution system into the transmission system.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CouplingPoint {
    pub p: f64,
    pub q: f64,
    pub v: f64,
}

impl CouplingPoint {
    pub fn new(p: f64, q: f64, v: f64) -> Self {
        CouplingPoint { p, q, v }
    }

    pub fn from_array(x: [f64; 3]) -> Self {
        CouplingPoint { p: x[0], q: x[1], v: x[2] }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.p, self.q, self.v]
    }

    /// Per-unit `(p, q, v)` on a system base of `base_mva`.
    pub fn to_pu(self, base_mva: f64) -> [f64; 3] {
        [self.p / base_mva, self.q / base_mva, self.v]
    }

    pub fn from_pu(x: [f64; 3], base_mva: f64) -> Self {
        CouplingPoint { p: x[0] * base_mva, q: x[1] * base_mva, v: x[2] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarInfo {
    pub name: String,
    pub lb: f64,
    pub ub: f64,
}

impl VarInfo {
    pub fn new(name: impl Into<String>, lb: f64, ub: f64) -> Self {
        VarInfo { name: name.into(), lb, ub }
    }
}

/// Smooth functions of a nonlinear program
/// `min f(x) s.t. g(x) = 0, h(x) <= 0, lb <= x <= ub`.
///
/// Jacobians are returned as `(row, col, value)` triplets; repeated entries are
/// summed. The Hessian of the Lagrangian
/// `σ ∇²f + Σ λ_i ∇²g_i + Σ μ_k ∇²h_k` is returned as triplets of the full
/// symmetric matrix.
pub trait NlpFunctions: Send + Sync {
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;
    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
    fn eq(&self, x: &[f64], out: &mut [f64]);
    fn ineq(&self, x: &[f64], out: &mut [f64]);
    fn eq_jacobian(&self, x: &[f64], out: &mut Vec<(usize, usize, f64)>);
    fn ineq_jacobian(&self, x: &[f64], out: &mut Vec<(usize, usize, f64)>);
    fn hessian(&self, x: &[f64], obj_factor: f64, lam: &[f64], mu: &[f64], out: &mut Vec<(usize, usize, f64)>);
}

pub struct NlpProblem {
    pub vars: Vec<VarInfo>,
    pub functions: Box<dyn NlpFunctions>,
    pub x0: Option<Vec<f64>>,
}

impl NlpProblem {
    pub fn n(&self) -> usize {
        self.vars.len()
    }

    /// Default start: midpoint of finite boxes, the finite bound of half-open
    /// boxes, zero otherwise.
    pub fn default_start(&self) -> Vec<f64> {
        self.vars
            .iter()
            .map(|v| match (v.lb.is_finite(), v.ub.is_finite()) {
                (true, true) => 0.5 * (v.lb + v.ub),
                (true, false) => v.lb,
                (false, true) => v.ub,
                (false, false) => 0.0,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    NumericalFailure,
    /// Stopped at a primal-feasible iterate whose objective met [`SolveOptions::target`].
    TargetReached,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub objective: f64,
    pub feasibility: f64,
    pub stationarity: f64,
    pub complementarity: f64,
    pub alpha_primal: f64,
    pub alpha_dual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpSolution {
    pub status: NlpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// `max(‖g‖∞, max(h, 0), bound violation)`.
    pub feasibility: f64,
    /// `‖∇L‖∞ / (1 + max multiplier)`.
    pub stationarity: f64,
    pub complementarity: f64,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    /// Multipliers of the lower and upper variable bounds (zero when absent or fixed).
    pub mu_lower: Vec<f64>,
    pub mu_upper: Vec<f64>,
    pub iterations: usize,
    pub wall_time: f64,
    pub history: Vec<IterRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_iter: usize,
    /// Fraction-to-boundary factor.
    pub xi: f64,
    /// Linear reduction factor of the barrier parameter.
    pub barrier_decrease: f64,
    /// Stop once an iterate has `max(f, 0) + feasibility <= target` and feasibility at most a tenth of it.
    pub target: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { feas_tol: 1e-8, opt_tol: 1e-8, max_iter: 150, xi: 0.995, barrier_decrease: 0.2, target: None }
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Small closure-based problem for solver tests.
    pub struct Quad {
        pub n: usize,
        pub f: fn(&[f64]) -> f64,
        pub df: fn(&[f64]) -> Vec<f64>,
        pub d2f: fn(&[f64]) -> Vec<Vec<f64>>,
        /// Linear equalities `A x = b`.
        pub a_eq: Vec<(Vec<f64>, f64)>,
        /// Linear inequalities `A x <= b`.
        pub a_in: Vec<(Vec<f64>, f64)>,
    }

    impl NlpFunctions for Quad {
        fn n_eq(&self) -> usize {
            self.a_eq.len()
        }
        fn n_ineq(&self) -> usize {
            self.a_in.len()
        }
        fn objective(&self, x: &[f64]) -> f64 {
            (self.f)(x)
        }
        fn gradient(&self, x: &[f64], grad: &mut [f64]) {
            grad.copy_from_slice(&(self.df)(x));
        }
        fn eq(&self, x: &[f64], out: &mut [f64]) {
            for (o, (a, b)) in out.iter_mut().zip(&self.a_eq) {
                *o = a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() - b;
            }
        }
        fn ineq(&self, x: &[f64], out: &mut [f64]) {
            for (o, (a, b)) in out.iter_mut().zip(&self.a_in) {
                *o = a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() - b;
            }
        }
        fn eq_jacobian(&self, _: &[f64], out: &mut Vec<(usize, usize, f64)>) {
            for (r, (a, _)) in self.a_eq.iter().enumerate() {
                out.extend(a.iter().enumerate().map(|(c, &v)| (r, c, v)));
            }
        }
        fn ineq_jacobian(&self, _: &[f64], out: &mut Vec<(usize, usize, f64)>) {
            for (r, (a, _)) in self.a_in.iter().enumerate() {
                out.extend(a.iter().enumerate().map(|(c, &v)| (r, c, v)));
            }
        }
        fn hessian(&self, x: &[f64], sigma: f64, _: &[f64], _: &[f64], out: &mut Vec<(usize, usize, f64)>) {
            let h = (self.d2f)(x);
            for i in 0..self.n {
                for j in 0..self.n {
                    out.push((i, j, sigma * h[i][j]));
                }
            }
        }
    }
}
