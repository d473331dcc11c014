//! Newton-Raphson AC power flow in polar coordinates.
//!
//! Used as the physics reference: OPF solutions are re-checked by fixing their
//! dispatch and re-solving the network equations here.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::netmodel::{build_admittance, AdmittanceMatrix, BusKind, Network};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PfError {
    #[error("singular power-flow Jacobian at iteration {iteration}; worst-conditioned bus {bus}")]
    SingularJacobian { iteration: usize, bus: usize },
    #[error("setpoint vector length mismatch: {0}")]
    Setpoints(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions { tol: 1e-8, max_iter: 30 }
    }
}

/// Injections and voltage targets that define a power-flow case.
///
/// Generator and DG reactive outputs only matter at PQ buses; at PV and
/// reference buses the reactive balance is free.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PfSetpoints {
    pub gen_p: Vec<f64>,
    pub gen_q: Vec<f64>,
    pub dg_p: Vec<f64>,
    pub dg_q: Vec<f64>,
    /// Voltage magnitude targets by bus id for reference and PV buses (default 1.0).
    pub v_set: HashMap<usize, f64>,
    /// Additional fixed injections `(bus id, p, q)`.
    pub extra: Vec<(usize, f64, f64)>,
}

impl PfSetpoints {
    /// All units at zero output, flat voltage targets.
    pub fn zero(network: &Network) -> Self {
        PfSetpoints {
            gen_p: vec![0.0; network.generators().len()],
            gen_q: vec![0.0; network.generators().len()],
            dg_p: vec![0.0; network.dgs().len()],
            dg_q: vec![0.0; network.dgs().len()],
            v_set: HashMap::new(),
            extra: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfState {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Net injections computed from the solved voltages.
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Infinity norm of the specified-bus mismatch at return.
    pub mismatch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Reference,
    Pv,
    Pq,
}

fn roles(network: &Network) -> Vec<Role> {
    let r = network.reference_bus();
    network
        .buses()
        .iter()
        .enumerate()
        .map(|(i, b)| match b.kind {
            _ if i == r => Role::Reference,
            BusKind::Pv => Role::Pv,
            _ => Role::Pq,
        })
        .collect()
}

fn specified_injections(network: &Network, sp: &PfSetpoints) -> Result<(Vec<f64>, Vec<f64>), PfError> {
    let ng = network.generators().len();
    let nd = network.dgs().len();
    if sp.gen_p.len() != ng || sp.gen_q.len() != ng {
        return Err(PfError::Setpoints(format!("expected {ng} generator setpoints")));
    }
    if sp.dg_p.len() != nd || sp.dg_q.len() != nd {
        return Err(PfError::Setpoints(format!("expected {nd} dg setpoints")));
    }
    let (pd, qd) = network.bus_demand();
    let mut p: Vec<f64> = pd.iter().map(|x| -x).collect();
    let mut q: Vec<f64> = qd.iter().map(|x| -x).collect();
    let idx = |id: usize| network.bus_index(id).ok_or_else(|| PfError::Setpoints(format!("unknown bus {id}")));
    for (k, g) in network.generators().iter().enumerate() {
        let i = idx(g.bus)?;
        p[i] += sp.gen_p[k];
        q[i] += sp.gen_q[k];
    }
    for (k, dg) in network.dgs().iter().enumerate() {
        let i = idx(dg.generator.bus)?;
        p[i] += sp.dg_p[k];
        q[i] += sp.dg_q[k];
    }
    for &(bus, pe, qe) in &sp.extra {
        let i = idx(bus)?;
        p[i] += pe;
        q[i] += qe;
    }
    Ok((p, q))
}

/// Jacobian blocks `dS/dθ` and `dS/d|V|` as dense complex matrices.
fn ds_dv(y: &AdmittanceMatrix, v: &[Complex64]) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let n = v.len();
    let current = y.mul_vec(v);
    let j = Complex64::new(0.0, 1.0);
    let mut d_theta = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let mut d_vm = d_theta.clone();
    for i in 0..n {
        for (k, yik) in y.row(i) {
            let unit_k = v[k] / v[k].norm();
            d_theta[(i, k)] = j * v[i] * (-(yik * v[k])).conj();
            d_vm[(i, k)] = v[i] * (yik * unit_k).conj();
        }
        d_theta[(i, i)] += j * v[i] * current[i].conj();
        d_vm[(i, i)] += current[i].conj() * v[i] / v[i].norm();
    }
    (d_theta, d_vm)
}

/// Solve the power flow from a flat start (v = 1, θ = 0; reference and PV
/// magnitudes from `v_set`).
pub fn solve_powerflow(network: &Network, setpoints: &PfSetpoints, opts: PfOptions) -> Result<PfState, PfError> {
    let y = build_admittance(network);
    let role = roles(network);
    let n = network.n_buses();
    let (p_spec, q_spec) = specified_injections(network, setpoints)?;
    let mut vm = vec![1.0; n];
    let mut va = vec![0.0; n];
    for (i, b) in network.buses().iter().enumerate() {
        if role[i] != Role::Pq {
            vm[i] = setpoints.v_set.get(&b.id).copied().unwrap_or(1.0);
        }
    }
    let pvpq: Vec<usize> = (0..n).filter(|&i| role[i] != Role::Reference).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| role[i] == Role::Pq).collect();
    let dim = pvpq.len() + pq.len();

    let mismatch = |vm: &[f64], va: &[f64]| -> (Vec<f64>, f64) {
        let (p, q) = y.injections(vm, va);
        let f: Vec<f64> = pvpq
            .iter()
            .map(|&i| p[i] - p_spec[i])
            .chain(pq.iter().map(|&i| q[i] - q_spec[i]))
            .collect();
        let norm = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        (f, norm)
    };

    let (mut f, mut norm) = mismatch(&vm, &va);
    let mut iterations = 0;
    while norm > opts.tol && iterations < opts.max_iter {
        iterations += 1;
        let v: Vec<Complex64> = vm.iter().zip(&va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
        let (d_theta, d_vm) = ds_dv(&y, &v);
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        for (r, &i) in pvpq.iter().enumerate() {
            for (c, &k) in pvpq.iter().enumerate() {
                jac[(r, c)] = d_theta[(i, k)].re;
            }
            for (c, &k) in pq.iter().enumerate() {
                jac[(r, pvpq.len() + c)] = d_vm[(i, k)].re;
            }
        }
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in pvpq.iter().enumerate() {
                jac[(pvpq.len() + r, c)] = d_theta[(i, k)].im;
            }
            for (c, &k) in pq.iter().enumerate() {
                jac[(pvpq.len() + r, pvpq.len() + c)] = d_vm[(i, k)].im;
            }
        }
        let rhs = DVector::from_iterator(dim, f.iter().map(|x| -x));
        let dx = match jac.clone().lu().solve(&rhs).filter(|d| d.iter().all(|x| x.is_finite())) {
            Some(dx) => dx,
            None => {
                let worst = (0..dim)
                    .min_by(|&a, &b| jac.row(a).amax().total_cmp(&jac.row(b).amax()))
                    .unwrap_or(0);
                let bus_pos = if worst < pvpq.len() { pvpq[worst] } else { pq[worst - pvpq.len()] };
                return Err(PfError::SingularJacobian { iteration: iterations, bus: network.buses()[bus_pos].id });
            }
        };
        for (r, &i) in pvpq.iter().enumerate() {
            va[i] += dx[r];
        }
        for (r, &i) in pq.iter().enumerate() {
            vm[i] += dx[pvpq.len() + r];
        }
        (f, norm) = mismatch(&vm, &va);
    }
    let (p_inj, q_inj) = y.injections(&vm, &va);
    Ok(PfState { v: vm, theta: va, p_inj, q_inj, iterations, converged: norm <= opts.tol, mismatch: norm })
}

/// Terminal flows of one branch, per-unit.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BranchFlow {
    pub p_from: f64,
    pub q_from: f64,
    pub p_to: f64,
    pub q_to: f64,
    pub s_from: f64,
    pub s_to: f64,
}

impl BranchFlow {
    /// Active power lost in the branch (series and shunt).
    pub fn loss(&self) -> f64 {
        self.p_from + self.p_to
    }
}

/// Flows leaving each terminal of every branch; open branches carry nothing.
pub fn branch_flows(network: &Network, state: &PfState) -> Vec<BranchFlow> {
    network
        .branches()
        .iter()
        .map(|br| {
            if !br.is_closed() {
                return BranchFlow::default();
            }
            let f = network.bus_index(br.from_bus).unwrap();
            let t = network.bus_index(br.to_bus).unwrap();
            let vf = Complex64::from_polar(state.v[f], state.theta[f]);
            let vt = Complex64::from_polar(state.v[t], state.theta[t]);
            let [yff, yft, ytf, ytt] = br.pi_stamp();
            let sf = vf * (yff * vf + yft * vt).conj();
            let st = vt * (ytf * vf + ytt * vt).conj();
            BranchFlow { p_from: sf.re, q_from: sf.im, p_to: st.re, q_to: st.im, s_from: sf.norm(), s_to: st.norm() }
        })
        .collect()
}
