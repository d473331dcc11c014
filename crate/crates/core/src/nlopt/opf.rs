//! AC optimal power flow in polar coordinates.
//!
//! Variable layout: `θ (nb) | v (nb) | p_g, q_g (ng each) | p_dg, q_dg (nd each) |
//! (p, q) per port | t | elastic slacks`. A port is a coupling point whose
//! voltage is the voltage of its bus; its `(p, q)` are in the DS→TS
//! orientation and enter the bus balance with the port's sign.

use std::sync::Arc;

use thiserror::Error;

use super::kernel::BranchEnd;
use super::{CouplingPoint, NlpFunctions, NlpProblem, NlpSolution, SolveOptions, VarInfo};
use crate::netmodel::Network;
use crate::pflow::{solve_powerflow, PfError, PfOptions, PfSetpoints};

/// Smooth scalar function of a coupling point in MW, MVAr and p.u.
pub trait PqvFunction: Send + Sync {
    fn value(&self, x: [f64; 3]) -> f64;
    fn gradient(&self, x: [f64; 3]) -> [f64; 3];
    fn hessian(&self, x: [f64; 3]) -> [[f64; 3]; 3];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    P,
    Q,
    V,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::P, Axis::Q, Axis::V];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpfObjective {
    /// Sum of generator and DG costs plus any port cost functions.
    TotalCost,
    /// Minimize (or maximize) one coordinate of the first port.
    AxisExtreme { axis: Axis, maximize: bool },
    /// Squared distance of the first port's point to `target`, each axis divided by `scale`.
    L2Projection { target: CouplingPoint, scale: [f64; 3] },
    /// Maximize `t >= 0` with the first port's point equal to `center + t·direction`.
    RayMax { center: CouplingPoint, direction: [f64; 3] },
    /// Total cost with the first port fixed at `point`.
    FixedPccCost { point: CouplingPoint },
    /// Minimum total constraint violation with the first port fixed at `point`.
    Elastic { point: CouplingPoint },
}

impl OpfObjective {
    fn needs_port(&self) -> bool {
        !matches!(self, OpfObjective::TotalCost)
    }

    fn fixed_point(&self) -> Option<CouplingPoint> {
        match self {
            OpfObjective::FixedPccCost { point } | OpfObjective::Elastic { point } => Some(*point),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpfError {
    #[error("objective variant requires a coupling port")]
    MissingPort,
    #[error("port references unknown bus {0}")]
    UnknownBus(usize),
    #[error("invalid objective parameter: {0}")]
    Parameter(String),
}

#[derive(Clone)]
pub struct PortSpec {
    /// Bus id hosting the port.
    pub bus: usize,
    /// `+1` when the port injects `(p, q)` into the modeled network, `-1` when it withdraws it.
    pub sign: f64,
    /// Bounds on `p` (MW) and `q` (MVAr).
    pub p_bounds: (f64, f64),
    pub q_bounds: (f64, f64),
    /// Extra bounds on the port voltage, intersected with the bus band.
    pub v_bounds: Option<(f64, f64)>,
    /// Smooth constraint `f(p, q, v) <= 0`.
    pub constraint: Option<Arc<dyn PqvFunction>>,
    /// Cost term added to the total-cost objective.
    pub cost: Option<Arc<dyn PqvFunction>>,
}

impl PortSpec {
    pub fn free(bus: usize, sign: f64) -> Self {
        let inf = (f64::NEG_INFINITY, f64::INFINITY);
        PortSpec { bus, sign, p_bounds: inf, q_bounds: inf, v_bounds: None, constraint: None, cost: None }
    }
}

/// Positions of every variable group inside the NLP vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OpfLayout {
    pub nb: usize,
    pub ng: usize,
    pub nd: usize,
    pub base_mva: f64,
    pub bus_ids: Vec<usize>,
    /// Bus position of each port.
    pub port_bus: Vec<usize>,
    pub port_sign: Vec<f64>,
    pub port_offset: usize,
    pub t: Option<usize>,
    /// Shared slack `s` followed by `e_p+, e_p-, e_q+, e_q-` of the first port.
    pub elastic: Option<usize>,
    pub n: usize,
}

impl OpfLayout {
    pub fn th(&self, i: usize) -> usize {
        i
    }
    pub fn v(&self, i: usize) -> usize {
        self.nb + i
    }
    pub fn pg(&self, k: usize) -> usize {
        2 * self.nb + k
    }
    pub fn qg(&self, k: usize) -> usize {
        2 * self.nb + self.ng + k
    }
    pub fn pdg(&self, k: usize) -> usize {
        2 * self.nb + 2 * self.ng + k
    }
    pub fn qdg(&self, k: usize) -> usize {
        2 * self.nb + 2 * self.ng + self.nd + k
    }
    pub fn port_p(&self, j: usize) -> usize {
        self.port_offset + 2 * j
    }
    pub fn port_q(&self, j: usize) -> usize {
        self.port_offset + 2 * j + 1
    }
    /// Variable indices `(p, q, v)` of port `j`.
    pub fn port_vars(&self, j: usize) -> [usize; 3] {
        [self.port_p(j), self.port_q(j), self.v(self.port_bus[j])]
    }

    pub fn port_point(&self, x: &[f64], j: usize) -> CouplingPoint {
        let [p, q, v] = self.port_vars(j);
        CouplingPoint::from_pu([x[p], x[q], x[v]], self.base_mva)
    }

    pub fn voltages<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[self.nb..2 * self.nb]
    }

    pub fn angles<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[..self.nb]
    }

    pub fn gen_p<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[self.pg(0)..self.pg(0) + self.ng]
    }

    pub fn gen_q<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[self.qg(0)..self.qg(0) + self.ng]
    }

    pub fn dg_p<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[self.pdg(0)..self.pdg(0) + self.nd]
    }

    pub fn dg_q<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[self.qdg(0)..self.qdg(0) + self.nd]
    }

    /// Sum of all elastic slack variables.
    pub fn elastic_total(&self, x: &[f64]) -> Option<f64> {
        self.elastic.map(|o| x[o..o + 5].iter().sum())
    }
}

pub struct OpfProblem {
    pub nlp: NlpProblem,
    pub layout: OpfLayout,
}

impl OpfProblem {
    pub fn solve(&self, opts: &SolveOptions) -> NlpSolution {
        super::solve_nlp(&self.nlp, opts)
    }
}

#[derive(Debug, Clone, Copy)]
enum DgRow {
    Linear { k: usize, alpha: f64, beta: f64, delta: f64 },
    Circle { k: usize, s: f64 },
}

#[derive(Clone, Copy)]
enum Obj {
    Cost,
    Axis { var: usize, sign: f64 },
    L2 { target: [f64; 3], weight: [f64; 3] },
    Ray,
    Elastic,
}

struct PortTerm {
    vars: [usize; 3],
    scale: [f64; 3],
    f: Arc<dyn PqvFunction>,
}

impl PortTerm {
    fn point(&self, x: &[f64]) -> [f64; 3] {
        [0, 1, 2].map(|k| x[self.vars[k]] * self.scale[k])
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.f.value(self.point(x))
    }
    fn gradient(&self, x: &[f64]) -> [f64; 3] {
        let g = self.f.gradient(self.point(x));
        [0, 1, 2].map(|k| g[k] * self.scale[k])
    }
    fn hessian(&self, x: &[f64], w: f64, out: &mut Vec<(usize, usize, f64)>) {
        let h = self.f.hessian(self.point(x));
        for i in 0..3 {
            for j in 0..3 {
                out.push((self.vars[i], self.vars[j], w * h[i][j] * self.scale[i] * self.scale[j]));
            }
        }
    }
}

struct OpfModel {
    l: OpfLayout,
    ends: Vec<BranchEnd>,
    /// End index and squared rating of each flow-limit row.
    flow_rows: Vec<(usize, f64)>,
    gs: Vec<f64>,
    bs: Vec<f64>,
    pd: Vec<f64>,
    qd: Vec<f64>,
    gen_bus: Vec<usize>,
    dg_bus: Vec<usize>,
    gen_cost: Vec<(f64, f64, f64)>,
    dg_cost: Vec<(f64, f64, f64)>,
    dg_rows: Vec<DgRow>,
    port_sign: Vec<f64>,
    port_constraints: Vec<PortTerm>,
    port_costs: Vec<PortTerm>,
    /// Ray rows: center and direction in per-unit.
    ray: Option<([f64; 3], [f64; 3])>,
    /// Soft voltage rows in elastic mode: bus position and band.
    soft_v: Vec<(usize, f64, f64)>,
    obj: Obj,
}

impl OpfModel {
    fn n_general_ineq(&self) -> usize {
        self.flow_rows.len() + self.dg_rows.len() + self.port_constraints.len()
    }

    fn end_vars(&self, e: &BranchEnd) -> [usize; 4] {
        [self.l.th(e.a), self.l.th(e.b), self.l.v(e.a), self.l.v(e.b)]
    }

    fn end_state(&self, e: &BranchEnd, x: &[f64]) -> [f64; 4] {
        self.end_vars(e).map(|i| x[i])
    }

    fn slack(&self, x: &[f64]) -> f64 {
        self.l.elastic.map_or(0.0, |o| x[o])
    }
}

impl NlpFunctions for OpfModel {
    fn n_eq(&self) -> usize {
        2 * self.l.nb + if self.ray.is_some() { 3 } else { 0 }
    }

    fn n_ineq(&self) -> usize {
        self.n_general_ineq() + 2 * self.soft_v.len()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        match self.obj {
            Obj::Cost => {
                let l = &self.l;
                let mut f = 0.0;
                for (k, &(a, b, c)) in self.gen_cost.iter().enumerate() {
                    let p = x[l.pg(k)];
                    f += (a * p + b) * p + c;
                }
                for (k, &(a, b, c)) in self.dg_cost.iter().enumerate() {
                    let p = x[l.pdg(k)];
                    f += (a * p + b) * p + c;
                }
                f + self.port_costs.iter().map(|t| t.value(x)).sum::<f64>()
            }
            Obj::Axis { var, sign } => sign * x[var],
            Obj::L2 { target, weight } => {
                let vars = self.l.port_vars(0);
                (0..3).map(|k| weight[k] * (x[vars[k]] - target[k]).powi(2)).sum()
            }
            Obj::Ray => -x[self.l.t.unwrap()],
            Obj::Elastic => self.l.elastic_total(x).unwrap(),
        }
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
        let l = &self.l;
        match self.obj {
            Obj::Cost => {
                for (k, &(a, b, _)) in self.gen_cost.iter().enumerate() {
                    grad[l.pg(k)] = 2.0 * a * x[l.pg(k)] + b;
                }
                for (k, &(a, b, _)) in self.dg_cost.iter().enumerate() {
                    grad[l.pdg(k)] = 2.0 * a * x[l.pdg(k)] + b;
                }
                for t in &self.port_costs {
                    let g = t.gradient(x);
                    for k in 0..3 {
                        grad[t.vars[k]] += g[k];
                    }
                }
            }
            Obj::Axis { var, sign } => grad[var] = sign,
            Obj::L2 { target, weight } => {
                let vars = l.port_vars(0);
                for k in 0..3 {
                    grad[vars[k]] += 2.0 * weight[k] * (x[vars[k]] - target[k]);
                }
            }
            Obj::Ray => grad[l.t.unwrap()] = -1.0,
            Obj::Elastic => {
                let o = l.elastic.unwrap();
                grad[o..o + 5].fill(1.0);
            }
        }
    }

    fn eq(&self, x: &[f64], out: &mut [f64]) {
        let l = &self.l;
        let nb = l.nb;
        for i in 0..nb {
            let v2 = x[l.v(i)].powi(2);
            out[i] = self.gs[i] * v2 + self.pd[i];
            out[nb + i] = -self.bs[i] * v2 + self.qd[i];
        }
        for e in &self.ends {
            let [ta, tb, va, vb] = self.end_state(e, x);
            let (p, q) = e.value(ta, tb, va, vb);
            out[e.a] += p;
            out[nb + e.a] += q;
        }
        for (k, &b) in self.gen_bus.iter().enumerate() {
            out[b] -= x[l.pg(k)];
            out[nb + b] -= x[l.qg(k)];
        }
        for (k, &b) in self.dg_bus.iter().enumerate() {
            out[b] -= x[l.pdg(k)];
            out[nb + b] -= x[l.qdg(k)];
        }
        for (j, &b) in l.port_bus.iter().enumerate() {
            out[b] -= self.port_sign[j] * x[l.port_p(j)];
            out[nb + b] -= self.port_sign[j] * x[l.port_q(j)];
        }
        if let Some(o) = l.elastic {
            let b = l.port_bus[0];
            out[b] -= x[o + 1] - x[o + 2];
            out[nb + b] -= x[o + 3] - x[o + 4];
        }
        if let Some((c, d)) = self.ray {
            let t = x[l.t.unwrap()];
            for (k, &var) in l.port_vars(0).iter().enumerate() {
                out[2 * nb + k] = x[var] - c[k] - d[k] * t;
            }
        }
    }

    fn ineq(&self, x: &[f64], out: &mut [f64]) {
        let l = &self.l;
        let s = self.slack(x);
        let mut r = 0;
        for &(ei, rating2) in &self.flow_rows {
            let e = &self.ends[ei];
            let [ta, tb, va, vb] = self.end_state(e, x);
            let (p, q) = e.value(ta, tb, va, vb);
            out[r] = p * p + q * q - rating2 - s;
            r += 1;
        }
        for row in &self.dg_rows {
            out[r] = match *row {
                DgRow::Linear { k, alpha, beta, delta } => alpha * x[l.pdg(k)] + beta * x[l.qdg(k)] - delta,
                DgRow::Circle { k, s } => x[l.pdg(k)].powi(2) + x[l.qdg(k)].powi(2) - s * s,
            } - s;
            r += 1;
        }
        for t in &self.port_constraints {
            out[r] = t.value(x) - s;
            r += 1;
        }
        for &(i, lo, hi) in &self.soft_v {
            let v = x[l.v(i)];
            out[r] = v - hi - s;
            out[r + 1] = lo - v - s;
            r += 2;
        }
    }

    fn eq_jacobian(&self, x: &[f64], out: &mut Vec<(usize, usize, f64)>) {
        let l = &self.l;
        let nb = l.nb;
        for i in 0..nb {
            let v = x[l.v(i)];
            if self.gs[i] != 0.0 {
                out.push((i, l.v(i), 2.0 * self.gs[i] * v));
            }
            if self.bs[i] != 0.0 {
                out.push((nb + i, l.v(i), -2.0 * self.bs[i] * v));
            }
        }
        for e in &self.ends {
            let vars = self.end_vars(e);
            let [ta, tb, va, vb] = vars.map(|i| x[i]);
            let f = e.eval(ta, tb, va, vb);
            for k in 0..4 {
                out.push((e.a, vars[k], f.dp[k]));
                out.push((nb + e.a, vars[k], f.dq[k]));
            }
        }
        for (k, &b) in self.gen_bus.iter().enumerate() {
            out.push((b, l.pg(k), -1.0));
            out.push((nb + b, l.qg(k), -1.0));
        }
        for (k, &b) in self.dg_bus.iter().enumerate() {
            out.push((b, l.pdg(k), -1.0));
            out.push((nb + b, l.qdg(k), -1.0));
        }
        for (j, &b) in l.port_bus.iter().enumerate() {
            out.push((b, l.port_p(j), -self.port_sign[j]));
            out.push((nb + b, l.port_q(j), -self.port_sign[j]));
        }
        if let Some(o) = l.elastic {
            let b = l.port_bus[0];
            out.extend([(b, o + 1, -1.0), (b, o + 2, 1.0), (nb + b, o + 3, -1.0), (nb + b, o + 4, 1.0)]);
        }
        if let Some((_, d)) = self.ray {
            let t = l.t.unwrap();
            for (k, &var) in l.port_vars(0).iter().enumerate() {
                out.push((2 * nb + k, var, 1.0));
                out.push((2 * nb + k, t, -d[k]));
            }
        }
    }

    fn ineq_jacobian(&self, x: &[f64], out: &mut Vec<(usize, usize, f64)>) {
        let l = &self.l;
        let mut r = 0;
        let slack_col = |out: &mut Vec<(usize, usize, f64)>, r: usize| {
            if let Some(o) = l.elastic {
                out.push((r, o, -1.0));
            }
        };
        for &(ei, _) in &self.flow_rows {
            let e = &self.ends[ei];
            let vars = self.end_vars(e);
            let [ta, tb, va, vb] = vars.map(|i| x[i]);
            let f = e.eval(ta, tb, va, vb);
            for k in 0..4 {
                out.push((r, vars[k], 2.0 * (f.p * f.dp[k] + f.q * f.dq[k])));
            }
            slack_col(out, r);
            r += 1;
        }
        for row in &self.dg_rows {
            match *row {
                DgRow::Linear { k, alpha, beta, .. } => {
                    out.push((r, l.pdg(k), alpha));
                    out.push((r, l.qdg(k), beta));
                }
                DgRow::Circle { k, .. } => {
                    out.push((r, l.pdg(k), 2.0 * x[l.pdg(k)]));
                    out.push((r, l.qdg(k), 2.0 * x[l.qdg(k)]));
                }
            }
            slack_col(out, r);
            r += 1;
        }
        for t in &self.port_constraints {
            let g = t.gradient(x);
            for k in 0..3 {
                out.push((r, t.vars[k], g[k]));
            }
            slack_col(out, r);
            r += 1;
        }
        for &(i, _, _) in &self.soft_v {
            out.push((r, l.v(i), 1.0));
            out.push((r + 1, l.v(i), -1.0));
            slack_col(out, r);
            slack_col(out, r + 1);
            r += 2;
        }
    }

    fn hessian(&self, x: &[f64], sigma: f64, lam: &[f64], mu: &[f64], out: &mut Vec<(usize, usize, f64)>) {
        let l = &self.l;
        let nb = l.nb;
        match self.obj {
            Obj::Cost => {
                for (k, &(a, _, _)) in self.gen_cost.iter().enumerate() {
                    out.push((l.pg(k), l.pg(k), sigma * 2.0 * a));
                }
                for (k, &(a, _, _)) in self.dg_cost.iter().enumerate() {
                    out.push((l.pdg(k), l.pdg(k), sigma * 2.0 * a));
                }
                for t in &self.port_costs {
                    t.hessian(x, sigma, out);
                }
            }
            Obj::L2 { weight, .. } => {
                for (k, &var) in l.port_vars(0).iter().enumerate() {
                    out.push((var, var, sigma * 2.0 * weight[k]));
                }
            }
            Obj::Axis { .. } | Obj::Ray | Obj::Elastic => {}
        }
        for i in 0..nb {
            let d = 2.0 * (lam[i] * self.gs[i] - lam[nb + i] * self.bs[i]);
            if d != 0.0 {
                out.push((l.v(i), l.v(i), d));
            }
        }
        for e in &self.ends {
            let (lp, lq) = (lam[e.a], lam[nb + e.a]);
            let vars = self.end_vars(e);
            let [ta, tb, va, vb] = vars.map(|i| x[i]);
            let f = e.eval(ta, tb, va, vb);
            for i in 0..4 {
                for j in 0..4 {
                    out.push((vars[i], vars[j], lp * f.d2p[i][j] + lq * f.d2q[i][j]));
                }
            }
        }
        let mut r = 0;
        for &(ei, _) in &self.flow_rows {
            let m = mu[r];
            r += 1;
            if m == 0.0 {
                continue;
            }
            let e = &self.ends[ei];
            let vars = self.end_vars(e);
            let [ta, tb, va, vb] = vars.map(|i| x[i]);
            let f = e.eval(ta, tb, va, vb);
            for i in 0..4 {
                for j in 0..4 {
                    let h = f.dp[i] * f.dp[j] + f.p * f.d2p[i][j] + f.dq[i] * f.dq[j] + f.q * f.d2q[i][j];
                    out.push((vars[i], vars[j], 2.0 * m * h));
                }
            }
        }
        for row in &self.dg_rows {
            if let DgRow::Circle { k, .. } = *row {
                out.push((l.pdg(k), l.pdg(k), 2.0 * mu[r]));
                out.push((l.qdg(k), l.qdg(k), 2.0 * mu[r]));
            }
            r += 1;
        }
        for t in &self.port_constraints {
            t.hessian(x, mu[r], out);
            r += 1;
        }
    }
}

/// Builder for OPF problems with any number of coupling ports.
pub struct OpfBuilder<'a> {
    network: &'a Network,
    ports: Vec<PortSpec>,
    objective: OpfObjective,
    x0: Option<Vec<f64>>,
}

impl<'a> OpfBuilder<'a> {
    pub fn new(network: &'a Network, objective: OpfObjective) -> Self {
        OpfBuilder { network, ports: Vec::new(), objective, x0: None }
    }

    pub fn port(mut self, port: PortSpec) -> Self {
        self.ports.push(port);
        self
    }

    pub fn warm_start(mut self, x0: Option<Vec<f64>>) -> Self {
        self.x0 = x0;
        self
    }

    pub fn build(self) -> Result<OpfProblem, OpfError> {
        let net = self.network;
        let base = net.base_mva();
        if self.objective.needs_port() && self.ports.is_empty() {
            return Err(OpfError::MissingPort);
        }
        let elastic_mode = matches!(self.objective, OpfObjective::Elastic { .. });
        let fixed = self.objective.fixed_point();
        let nb = net.n_buses();
        let ng = net.generators().len();
        let nd = net.dgs().len();
        let idx = |id: usize| net.bus_index(id).ok_or(OpfError::UnknownBus(id));
        let port_bus = self.ports.iter().map(|p| idx(p.bus)).collect::<Result<Vec<_>, _>>()?;
        let port_offset = 2 * nb + 2 * ng + 2 * nd;
        let mut n = port_offset + 2 * self.ports.len();
        let t = matches!(self.objective, OpfObjective::RayMax { .. }).then(|| {
            n += 1;
            n - 1
        });
        let elastic = elastic_mode.then(|| {
            n += 5;
            n - 5
        });
        let layout = OpfLayout {
            nb,
            ng,
            nd,
            base_mva: base,
            bus_ids: net.buses().iter().map(|b| b.id).collect(),
            port_bus: port_bus.clone(),
            port_sign: self.ports.iter().map(|p| p.sign).collect(),
            port_offset,
            t,
            elastic,
            n,
        };

        let mut vars = Vec::with_capacity(n);
        let reference = net.reference_bus();
        for (i, b) in net.buses().iter().enumerate() {
            let (lo, hi) = if i == reference { (0.0, 0.0) } else { (b.theta_min, b.theta_max) };
            vars.push(VarInfo::new(format!("theta[{}]", b.id), lo, hi));
        }
        let mut soft_v = Vec::new();
        for (i, b) in net.buses().iter().enumerate() {
            let (mut lo, mut hi) = (b.v_min, b.v_max);
            if let Some(j) = port_bus.iter().position(|&pb| pb == i) {
                if let Some((a, c)) = self.ports[j].v_bounds {
                    lo = lo.max(a);
                    hi = hi.min(c);
                }
            }
            let fixed_here = fixed.is_some() && port_bus.first() == Some(&i);
            if fixed_here {
                let v = fixed.unwrap().v;
                (lo, hi) = (v, v);
            } else if elastic_mode {
                soft_v.push((i, lo, hi));
                (lo, hi) = (lo.min(0.5), hi.max(1.5));
            }
            vars.push(VarInfo::new(format!("v[{}]", b.id), lo, hi));
        }
        for (k, g) in net.generators().iter().enumerate() {
            vars.push(VarInfo::new(format!("pg[{k}]"), g.p_min, g.p_max));
        }
        for (k, g) in net.generators().iter().enumerate() {
            vars.push(VarInfo::new(format!("qg[{k}]"), g.q_min, g.q_max));
        }
        for (k, d) in net.dgs().iter().enumerate() {
            vars.push(VarInfo::new(format!("pdg[{k}]"), d.generator.p_min, d.generator.p_max));
        }
        for (k, d) in net.dgs().iter().enumerate() {
            vars.push(VarInfo::new(format!("qdg[{k}]"), d.generator.q_min, d.generator.q_max));
        }
        for (j, p) in self.ports.iter().enumerate() {
            let (pb, qb) = match (j, fixed) {
                (0, Some(pt)) => ((pt.p, pt.p), (pt.q, pt.q)),
                _ => (p.p_bounds, p.q_bounds),
            };
            vars.push(VarInfo::new(format!("port_p[{j}]"), pb.0 / base, pb.1 / base));
            vars.push(VarInfo::new(format!("port_q[{j}]"), qb.0 / base, qb.1 / base));
        }
        if t.is_some() {
            vars.push(VarInfo::new("t", 0.0, f64::INFINITY));
        }
        if elastic.is_some() {
            for name in ["s", "e_p+", "e_p-", "e_q+", "e_q-"] {
                vars.push(VarInfo::new(name, 0.0, f64::INFINITY));
            }
        }
        debug_assert_eq!(vars.len(), n);

        let mut ends = Vec::new();
        let mut flow_rows = Vec::new();
        for br in net.branches().iter().filter(|b| b.is_closed()) {
            let f = idx(br.from_bus)?;
            let to = idx(br.to_bus)?;
            for e in BranchEnd::pair(f, to, br.pi_stamp()) {
                if br.rating > 0.0 {
                    flow_rows.push((ends.len(), br.rating * br.rating));
                }
                ends.push(e);
            }
        }
        let (pd, qd) = net.bus_demand();
        let mut dg_rows = Vec::new();
        for (k, d) in net.dgs().iter().enumerate() {
            for h in &d.capability {
                dg_rows.push(DgRow::Linear { k, alpha: h.alpha, beta: h.beta, delta: h.delta });
            }
            if let Some(s) = d.s_max {
                dg_rows.push(DgRow::Circle { k, s });
            }
        }
        let scale = [base, base, 1.0];
        let mut port_constraints = Vec::new();
        let mut port_costs = Vec::new();
        for (j, p) in self.ports.iter().enumerate() {
            if let Some(f) = &p.constraint {
                port_constraints.push(PortTerm { vars: layout.port_vars(j), scale, f: f.clone() });
            }
            if let Some(f) = &p.cost {
                port_costs.push(PortTerm { vars: layout.port_vars(j), scale, f: f.clone() });
            }
        }
        let to_pu = |x: [f64; 3]| [x[0] / base, x[1] / base, x[2]];
        let (obj, ray) = match &self.objective {
            OpfObjective::TotalCost | OpfObjective::FixedPccCost { .. } => (Obj::Cost, None),
            OpfObjective::AxisExtreme { axis, maximize } => {
                let var = layout.port_vars(0)[axis.index()];
                (Obj::Axis { var, sign: if *maximize { -1.0 } else { 1.0 } }, None)
            }
            OpfObjective::L2Projection { target, scale: s } => {
                if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(OpfError::Parameter("projection scale must be positive".into()));
                }
                let weight = [0, 1, 2].map(|k| (scale[k] / s[k]).powi(2));
                (Obj::L2 { target: to_pu(target.to_array()), weight }, None)
            }
            OpfObjective::RayMax { center, direction } => {
                if direction.iter().all(|d| *d == 0.0) || direction.iter().any(|d| !d.is_finite()) {
                    return Err(OpfError::Parameter("ray direction must be finite and nonzero".into()));
                }
                (Obj::Ray, Some((to_pu(center.to_array()), to_pu(*direction))))
            }
            OpfObjective::Elastic { .. } => (Obj::Elastic, None),
        };

        let model = OpfModel {
            ends,
            flow_rows,
            gs: net.buses().iter().map(|b| b.gs).collect(),
            bs: net.buses().iter().map(|b| b.bs).collect(),
            pd,
            qd,
            gen_bus: net.generators().iter().map(|g| net.bus_index(g.bus).unwrap()).collect(),
            dg_bus: net.dgs().iter().map(|d| net.bus_index(d.generator.bus).unwrap()).collect(),
            gen_cost: net.generators().iter().map(|g| (g.cost_a, g.cost_b, g.cost_c)).collect(),
            dg_cost: net.dgs().iter().map(|d| (d.generator.cost_a, d.generator.cost_b, d.generator.cost_c)).collect(),
            dg_rows,
            port_sign: self.ports.iter().map(|p| p.sign).collect(),
            port_constraints,
            port_costs,
            ray,
            soft_v,
            obj,
            l: layout.clone(),
        };

        let x0 = match self.x0 {
            Some(x) if x.len() == n => x,
            _ => {
                let mut x: Vec<f64> = vars
                    .iter()
                    .map(|v| match (v.lb.is_finite(), v.ub.is_finite()) {
                        (true, true) => 0.5 * (v.lb + v.ub),
                        _ => 0.0,
                    })
                    .collect();
                for i in 0..nb {
                    let v = &vars[layout.v(i)];
                    x[layout.v(i)] = if v.lb == v.ub { v.lb } else { 1.0 };
                    x[layout.th(i)] = 0.0;
                }
                if let Some(t) = t {
                    x[t] = 0.0;
                }
                x
            }
        };
        Ok(OpfProblem { nlp: NlpProblem { vars, functions: Box::new(model), x0: Some(x0) }, layout })
    }
}

/// Assemble an OPF over `network`. When `pcc_bus` is given, that bus hosts a
/// coupling port withdrawing the exported `(p, q)`, free unless the objective
/// fixes it.
pub fn assemble_opf(network: &Network, objective: OpfObjective, pcc_bus: Option<usize>) -> Result<OpfProblem, OpfError> {
    let mut b = OpfBuilder::new(network, objective);
    if let Some(bus) = pcc_bus {
        b = b.port(PortSpec::free(bus, -1.0));
    }
    b.build()
}

/// Re-solve the power flow at the dispatch in `x` and return the largest
/// deviation in voltage magnitude, angle or bus injection.
pub fn verify_with_powerflow(network: &Network, layout: &OpfLayout, x: &[f64]) -> Result<f64, PfError> {
    let mut sp = PfSetpoints::zero(network);
    sp.gen_p.copy_from_slice(layout.gen_p(x));
    sp.gen_q.copy_from_slice(layout.gen_q(x));
    sp.dg_p.copy_from_slice(layout.dg_p(x));
    sp.dg_q.copy_from_slice(layout.dg_q(x));
    for (i, b) in network.buses().iter().enumerate() {
        sp.v_set.insert(b.id, x[layout.v(i)]);
    }
    for (j, &b) in layout.port_bus.iter().enumerate() {
        let s = layout.port_sign[j];
        sp.extra.push((layout.bus_ids[b], s * x[layout.port_p(j)], s * x[layout.port_q(j)]));
    }
    let state = solve_powerflow(network, &sp, PfOptions::default())?;
    let (pd, qd) = network.bus_demand();
    let mut p_spec: Vec<f64> = pd.iter().map(|v| -v).collect();
    let mut q_spec: Vec<f64> = qd.iter().map(|v| -v).collect();
    let gens = sp.gen_p.iter().zip(&sp.gen_q).zip(network.generators().iter().map(|g| g.bus));
    let dgs = sp.dg_p.iter().zip(&sp.dg_q).zip(network.dgs().iter().map(|d| d.generator.bus));
    let extra = sp.extra.iter().map(|(b, p, q)| ((p, q), *b));
    for ((p, q), bus) in gens.chain(dgs).chain(extra) {
        let i = network.bus_index(bus).expect("known bus");
        p_spec[i] += p;
        q_spec[i] += q;
    }
    let mut dev = 0.0f64;
    for i in 0..layout.nb {
        dev = dev.max((state.p_inj[i] - p_spec[i]).abs()).max((state.q_inj[i] - q_spec[i]).abs());
        dev = dev.max((state.v[i] - x[layout.v(i)]).abs());
        dev = dev.max((state.theta[i] - x[layout.th(i)]).abs());
    }
    Ok(dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::tests::two_bus;
    use crate::nlopt::derivcheck::check_derivatives;
    use crate::nlopt::NlpStatus;

    fn two_bus_net() -> Network {
        Network::new(two_bus()).unwrap()
    }

    #[test]
    fn two_bus_counts() {
        let p = assemble_opf(&two_bus_net(), OpfObjective::TotalCost, None).unwrap();
        assert_eq!(p.nlp.n(), 6);
        assert_eq!(p.nlp.functions.n_eq(), 4);
    }

    #[test]
    fn port_variants_require_port() {
        let obj = OpfObjective::AxisExtreme { axis: Axis::V, maximize: true };
        assert_eq!(assemble_opf(&two_bus_net(), obj, None).err(), Some(OpfError::MissingPort));
    }

    #[test]
    fn axis_extreme_is_negated_maximization() {
        let obj = OpfObjective::AxisExtreme { axis: Axis::V, maximize: true };
        let p = assemble_opf(&two_bus_net(), obj, Some(2)).unwrap();
        let mut x = p.nlp.x0.clone().unwrap();
        let v = p.layout.v(1);
        x[v] = 1.04;
        assert_eq!(p.nlp.functions.objective(&x), -1.04);
        let mut g = vec![0.0; x.len()];
        p.nlp.functions.gradient(&x, &mut g);
        assert_eq!(g[v], -1.0);
    }

    #[test]
    fn ray_adds_three_rows_and_one_variable() {
        let base = assemble_opf(&two_bus_net(), OpfObjective::AxisExtreme { axis: Axis::P, maximize: false }, Some(2)).unwrap();
        let obj = OpfObjective::RayMax { center: CouplingPoint::new(0.0, 0.0, 1.0), direction: [1.0, 0.0, 0.0] };
        let ray = assemble_opf(&two_bus_net(), obj, Some(2)).unwrap();
        assert_eq!(ray.nlp.n(), base.nlp.n() + 1);
        assert_eq!(ray.nlp.functions.n_eq(), base.nlp.functions.n_eq() + 3);
    }

    #[test]
    fn two_bus_solves() {
        let p = assemble_opf(&two_bus_net(), OpfObjective::TotalCost, None).unwrap();
        let s = p.solve(&SolveOptions::default());
        assert_eq!(s.status, NlpStatus::Optimal);
        let pg = p.layout.gen_p(&s.x)[0];
        assert!((pg - 0.1).abs() < 1e-8, "lossless line: generation equals load, got {pg}");
    }

    struct Bowl;
    impl PqvFunction for Bowl {
        fn value(&self, x: [f64; 3]) -> f64 {
            x[0] * x[0] / 100.0 + x[0] * x[1] / 50.0 + (x[2] - 1.0).powi(2) * 3.0 + x[1] * x[2] - 1.0
        }
        fn gradient(&self, x: [f64; 3]) -> [f64; 3] {
            [x[0] / 50.0 + x[1] / 50.0, x[0] / 50.0 + x[2], 6.0 * (x[2] - 1.0) + x[1]]
        }
        fn hessian(&self, _: [f64; 3]) -> [[f64; 3]; 3] {
            [[1.0 / 50.0, 1.0 / 50.0, 0.0], [1.0 / 50.0, 0.0, 1.0], [0.0, 1.0, 6.0]]
        }
    }

    fn rich_network() -> Network {
        use crate::netmodel::{DgArchetype, Load};
        let mut d = two_bus();
        let mut b3 = d.buses[1].clone();
        b3.id = 3;
        b3.gs = 0.01;
        b3.bs = 0.03;
        d.buses.push(b3);
        let mut br = d.branches[0].clone();
        (br.from_bus, br.to_bus, br.r, br.b_charge, br.tap, br.shift, br.rating) = (2, 3, 0.02, 0.04, 1.02, 0.05, 0.8);
        d.branches.push(br);
        d.branches[0].rating = 1.5;
        d.loads.push(Load { bus: 3, p_d: 0.2, q_d: 0.05 });
        d.dgs.push(DgArchetype::BoxCircle.build(3, 0.3, (2.0, 5.0, 0.0)));
        d.dgs.push(DgArchetype::Pentagon.build(2, 0.3, (1.0, 4.0, 0.0)));
        Network::new(d).unwrap()
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let net = rich_network();
        let pt = CouplingPoint::new(3.0, -1.0, 1.01);
        let objectives = vec![
            OpfObjective::TotalCost,
            OpfObjective::AxisExtreme { axis: Axis::Q, maximize: true },
            OpfObjective::L2Projection { target: pt, scale: [10.0, 5.0, 0.05] },
            OpfObjective::RayMax { center: pt, direction: [1.0, 2.0, 0.01] },
            OpfObjective::FixedPccCost { point: pt },
            OpfObjective::Elastic { point: pt },
        ];
        for obj in objectives {
            let mut port = PortSpec::free(3, -1.0);
            port.constraint = Some(Arc::new(Bowl));
            port.cost = Some(Arc::new(Bowl));
            let p = OpfBuilder::new(&net, obj.clone()).port(port).build().unwrap();
            let x: Vec<f64> = (0..p.nlp.n()).map(|i| 0.9 + 0.37 * ((i * 7919) % 13) as f64 / 13.0).collect();
            let rep = check_derivatives(&*p.nlp.functions, &x, 1e-6);
            assert!(rep.max_error() < 1e-5, "{obj:?}: {rep:?}");
        }
    }

    #[test]
    fn optimal_dispatch_satisfies_power_flow() {
        let net = rich_network();
        let p = assemble_opf(&net, OpfObjective::TotalCost, None).unwrap();
        let s = p.solve(&SolveOptions::default());
        assert_eq!(s.status, NlpStatus::Optimal);
        let dev = verify_with_powerflow(&net, &p.layout, &s.x).unwrap();
        assert!(dev < 1e-6, "{dev}");
    }

    #[test]
    fn enlarging_a_cheap_unit_never_raises_cost() {
        let mut prev = f64::INFINITY;
        for cap in [0.05, 0.1, 0.2, 0.3] {
            let mut d = rich_network().to_data();
            let k = d.dgs.len() - 1;
            d.dgs[k] = crate::netmodel::DgArchetype::Pentagon.build(2, cap, (1.0, 4.0, 0.0));
            let p = assemble_opf(&Network::new(d).unwrap(), OpfObjective::TotalCost, None).unwrap();
            let s = p.solve(&SolveOptions::default());
            assert_eq!(s.status, NlpStatus::Optimal);
            assert!(s.objective <= prev + 1e-9, "{} > {prev}", s.objective);
            prev = s.objective;
        }
    }
}
