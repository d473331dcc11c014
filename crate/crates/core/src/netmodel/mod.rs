//! Immutable per-unit network model.
//!
//! A [`Network`] is built from plain [`NetworkData`] through [`Network::new`],
//! which validates every cross reference once. After construction the model is
//! read-only, so it can be shared between solver threads without locking.

use std::collections::{HashMap, VecDeque};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod admittance;
mod capability;
mod merge;
pub mod serde_inf;

pub use admittance::{build_admittance, AdmittanceMatrix};
pub use capability::{capability_residuals, DgArchetype, HalfPlane};
pub use merge::{attach_pcc, merge_ts_ds, BusMap, PccNetwork};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("duplicate bus id {0}")]
    DuplicateBus(usize),
    #[error("{what} references unknown bus {bus}")]
    DanglingBus { what: String, bus: usize },
    #[error("invalid {what}: {reason}")]
    Invalid { what: String, reason: String },
    #[error("network is not connected: bus {0} is unreachable over closed branches")]
    Disconnected(usize),
    #[error("expected exactly one reference bus (one slack, or one pcc bus when no slack exists), found {slack} slack and {pcc} pcc")]
    Reference { slack: usize, pcc: usize },
    #[error("PCC not empty: bus {0} hosts a load or generator")]
    PccNotEmpty(usize),
    #[error("unknown branch id {0}")]
    UnknownBranch(usize),
}

fn invalid(what: impl Into<String>, reason: impl Into<String>) -> NetworkError {
    NetworkError::Invalid { what: what.into(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
    /// Boundary bus of a distribution system whose injection is the coupling point.
    Pcc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub v_min: f64,
    pub v_max: f64,
    #[serde(with = "serde_inf::neg", default = "serde_inf::neg_infinity")]
    pub theta_min: f64,
    #[serde(with = "serde_inf::pos", default = "serde_inf::infinity")]
    pub theta_max: f64,
    pub base_kv: f64,
    /// Shunt conductance, per-unit at v = 1.
    #[serde(default)]
    pub gs: f64,
    /// Shunt susceptance, per-unit at v = 1.
    #[serde(default)]
    pub bs: f64,
}

impl Bus {
    pub fn new(id: usize, kind: BusKind, v_min: f64, v_max: f64) -> Self {
        Bus {
            id,
            kind,
            v_min,
            v_max,
            theta_min: f64::NEG_INFINITY,
            theta_max: f64::INFINITY,
            base_kv: 0.0,
            gs: 0.0,
            bs: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchStatus {
    Closed,
    Open,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b_charge: f64,
    #[serde(default = "one")]
    pub tap: f64,
    #[serde(default)]
    pub shift: f64,
    /// Apparent-power limit in per-unit; 0 means unlimited.
    #[serde(default)]
    pub rating: f64,
    pub status: BranchStatus,
}

fn one() -> f64 {
    1.0
}

impl Branch {
    pub fn line(from_bus: usize, to_bus: usize, r: f64, x: f64) -> Self {
        Branch {
            from_bus,
            to_bus,
            r,
            x,
            b_charge: 0.0,
            tap: 1.0,
            shift: 0.0,
            rating: 0.0,
            status: BranchStatus::Closed,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.status == BranchStatus::Closed
    }

    /// π-model two-port admittances `[y_ff, y_ft, y_tf, y_tt]` including tap and phase shift.
    pub fn pi_stamp(&self) -> [Complex64; 4] {
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(self.r, self.x);
        let half_b = Complex64::new(0.0, 0.5 * self.b_charge);
        let t = Complex64::from_polar(self.tap, self.shift);
        let ytt = ys + half_b;
        let yff = ytt / (self.tap * self.tap);
        let yft = -ys / t.conj();
        let ytf = -ys / t;
        [yff, yft, ytf, ytt]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Cost `a p² + b p + c` with `p` in per-unit on the network base.
    pub cost_a: f64,
    pub cost_b: f64,
    pub cost_c: f64,
}

impl Generator {
    pub fn cost(&self, p: f64) -> f64 {
        (self.cost_a * p + self.cost_b) * p + self.cost_c
    }

    pub fn marginal_cost(&self, p: f64) -> f64 {
        2.0 * self.cost_a * p + self.cost_b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgUnit {
    pub generator: Generator,
    #[serde(default)]
    pub capability: Vec<HalfPlane>,
    #[serde(default)]
    pub s_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub bus: usize,
    pub p_d: f64,
    pub q_d: f64,
}

/// Orientation marker for coupling quantities: positive `p`, `q` flow from the
/// distribution system into the transmission system.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    DsToTs,
}

/// Series element joining a transmission bus to the root of a distribution
/// system. Parameters are per-unit on the distribution system base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interconnect {
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b_charge: f64,
    #[serde(default = "one")]
    pub tap: f64,
    #[serde(default)]
    pub shift: f64,
    #[serde(default)]
    pub rating: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PccLink {
    /// Transmission bus hosting the coupling point.
    pub ts_bus: usize,
    pub ds_name: String,
    /// Distribution bus (normally the feeder root) behind the interconnect.
    pub ds_bus: usize,
    pub interconnect: Interconnect,
    /// Voltage band of the coupling point.
    pub v_min: f64,
    pub v_max: f64,
    #[serde(default)]
    pub orientation: Orientation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkData {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub dgs: Vec<DgUnit>,
    #[serde(default)]
    pub loads: Vec<Load>,
}

/// Validated network. Bus references are by id; solver code works with the
/// positional index returned by [`Network::bus_index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkData", into = "NetworkData")]
pub struct Network {
    data: NetworkData,
    index: HashMap<usize, usize>,
}

impl TryFrom<NetworkData> for Network {
    type Error = NetworkError;
    fn try_from(data: NetworkData) -> Result<Self, Self::Error> {
        Network::new(data)
    }
}

impl From<Network> for NetworkData {
    fn from(n: Network) -> Self {
        n.data
    }
}

impl Network {
    pub fn new(data: NetworkData) -> Result<Self, NetworkError> {
        let mut index = HashMap::with_capacity(data.buses.len());
        for (i, b) in data.buses.iter().enumerate() {
            if index.insert(b.id, i).is_some() {
                return Err(NetworkError::DuplicateBus(b.id));
            }
        }
        let net = Network { data, index };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<(), NetworkError> {
        let d = &self.data;
        if !(d.base_mva.is_finite() && d.base_mva > 0.0) {
            return Err(invalid("base_mva", "must be positive"));
        }
        if d.buses.is_empty() {
            return Err(invalid("network", "has no buses"));
        }
        for b in &d.buses {
            let what = || format!("bus {}", b.id);
            if !(b.v_min.is_finite() && b.v_max.is_finite() && b.v_min > 0.0) {
                return Err(invalid(what(), "voltage bounds must be finite and positive"));
            }
            if b.v_min > b.v_max {
                return Err(invalid(what(), "v_min exceeds v_max"));
            }
            if b.theta_min.is_nan() || b.theta_max.is_nan() || b.theta_min > b.theta_max {
                return Err(invalid(what(), "theta_min exceeds theta_max"));
            }
            if !(b.gs.is_finite() && b.bs.is_finite()) {
                return Err(invalid(what(), "non-finite shunt"));
            }
        }
        for (k, br) in d.branches.iter().enumerate() {
            let what = format!("branch {}", k + 1);
            for bus in [br.from_bus, br.to_bus] {
                if !self.index.contains_key(&bus) {
                    return Err(NetworkError::DanglingBus { what, bus });
                }
            }
            if br.from_bus == br.to_bus {
                return Err(invalid(what, "connects a bus to itself"));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(invalid(what, "zero series impedance"));
            }
            if !(br.rating >= 0.0 && br.rating.is_finite()) {
                return Err(invalid(what, "rating must be non-negative"));
            }
            if !(br.tap > 0.0 && br.tap.is_finite()) {
                return Err(invalid(what, "tap ratio must be positive"));
            }
            if ![br.r, br.x, br.b_charge, br.shift].iter().all(|v| v.is_finite()) {
                return Err(invalid(what, "non-finite parameter"));
            }
        }
        for (k, g) in d.generators.iter().enumerate() {
            self.check_generator(g, &format!("generator {}", k + 1))?;
        }
        for (k, dg) in d.dgs.iter().enumerate() {
            let what = format!("dg {}", k + 1);
            self.check_generator(&dg.generator, &what)?;
            capability::check_dg(dg).map_err(|reason| invalid(what, reason))?;
        }
        for (k, l) in d.loads.iter().enumerate() {
            if !self.index.contains_key(&l.bus) {
                return Err(NetworkError::DanglingBus { what: format!("load {}", k + 1), bus: l.bus });
            }
            if !(l.p_d.is_finite() && l.q_d.is_finite()) {
                return Err(invalid(format!("load {}", k + 1), "non-finite demand"));
            }
        }
        let slack = d.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        let pcc = d.buses.iter().filter(|b| b.kind == BusKind::Pcc).count();
        if !(slack == 1 || (slack == 0 && pcc == 1)) {
            return Err(NetworkError::Reference { slack, pcc });
        }
        self.check_connected()
    }

    fn check_generator(&self, g: &Generator, what: &str) -> Result<(), NetworkError> {
        if !self.index.contains_key(&g.bus) {
            return Err(NetworkError::DanglingBus { what: what.to_string(), bus: g.bus });
        }
        let vals = [g.p_min, g.p_max, g.q_min, g.q_max, g.cost_a, g.cost_b, g.cost_c];
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(invalid(what, "non-finite limit or cost"));
        }
        if g.p_min > g.p_max {
            return Err(invalid(what, "p_min exceeds p_max"));
        }
        if g.q_min > g.q_max {
            return Err(invalid(what, "q_min exceeds q_max"));
        }
        Ok(())
    }

    fn check_connected(&self) -> Result<(), NetworkError> {
        let n = self.n_buses();
        let mut adj = vec![Vec::new(); n];
        for br in self.data.branches.iter().filter(|b| b.is_closed()) {
            let (f, t) = (self.index[&br.from_bus], self.index[&br.to_bus]);
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(NetworkError::Disconnected(self.data.buses[i].id)),
            None => Ok(()),
        }
    }

    pub fn data(&self) -> &NetworkData {
        &self.data
    }

    pub fn to_data(&self) -> NetworkData {
        self.data.clone()
    }

    pub fn name(&self) -> &str {
        &self.data.name
    }

    pub fn base_mva(&self) -> f64 {
        self.data.base_mva
    }

    pub fn buses(&self) -> &[Bus] {
        &self.data.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.data.branches
    }

    pub fn generators(&self) -> &[Generator] {
        &self.data.generators
    }

    pub fn dgs(&self) -> &[DgUnit] {
        &self.data.dgs
    }

    pub fn loads(&self) -> &[Load] {
        &self.data.loads
    }

    pub fn n_buses(&self) -> usize {
        self.data.buses.len()
    }

    /// Positional index of a bus id.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// Index of the angle reference: the slack bus, or the pcc bus when there is no slack.
    pub fn reference_bus(&self) -> usize {
        let buses = &self.data.buses;
        buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .or_else(|| buses.iter().position(|b| b.kind == BusKind::Pcc))
            .expect("validated network has a reference bus")
    }

    /// Per-bus demand `(p_d, q_d)` in per-unit, aggregated over loads.
    pub fn bus_demand(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_buses();
        let (mut p, mut q) = (vec![0.0; n], vec![0.0; n]);
        for l in &self.data.loads {
            let i = self.index[&l.bus];
            p[i] += l.p_d;
            q[i] += l.q_d;
        }
        (p, q)
    }

    /// True when no load, generator or DG is attached to the bus.
    pub fn is_empty_bus(&self, id: usize) -> bool {
        let d = &self.data;
        !d.loads.iter().any(|l| l.bus == id)
            && !d.generators.iter().any(|g| g.bus == id)
            && !d.dgs.iter().any(|g| g.generator.bus == id)
    }

    pub fn total_load(&self) -> (f64, f64) {
        self.data.loads.iter().fold((0.0, 0.0), |(p, q), l| (p + l.p_d, q + l.q_d))
    }
}
