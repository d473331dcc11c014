//! Fixed coupling-point problems: the elastic feasibility verdict and the
//! minimum-cost internal dispatch.

use super::opf::{assemble_opf, OpfLayout, OpfObjective};
use super::{CouplingPoint, NlpSolution, NlpStatus, SolveOptions};
use crate::netmodel::PccNetwork;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPccOptions {
    /// A point is feasible iff the elastic relaxation's total slack is at most this.
    pub feas_tol: f64,
    pub solve: SolveOptions,
}

impl Default for FixedPccOptions {
    fn default() -> Self {
        FixedPccOptions { feas_tol: 1e-6, solve: SolveOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub feasible: bool,
    /// Total elastic slack plus violation of the PCC voltage band.
    pub violation: f64,
    /// Status of the elastic solve.
    pub status: NlpStatus,
    /// Primal residual of the returned elastic iterate.
    pub residual: f64,
    /// Infeasibility is certified: the elastic solve is optimal, or the
    /// requested voltage alone leaves the PCC band by more than the tolerance.
    pub certified: bool,
    /// Elastic iterate; empty when the band check decided without a solve.
    pub x: Vec<f64>,
    pub layout: OpfLayout,
}

impl Verdict {
    /// Feasible verdicts rest on a primal witness, infeasible ones on a certificate.
    pub fn conclusive(&self) -> bool {
        self.feasible || self.certified
    }
}

fn pcc_bus_id(ds: &PccNetwork) -> usize {
    ds.network.buses()[ds.pcc_bus].id
}

/// Decide whether `x` lies in the FOR by minimizing the total constraint violation.
pub fn feasibility_verdict(ds: &PccNetwork, x: CouplingPoint, opts: &FixedPccOptions) -> Verdict {
    let pcc = &ds.network.buses()[ds.pcc_bus];
    let band = (pcc.v_min - x.v).max(x.v - pcc.v_max).max(0.0);
    let problem = assemble_opf(&ds.network, OpfObjective::Elastic { point: x }, Some(pcc_bus_id(ds)))
        .expect("pcc bus belongs to its network");
    if band > opts.feas_tol {
        return Verdict {
            feasible: false,
            violation: band,
            status: NlpStatus::Infeasible,
            residual: 0.0,
            certified: true,
            x: Vec::new(),
            layout: problem.layout,
        };
    }
    let solve = SolveOptions { target: Some((opts.feas_tol - band).max(0.0)), ..opts.solve };
    let sol = problem.solve(&solve);
    let total = problem.layout.elastic_total(&sol.x).unwrap_or(f64::INFINITY);
    let violation = total.max(0.0) + band;
    let witness = sol.feasibility <= 0.1 * opts.feas_tol && violation + sol.feasibility <= opts.feas_tol;
    Verdict {
        feasible: witness,
        violation,
        status: sol.status,
        residual: sol.feasibility,
        certified: sol.status == NlpStatus::Optimal,
        x: sol.x,
        layout: problem.layout,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPccResult {
    /// `Optimal`, `Infeasible` (certified by the elastic verdict) or `NumericalFailure`.
    pub status: NlpStatus,
    /// Minimum internal generation cost when optimal, NaN otherwise.
    pub cost: f64,
    pub violation: f64,
    pub solution: Option<NlpSolution>,
    pub layout: Option<OpfLayout>,
}

/// Minimum-cost internal dispatch with the coupling point fixed at `x`.
///
/// The elastic verdict decides feasibility; a feasible point is then solved for
/// cost from the elastic solution, and once more from a flat start if that fails.
pub fn solve_fixed_pcc(ds: &PccNetwork, x: CouplingPoint, opts: &FixedPccOptions) -> FixedPccResult {
    let verdict = feasibility_verdict(ds, x, opts);
    let fail = |status, violation| FixedPccResult { status, cost: f64::NAN, violation, solution: None, layout: None };
    if !verdict.conclusive() {
        return fail(NlpStatus::NumericalFailure, verdict.violation);
    }
    if !verdict.feasible {
        return fail(NlpStatus::Infeasible, verdict.violation);
    }
    let bus = pcc_bus_id(ds);
    let n_cost = verdict.layout.elastic.expect("elastic layout");
    for warm in [Some(verdict.x[..n_cost].to_vec()), None] {
        let problem = super::opf::OpfBuilder::new(&ds.network, OpfObjective::FixedPccCost { point: x })
            .port(super::opf::PortSpec::free(bus, -1.0))
            .warm_start(warm)
            .build()
            .expect("pcc bus belongs to its network");
        let sol = problem.solve(&opts.solve);
        if sol.status == NlpStatus::Optimal {
            return FixedPccResult {
                status: NlpStatus::Optimal,
                cost: sol.objective,
                violation: verdict.violation,
                solution: Some(sol),
                layout: Some(problem.layout),
            };
        }
    }
    fail(NlpStatus::NumericalFailure, verdict.violation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{attach_pcc, Bus, BusKind, DgArchetype, Interconnect, Network, NetworkData, Orientation, PccLink};

    /// Lossless feeder: root bus 1, one DG bus 2, optional load at bus 2.
    pub(crate) fn toy_ds(load: f64) -> PccNetwork {
        let mut dg = DgArchetype::Box.build(2, 0.5, (1.0, 2.0, 0.3));
        dg.generator.q_min = -0.5;
        dg.generator.q_max = 0.5;
        let data = NetworkData {
            name: "toy".into(),
            base_mva: 10.0,
            buses: vec![Bus::new(1, BusKind::Slack, 0.9, 1.1), Bus::new(2, BusKind::Pq, 0.9, 1.1)],
            branches: vec![crate::netmodel::Branch::line(1, 2, 0.0, 0.05)],
            generators: vec![],
            dgs: vec![dg],
            loads: if load != 0.0 { vec![crate::netmodel::Load { bus: 2, p_d: load, q_d: 0.0 }] } else { vec![] },
        };
        let link = PccLink {
            ts_bus: 5,
            ds_name: "toy".into(),
            ds_bus: 1,
            interconnect: Interconnect { r: 0.0, x: 0.02, b_charge: 0.0, tap: 1.0, shift: 0.0, rating: 0.0 },
            v_min: 0.95,
            v_max: 1.05,
            orientation: Orientation::DsToTs,
        };
        attach_pcc(&Network::new(data).unwrap(), &link).unwrap()
    }

    #[test]
    fn null_exchange_costs_the_constant_terms() {
        let ds = toy_ds(0.0);
        let r = solve_fixed_pcc(&ds, CouplingPoint::new(0.0, 0.0, 1.0), &FixedPccOptions::default());
        assert_eq!(r.status, NlpStatus::Optimal);
        assert!((r.cost - 0.3).abs() < 1e-7, "{}", r.cost);
        let layout = r.layout.unwrap();
        assert!(layout.dg_p(&r.solution.unwrap().x)[0].abs() < 1e-7);
    }

    #[test]
    fn export_beyond_capacity_is_infeasible() {
        let ds = toy_ds(0.0);
        let r = solve_fixed_pcc(&ds, CouplingPoint::new(6.0, 0.0, 1.0), &FixedPccOptions::default());
        assert_eq!(r.status, NlpStatus::Infeasible);
        assert!(r.violation > 1e-3);
    }

    #[test]
    fn export_within_capacity_pays_quadratic_cost() {
        let ds = toy_ds(0.0);
        // lossless: 3 MW export = 0.3 p.u. from the DG
        let r = solve_fixed_pcc(&ds, CouplingPoint::new(3.0, 0.0, 1.0), &FixedPccOptions::default());
        assert_eq!(r.status, NlpStatus::Optimal);
        let expect = 1.0 * 0.09 + 2.0 * 0.3 + 0.3;
        assert!((r.cost - expect).abs() < 1e-7, "{} vs {expect}", r.cost);
    }

    #[test]
    fn voltage_outside_band_is_infeasible() {
        let ds = toy_ds(0.0);
        let v = feasibility_verdict(&ds, CouplingPoint::new(0.0, 0.0, 1.2), &FixedPccOptions::default());
        assert!(v.conclusive() && !v.feasible);
        assert!(v.violation >= 0.15 - 1e-9, "{}", v.violation);
    }

    #[test]
    fn slightly_outside_band_is_certified_without_a_solve() {
        let ds = toy_ds(0.0);
        let v = feasibility_verdict(&ds, CouplingPoint::new(1.0, 0.0, 1.0505), &FixedPccOptions::default());
        assert!(v.certified && !v.feasible && v.x.is_empty());
        assert!((v.violation - 5e-4).abs() < 1e-12);
        let r = solve_fixed_pcc(&ds, CouplingPoint::new(1.0, 0.0, 1.0505), &FixedPccOptions::default());
        assert_eq!(r.status, NlpStatus::Infeasible);
    }
}
