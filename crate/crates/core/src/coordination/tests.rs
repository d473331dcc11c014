use super::*;
use crate::fitting::{n_terms, MonomialIndexMap};
use crate::netmodel::{Branch, Bus, BusKind, DgArchetype, Generator, Interconnect, Load, NetworkData, Orientation};
use crate::nlopt::FixedPccOptions;
use crate::sampling::compute_bounding_box;

const PCC: usize = 5;

/// Slack bus 1 with one generator and a load, empty bus 5 for the coupling point.
fn ts(load_mw: f64, cost_b: f64) -> Network {
    Network::new(NetworkData {
        name: "ts2".into(),
        base_mva: 100.0,
        buses: vec![Bus::new(1, BusKind::Slack, 0.95, 1.05), Bus::new(PCC, BusKind::Pq, 0.9, 1.1)],
        branches: vec![Branch::line(1, PCC, 0.0, 0.05)],
        generators: vec![Generator {
            bus: 1,
            p_min: 0.0,
            p_max: 3.0,
            q_min: -3.0,
            q_max: 3.0,
            cost_a: 0.0,
            cost_b,
            cost_c: 0.0,
        }],
        dgs: vec![],
        loads: if load_mw > 0.0 { vec![Load { bus: 1, p_d: load_mw / 100.0, q_d: 0.0 }] } else { vec![] },
    })
    .unwrap()
}

fn link() -> PccLink {
    PccLink {
        ts_bus: PCC,
        ds_name: "toy".into(),
        ds_bus: 1,
        interconnect: Interconnect { r: 0.0, x: 0.02, b_charge: 0.0, tap: 1.0, shift: 0.0, rating: 0.0 },
        v_min: 0.95,
        v_max: 1.05,
        orientation: Orientation::DsToTs,
    }
}

/// One 5 MW box-shaped DG behind a reactance, 10 MVA base.
fn ds() -> Network {
    let mut dg = DgArchetype::Box.build(2, 0.5, (1.0, 2.0, 0.0));
    dg.generator.q_min = -0.5;
    dg.generator.q_max = 0.5;
    Network::new(NetworkData {
        name: "toy".into(),
        base_mva: 10.0,
        buses: vec![Bus::new(1, BusKind::Slack, 0.9, 1.1), Bus::new(2, BusKind::Pq, 0.9, 1.1)],
        branches: vec![Branch::line(1, 2, 0.0, 0.05)],
        generators: vec![],
        dgs: vec![dg],
        loads: vec![],
    })
    .unwrap()
}

fn linear_cost(per_mw: f64) -> CostModel {
    let map = MonomialIndexMap::new(2);
    let mut coeffs = vec![0.0; n_terms(2)];
    coeffs[map.index_of([1, 0, 0]).unwrap()] = per_mw;
    CostModel::new(coeffs, Normalization::identity(), 0.0, 1.0)
}

fn bundle(bounds: BoundingBox, cost: CostModel) -> DsModelBundle {
    DsModelBundle { pcc: link(), for_model: ImplicitPolynomial::constant(-1.0), cost_model: cost, bounds }
}

fn small_box() -> BoundingBox {
    BoundingBox::new(CouplingPoint { p: -5.0, q: -2.0, v: 0.95 }, CouplingPoint { p: 5.0, q: 2.0, v: 1.05 })
}

#[test]
fn one_bundle_adds_two_variables_and_one_inequality() {
    let net = ts(50.0, 1000.0);
    let plain = assemble_opf(&net, OpfObjective::TotalCost, None).unwrap();
    let coupled = build_for_opf(&net, &[bundle(small_box(), linear_cost(0.0))]).unwrap();
    assert_eq!(coupled.nlp.n(), plain.nlp.n() + 2);
    assert_eq!(coupled.nlp.functions.n_ineq(), plain.nlp.functions.n_ineq() + 1);
    assert_eq!(coupled.nlp.functions.n_eq(), plain.nlp.functions.n_eq());
}

#[test]
fn start_is_the_box_center() {
    let net = ts(50.0, 1000.0);
    let bx = BoundingBox::new(CouplingPoint { p: 1.0, q: -2.0, v: 0.96 }, CouplingPoint { p: 5.0, q: 4.0, v: 1.0 });
    let problem = build_for_opf(&net, &[bundle(bx, linear_cost(0.0))]).unwrap();
    let x0 = problem.nlp.x0.as_ref().unwrap();
    let c = problem.layout.port_point(x0, 0);
    assert!((c.p - 3.0).abs() < 1e-12 && (c.q - 1.0).abs() < 1e-12 && (c.v - 0.98).abs() < 1e-12);
}

#[test]
fn rejects_occupied_bus_and_mismatched_normalization() {
    let net = ts(50.0, 1000.0);
    let mut b = bundle(small_box(), linear_cost(0.0));
    b.pcc.ts_bus = 1;
    assert!(matches!(build_for_opf(&net, &[b]), Err(CoordError::PccNotEmpty(1))));

    let mut b = bundle(small_box(), linear_cost(0.0));
    b.cost_model.normalization = Normalization { mean: [1.0, 0.0, 1.0], std: [2.0, 1.0, 0.1] };
    assert!(matches!(build_for_opf(&net, &[b]), Err(CoordError::NormalizationMismatch(PCC))));

    let b = bundle(small_box(), linear_cost(0.0));
    assert!(matches!(build_for_opf(&net, &[b.clone(), b]), Err(CoordError::DuplicatePcc(PCC))));
}

#[test]
fn free_cheap_injection_goes_to_the_box_limit() {
    let net = ts(50.0, 5000.0);
    let problem = build_for_opf(&net, &[bundle(small_box(), linear_cost(0.0))]).unwrap();
    let sol = problem.solve(&SolveOptions::default());
    assert_eq!(sol.status, NlpStatus::Optimal);
    let x = problem.layout.port_point(&sol.x, 0);
    assert!((x.p - 5.0).abs() < 1e-4, "{x:?}");
}

#[test]
fn expensive_ds_stays_idle() {
    // 100 $/MWh in the DS against 10 $/MWh (1000 per p.u.) on the transmission side.
    let net = ts(50.0, 1000.0);
    let bx = BoundingBox::new(CouplingPoint { p: 0.0, q: -2.0, v: 0.95 }, CouplingPoint { p: 5.0, q: 2.0, v: 1.05 });
    let problem = build_for_opf(&net, &[bundle(bx, linear_cost(100.0))]).unwrap();
    let sol = problem.solve(&SolveOptions::default());
    assert_eq!(sol.status, NlpStatus::Optimal);
    let x = problem.layout.port_point(&sol.x, 0);
    assert!(x.p.abs() < 1e-4, "{x:?}");
    let pg = problem.layout.gen_p(&sol.x)[0];
    assert!((pg - 0.5).abs() < 1e-5);
}

#[test]
fn end_to_end_on_the_toy_system() {
    let net = ts(50.0, 5000.0);
    let pcc = attach_pcc(&ds(), &link()).unwrap();
    let opts = FixedPccOptions::default();
    let bx = compute_bounding_box(&pcc, &opts).unwrap();
    let b = bundle(bx, linear_cost(20.0));
    let report = solve_coordination(&net, std::slice::from_ref(&b), &[pcc], &CoordinationOptions::default()).unwrap();
    assert!(report.phase1_optimal());
    let d = &report.disaggregation[0];
    assert!((d.point.p - bx.x_max.p).abs() < 1e-3 * bx.x_max.p.abs().max(1.0), "{:?}", d.point);
    assert!(bx.contains(d.point.to_array(), 1e-6));
    assert!(matches!(d.result.status, NlpStatus::Optimal | NlpStatus::Infeasible));
    if report.feasible() {
        let expected = report.ts_cost + d.result.cost;
        assert!((report.total_cost - expected).abs() < 1e-9);
    } else {
        assert_eq!(report.false_feasible_events(), 1);
        assert!(report.total_cost.is_nan());
    }
    let summary = report.summary(&net, &[b]);
    assert_eq!(summary.ds.len(), 1);
    serde_json::to_string(&summary).unwrap();
}

#[test]
fn wrong_network_order_is_rejected() {
    let net = ts(50.0, 5000.0);
    let mut other = link();
    other.ts_bus = 1;
    let pcc = attach_pcc(&ds(), &other).unwrap();
    let err = solve_coordination(&net, &[bundle(small_box(), linear_cost(0.0))], &[pcc], &CoordinationOptions::default());
    assert!(matches!(err, Err(CoordError::NetworkMismatch { .. })));
}

#[test]
fn jitter_is_seeded_and_touches_only_linear_terms() {
    let net = ts(50.0, 1000.0);
    let cfg = BenchmarkConfig { n_trials: 3, seed: 11, jitter_lo: 0.5, jitter_hi: 1.5 };
    let (a, ma) = jitter_costs(&net, &cfg, 2).unwrap();
    let (b, mb) = jitter_costs(&net, &cfg, 2).unwrap();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    assert!((0.5..1.5).contains(&ma[0]));
    assert_eq!(a.generators()[0].cost_b, 1000.0 * ma[0]);
    assert_eq!(a.generators()[0].cost_a, net.generators()[0].cost_a);
    let (_, mc) = jitter_costs(&net, &cfg, 1).unwrap();
    assert_ne!(ma, mc);
}

#[test]
fn benchmark_is_deterministic_and_reports_every_trial() {
    let net = ts(50.0, 1000.0);
    let attachments = vec![(link(), ds())];
    let pcc = attach_pcc(&ds(), &link()).unwrap();
    let bx = compute_bounding_box(&pcc, &FixedPccOptions::default()).unwrap();
    let bundles = vec![bundle(bx, linear_cost(20.0))];
    let cfg = BenchmarkConfig { n_trials: 2, seed: 3, jitter_lo: 0.5, jitter_hi: 1.5 };
    let opts = CoordinationOptions::default();
    let strip = |r: &BenchmarkReport| trials_to_csv(&r.trials, &cfg);
    let a = run_benchmark(&net, &attachments, &bundles, &cfg, &opts).unwrap();
    let b = run_benchmark(&net, &attachments, &bundles, &cfg, &opts).unwrap();
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.trials.len(), 2);
    assert_eq!(a.trials.iter().map(|t| t.trial).collect::<Vec<_>>(), vec![0, 1]);
    assert_eq!(a.trials[0].standard_status, NlpStatus::Optimal);
    assert_eq!(timings_to_csv(&a.trials).lines().count(), 3);
}

#[test]
fn summary_statistics() {
    let t = |k: usize, d: f64, feasible: bool| TrialRecord {
        trial: k,
        b_multipliers: vec![1.0],
        proposed_status: NlpStatus::Optimal,
        standard_status: NlpStatus::Optimal,
        proposed_cost: 100.0 + d,
        standard_cost: 100.0,
        cost_diff_pct: d,
        feasible,
        false_feasible: usize::from(!feasible),
        proposed_time: 1.0,
        standard_time: 2.0,
        time_diff_pct: -50.0,
    };
    let cfg = BenchmarkConfig::default();
    let s = BenchmarkSummary::from_trials(&[t(0, 0.1, true), t(1, 0.3, true), t(2, -0.5, true), t(3, 9.0, false)], &cfg);
    assert_eq!(s.n_trials, 4);
    assert_eq!(s.feasibility_ratio, 0.75);
    assert_eq!(s.false_feasible_events, 1);
    assert!((s.mean_cost_diff_pct - (-0.1 / 3.0)).abs() < 1e-12);
    assert_eq!(s.median_cost_diff_pct, 0.1);
    assert_eq!(s.dominance_violations, 1);
    assert_eq!(s.max_abs_cost_diff_pct, 0.5);
}

#[test]
fn bundle_json_round_trip() {
    let b = bundle(small_box(), linear_cost(3.0));
    let text = serde_json::to_string(&b).unwrap();
    assert!(text.contains("\"box\""));
    let back: DsModelBundle = serde_json::from_str(&text).unwrap();
    assert_eq!(back.bounds, b.bounds);
    assert_eq!(back.cost_model.coeffs, b.cost_model.coeffs);
}
