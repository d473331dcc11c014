mod common;

use pqvflex::nlopt::{assemble_opf, verify_with_powerflow, NlpStatus, OpfObjective, SolveOptions};

#[test]
fn two_bus_opf_matches_grid_search() {
    let net = common::two_bus_opf();
    let problem = assemble_opf(&net, OpfObjective::TotalCost, None).unwrap();
    let sol = problem.solve(&SolveOptions::default());
    assert_eq!(sol.status, NlpStatus::Optimal);
    let grid = common::two_bus_grid_search(&net, 1e-3);
    assert!(sol.objective <= grid * (1.0 + 1e-9));
    assert!((grid - sol.objective) / grid <= 1e-3, "ipm {} grid {grid}", sol.objective);
    assert!(verify_with_powerflow(&net, &problem.layout, &sol.x).unwrap() <= 1e-6);
}

#[test]
fn case9_opf_is_verified_by_power_flow() {
    let net = pqvflex::cases::case9();
    let problem = assemble_opf(&net, OpfObjective::TotalCost, None).unwrap();
    let sol = problem.solve(&SolveOptions::default());
    assert_eq!(sol.status, NlpStatus::Optimal);
    assert!(verify_with_powerflow(&net, &problem.layout, &sol.x).unwrap() <= 1e-6);
    // MATPOWER reports 5296.69 $/h for this case.
    assert!((sol.objective - 5296.69).abs() < 0.5, "{}", sol.objective);
}
