mod common;

use approx::assert_relative_eq;
use num_complex::Complex64;
use pqvflex::cases;
use pqvflex::netmodel::{build_admittance, BusKind};
use pqvflex::pflow::{branch_flows, solve_powerflow, PfOptions, PfSetpoints};

fn case9_setpoints() -> PfSetpoints {
    let net = cases::case9();
    let mut sp = PfSetpoints::zero(&net);
    sp.gen_p = vec![0.0, 1.63, 0.85];
    sp
}

#[test]
fn case9_admittance_entries() {
    let y = build_admittance(&cases::case9());
    assert_eq!(y.n(), 9);
    let series = |r: f64, x: f64| Complex64::new(1.0, 0.0) / Complex64::new(r, x);
    assert_relative_eq!(y.get(0, 0).im, series(0.0, 0.0576).im, epsilon = 1e-9);
    let y44 = series(0.0, 0.0576) + series(0.017, 0.092) + series(0.01, 0.085) + Complex64::new(0.0, (0.158 + 0.176) / 2.0);
    assert!((y.get(3, 3) - y44).norm() < 1e-9);
    assert!((y.get(3, 4) + series(0.017, 0.092)).norm() < 1e-9);
    assert_eq!(y.get(0, 4), Complex64::new(0.0, 0.0));
    for i in 0..9 {
        for k in 0..9 {
            assert!((y.get(i, k) - y.get(k, i)).norm() < 1e-12);
        }
    }
}

#[test]
fn case9_newton_matches_gauss_seidel() {
    let net = cases::case9();
    let state = solve_powerflow(&net, &case9_setpoints(), PfOptions::default()).unwrap();
    assert!(state.converged && state.mismatch <= 1e-8);
    let dense = build_admittance(&net).to_dense();
    let y: Vec<Vec<Complex64>> = (0..9).map(|i| (0..9).map(|k| dense[(i, k)]).collect()).collect();
    let kind: Vec<BusKind> = net.buses().iter().map(|b| b.kind).collect();
    let (pd, qd) = net.bus_demand();
    let mut p: Vec<f64> = pd.iter().map(|x| -x).collect();
    let q: Vec<f64> = qd.iter().map(|x| -x).collect();
    p[1] += 1.63;
    p[2] += 0.85;
    let v = common::gauss_seidel(&y, &kind, &p, &q, &[1.0; 9], 3000);
    for i in 0..9 {
        assert!((state.v[i] - v[i].norm()).abs() < 1e-6, "bus {i}");
        assert!((state.theta[i] - v[i].arg()).abs() < 1e-6, "bus {i}");
    }
}

#[test]
fn case9_losses_balance_injections() {
    let net = cases::case9();
    let state = solve_powerflow(&net, &case9_setpoints(), PfOptions::default()).unwrap();
    let losses: f64 = branch_flows(&net, &state).iter().map(|f| f.loss()).sum();
    let injected: f64 = state.p_inj.iter().sum();
    assert_relative_eq!(losses, injected, epsilon = 1e-9);
    assert!(losses > 0.0 && losses < 0.1);
}

#[test]
fn case30_counts() {
    let net = cases::case30();
    assert_eq!(net.n_buses(), 30);
    assert_eq!(net.branches().len(), 41);
    assert_eq!(net.generators().len(), 6);
}
