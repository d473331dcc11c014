//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use num_complex::Complex64;
use pqvflex::netmodel::{Branch, Bus, BusKind, Generator, Load, Network, NetworkData};

pub const TWO_BUS_LOAD: (f64, f64) = (0.8, 0.2);

/// Slack bus 1 and a load bus 2 with its own, steeper generator, joined by a lossy line.
pub fn two_bus_opf() -> Network {
    let gen = |bus, a, b| Generator { bus, p_min: 0.0, p_max: 1.5, q_min: -1.0, q_max: 1.0, cost_a: a, cost_b: b, cost_c: 0.0 };
    Network::new(NetworkData {
        name: "two-bus".into(),
        base_mva: 100.0,
        buses: vec![Bus::new(1, BusKind::Slack, 0.95, 1.05), Bus::new(2, BusKind::Pq, 0.95, 1.05)],
        branches: vec![Branch::line(1, 2, 0.02, 0.1)],
        generators: vec![gen(1, 10.0, 20.0), gen(2, 50.0, 10.0)],
        dgs: vec![],
        loads: vec![Load { bus: 2, p_d: TWO_BUS_LOAD.0, q_d: TWO_BUS_LOAD.1 }],
    })
    .unwrap()
}

/// Exhaustive search over `p_g2` and both voltage magnitudes on a `step` grid,
/// solving the 2-bus network equations in closed form for the angle.
pub fn two_bus_grid_search(net: &Network, step: f64) -> f64 {
    let br = &net.branches()[0];
    let y = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
    let (g, b) = (y.re, y.im);
    let (rmag, phi) = (g.hypot(b), b.atan2(g));
    let (g1, g2) = (&net.generators()[0], &net.generators()[1]);
    let (pd, qd) = TWO_BUS_LOAD;
    let vb = &net.buses()[0];
    let nv = ((vb.v_max - vb.v_min) / step).round() as usize;
    let np = ((g2.p_max - g2.p_min) / step).round() as usize;
    let mut best = f64::INFINITY;
    for iv1 in 0..=nv {
        let v1 = vb.v_min + iv1 as f64 * step;
        for iv2 in 0..=nv {
            let v2 = vb.v_min + iv2 as f64 * step;
            for ip in 0..=np {
                let pg2 = g2.p_min + ip as f64 * step;
                let p2 = pg2 - pd;
                let k = (g * v2 * v2 - p2) / (v1 * v2);
                if k.abs() > rmag {
                    continue;
                }
                let a = (k / rmag).acos();
                let th = [phi + a, phi - a]
                    .into_iter()
                    .map(|t| (t + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI)
                    .min_by(|x, y| x.abs().total_cmp(&y.abs()))
                    .unwrap();
                let q2 = -b * v2 * v2 - v1 * v2 * (g * th.sin() - b * th.cos());
                let p1 = g * v1 * v1 - v1 * v2 * (g * th.cos() - b * th.sin());
                let q1 = -b * v1 * v1 + v1 * v2 * (g * th.sin() + b * th.cos());
                let qg2 = q2 + qd;
                if !(g1.p_min..=g1.p_max).contains(&p1)
                    || !(g1.q_min..=g1.q_max).contains(&q1)
                    || !(g2.q_min..=g2.q_max).contains(&qg2)
                {
                    continue;
                }
                best = best.min(g1.cost(p1) + g2.cost(pg2));
            }
        }
    }
    best
}

/// Gauss-Seidel power flow on the dense admittance matrix. PV buses hold
/// their magnitude; the reference bus is fixed. Injections in p.u.
pub fn gauss_seidel(
    y: &[Vec<Complex64>],
    kind: &[BusKind],
    p: &[f64],
    q: &[f64],
    v0: &[f64],
    iterations: usize,
) -> Vec<Complex64> {
    let n = y.len();
    let mut v: Vec<Complex64> = v0.iter().map(|&m| Complex64::new(m, 0.0)).collect();
    let mut q = q.to_vec();
    for _ in 0..iterations {
        for i in 0..n {
            if kind[i] == BusKind::Slack {
                continue;
            }
            let current: Complex64 = (0..n).map(|k| y[i][k] * v[k]).sum();
            if kind[i] == BusKind::Pv {
                q[i] = (v[i] * current.conj()).im;
            }
            let sum: Complex64 = (0..n).filter(|&k| k != i).map(|k| y[i][k] * v[k]).sum();
            let mut vi = (Complex64::new(p[i], -q[i]) / v[i].conj() - sum) / y[i][i];
            if kind[i] == BusKind::Pv {
                vi = vi / vi.norm() * v0[i];
            }
            v[i] = vi;
        }
    }
    v
}
