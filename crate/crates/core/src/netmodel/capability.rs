use serde::{Deserialize, Serialize};

use super::{DgUnit, Generator};

/// Linear capability limit `alpha p + beta q <= delta` (per-unit).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfPlane {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
}

impl HalfPlane {
    pub fn new(alpha: f64, beta: f64, delta: f64) -> Self {
        HalfPlane { alpha, beta, delta }
    }

    pub fn residual(&self, p: f64, q: f64) -> f64 {
        self.alpha * p + self.beta * q - self.delta
    }
}

/// One residual per half-plane, followed by `p² + q² - s_max²` when an
/// apparent-power cap is set. All residuals are `<= 0` iff `(p, q)` satisfies the
/// capability set; box bounds are checked separately.
pub fn capability_residuals(dg: &DgUnit, p: f64, q: f64) -> Vec<f64> {
    let mut r: Vec<f64> = dg.capability.iter().map(|h| h.residual(p, q)).collect();
    if let Some(s) = dg.s_max {
        r.push(p * p + q * q - s * s);
    }
    r
}

pub(super) fn check_dg(dg: &DgUnit) -> Result<(), String> {
    for h in &dg.capability {
        if !(h.alpha.is_finite() && h.beta.is_finite() && h.delta.is_finite()) {
            return Err("non-finite half-plane".into());
        }
        if h.alpha == 0.0 && h.beta == 0.0 {
            return Err("half-plane with zero normal".into());
        }
    }
    if let Some(s) = dg.s_max {
        if !(s.is_finite() && s > 0.0) {
            return Err("s_max must be positive".into());
        }
    }
    if find_feasible_point(dg).is_none() {
        return Err("capability region is empty within the box bounds".into());
    }
    Ok(())
}

/// Grid probe of the box for a point satisfying every capability residual.
fn find_feasible_point(dg: &DgUnit) -> Option<(f64, f64)> {
    let g = &dg.generator;
    const N: usize = 40;
    let tol = 1e-12;
    (0..=N)
        .flat_map(|i| (0..=N).map(move |k| (i, k)))
        .map(|(i, k)| {
            let p = g.p_min + (g.p_max - g.p_min) * i as f64 / N as f64;
            let q = g.q_min + (g.q_max - g.q_min) * k as f64 / N as f64;
            (p, q)
        })
        .find(|&(p, q)| capability_residuals(dg, p, q).iter().all(|&r| r <= tol))
}

/// Capability-curve presets. Each is scaled by the unit's rating `s`
/// (taken equal to `p_max`); `p_min` is zero for all of them.
///
/// | preset      | box                               | extra limits                          |
/// |-------------|-----------------------------------|---------------------------------------|
/// | `Box`       | p ∈ [0, s], q ∈ [-0.5s, 0.5s]     | none                                  |
/// | `BoxCircle` | p ∈ [0, s], q ∈ [-s, s]           | p² + q² ≤ s²                          |
/// | `Triangle`  | p ∈ [0, s], q ∈ [-0.6s, 0.6s]     | \|q\| ≤ 0.6 p                         |
/// | `Trapezoid` | p ∈ [0, s], q ∈ [-0.6s, 0.6s]     | \|q\| ≤ 0.2 s + 0.4 p                 |
/// | `Pentagon`  | p ∈ [0, s], q ∈ [-0.5s, 0.5s]     | p + q ≤ 1.2 s                         |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgArchetype {
    Box,
    BoxCircle,
    Triangle,
    Trapezoid,
    Pentagon,
}

impl DgArchetype {
    pub const ALL: [DgArchetype; 5] = [
        DgArchetype::Box,
        DgArchetype::BoxCircle,
        DgArchetype::Triangle,
        DgArchetype::Trapezoid,
        DgArchetype::Pentagon,
    ];

    /// Build a unit at `bus` with rating `s` (per-unit) and cost `a p² + b p + c`.
    pub fn build(self, bus: usize, s: f64, cost: (f64, f64, f64)) -> DgUnit {
        let (q_lim, capability, s_max) = match self {
            DgArchetype::Box => (0.5 * s, vec![], None),
            DgArchetype::BoxCircle => (s, vec![], Some(s)),
            DgArchetype::Triangle => {
                (0.6 * s, vec![HalfPlane::new(-0.6, 1.0, 0.0), HalfPlane::new(-0.6, -1.0, 0.0)], None)
            }
            DgArchetype::Trapezoid => (
                0.6 * s,
                vec![HalfPlane::new(-0.4, 1.0, 0.2 * s), HalfPlane::new(-0.4, -1.0, 0.2 * s)],
                None,
            ),
            DgArchetype::Pentagon => (0.5 * s, vec![HalfPlane::new(1.0, 1.0, 1.2 * s)], None),
        };
        DgUnit {
            generator: Generator {
                bus,
                p_min: 0.0,
                p_max: s,
                q_min: -q_lim,
                q_max: q_lim,
                cost_a: cost.0,
                cost_b: cost.1,
                cost_c: cost.2,
            },
            capability,
            s_max,
        }
    }
}
