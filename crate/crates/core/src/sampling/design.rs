//! Space-filling designs: Latin hypercubes, box-facet designs and the
//! Fibonacci sphere lattice.

use rand::distr::Open01;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BoundingBox;

/// Generator for stream `stream` of `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Latin hypercube draw from an existing generator.
pub fn lhs_with<R: Rng>(rng: &mut R, n: usize, lo: &[f64], hi: &[f64]) -> Vec<Vec<f64>> {
    assert_eq!(lo.len(), hi.len(), "bound dimensions differ");
    let dim = lo.len();
    let mut out = vec![vec![0.0; dim]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for d in 0..dim {
        perm.shuffle(rng);
        for (row, &stratum) in out.iter_mut().zip(&perm) {
            let u: f64 = rng.sample(Open01);
            row[d] = lo[d] + (hi[d] - lo[d]) * (stratum as f64 + u) / n as f64;
        }
    }
    out
}

/// `n` points with exactly one point in each of the `n` equal strata of every dimension.
pub fn lhs(n: usize, lo: &[f64], hi: &[f64], seed: u64) -> Vec<Vec<f64>> {
    lhs_with(&mut seeded_rng(seed, 0), n, lo, hi)
}

/// Facet `f` fixes axis `f / 2` at its minimum (even `f`) or maximum (odd `f`).
pub const N_FACETS: usize = 6;

/// Deterministic smooth weighted round-robin: facet of each of `n` draws.
pub fn facet_schedule(n: usize, weights: [f64; N_FACETS]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let mut current = [0.0; N_FACETS];
    (0..n)
        .map(|_| {
            for f in 0..N_FACETS {
                current[f] += weights[f];
            }
            let best = (0..N_FACETS).fold(0, |b, f| if current[f] > current[b] { f } else { b });
            current[best] -= total;
            best
        })
        .collect()
}

/// `n` points on the facets of `bx`. Facets are visited by weighted
/// round-robin with weights equal to their areas after dividing each axis by
/// `scale`; the free coordinates on each facet form a Latin hypercube.
pub fn lhs_on_facets(n: usize, bx: &BoundingBox, scale: [f64; 3], seed: u64) -> Vec<[f64; 3]> {
    let lo = bx.lo();
    let hi = bx.hi();
    let w: Vec<f64> = (0..3).map(|k| (hi[k] - lo[k]) / scale[k]).collect();
    let mut weights = [0.0; N_FACETS];
    for f in 0..N_FACETS {
        let axis = f / 2;
        weights[f] = (0..3).filter(|&k| k != axis).map(|k| w[k]).product();
    }
    let schedule = facet_schedule(n, weights);
    let mut counts = [0usize; N_FACETS];
    for &f in &schedule {
        counts[f] += 1;
    }
    let designs: Vec<Vec<Vec<f64>>> = (0..N_FACETS)
        .map(|f| {
            let axis = f / 2;
            let free: Vec<usize> = (0..3).filter(|&k| k != axis).collect();
            let flo: Vec<f64> = free.iter().map(|&k| lo[k]).collect();
            let fhi: Vec<f64> = free.iter().map(|&k| hi[k]).collect();
            lhs_with(&mut seeded_rng(seed, 1 + f as u64), counts[f], &flo, &fhi)
        })
        .collect();
    let mut next = [0usize; N_FACETS];
    schedule
        .iter()
        .map(|&f| {
            let axis = f / 2;
            let row = &designs[f][next[f]];
            next[f] += 1;
            let mut x = [0.0; 3];
            let mut it = row.iter();
            for k in 0..3 {
                x[k] = if k == axis {
                    if f % 2 == 0 {
                        lo[k]
                    } else {
                        hi[k]
                    }
                } else {
                    *it.next().unwrap()
                };
            }
            x
        })
        .collect()
}

/// Golden angle `π(3 − √5)`.
pub fn golden_angle() -> f64 {
    std::f64::consts::PI * (3.0 - 5f64.sqrt())
}

/// Fibonacci lattice on the unit sphere: `z = 1 − (2k+1)/n`, `θ = φk`.
pub fn fibonacci_directions(n: usize) -> Vec<[f64; 3]> {
    let phi = golden_angle();
    (0..n)
        .map(|k| {
            let z = 1.0 - (2 * k + 1) as f64 / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let (s, c) = (phi * k as f64).sin_cos();
            [r * c, r * s, z]
        })
        .collect()
}
