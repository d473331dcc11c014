//! Trivariate monomial bases in graded lexicographic order.

use std::collections::HashMap;

use nalgebra::DMatrix;

/// Bijection between exponent triplets `(α, β, θ)` with `α + β + θ <= degree`
/// and column indices. Ordering: ascending total degree, then ascending
/// lexicographic on `(α, β, θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonomialIndexMap {
    degree: usize,
    exps: Vec<[u32; 3]>,
    index: HashMap<[u32; 3], usize>,
}

/// `C(d + 3, 3)`.
pub fn n_terms(degree: usize) -> usize {
    (degree + 1) * (degree + 2) * (degree + 3) / 6
}

impl MonomialIndexMap {
    pub fn new(degree: usize) -> Self {
        let mut exps = Vec::with_capacity(n_terms(degree));
        for t in 0..=degree as u32 {
            for a in 0..=t {
                for b in 0..=t - a {
                    exps.push([a, b, t - a - b]);
                }
            }
        }
        let index = exps.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        MonomialIndexMap { degree, exps, index }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn exponents(&self, i: usize) -> [u32; 3] {
        self.exps[i]
    }

    pub fn index_of(&self, e: [u32; 3]) -> Option<usize> {
        self.index.get(&e).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = [u32; 3]> + '_ {
        self.exps.iter().copied()
    }

    fn powers(&self, z: [f64; 3]) -> [Vec<f64>; 3] {
        z.map(|zk| {
            let mut p = vec![1.0; self.degree + 1];
            for e in 1..=self.degree {
                p[e] = p[e - 1] * zk;
            }
            p
        })
    }

    /// Every monomial evaluated at `z`.
    pub fn row(&self, z: [f64; 3]) -> Vec<f64> {
        let pw = self.powers(z);
        self.exps.iter().map(|e| pw[0][e[0] as usize] * pw[1][e[1] as usize] * pw[2][e[2] as usize]).collect()
    }

    /// `Σ c_s m_s(z)` with its gradient and Hessian in `z`.
    pub fn eval(&self, coeffs: &[f64], z: [f64; 3]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
        let pw = self.powers(z);
        let p = |k: usize, e: u32, d: u32| -> f64 {
            if e < d {
                return 0.0;
            }
            let fall: u32 = (0..d).map(|j| e - j).product();
            fall as f64 * pw[k][(e - d) as usize]
        };
        let mut value = 0.0;
        let mut grad = [0.0; 3];
        let mut hess = [[0.0; 3]; 3];
        for (c, e) in coeffs.iter().zip(&self.exps) {
            if *c == 0.0 {
                continue;
            }
            let f0 = [p(0, e[0], 0), p(1, e[1], 0), p(2, e[2], 0)];
            let f1 = [p(0, e[0], 1), p(1, e[1], 1), p(2, e[2], 1)];
            let f2 = [p(0, e[0], 2), p(1, e[1], 2), p(2, e[2], 2)];
            value += c * f0[0] * f0[1] * f0[2];
            for a in 0..3 {
                let others: f64 = (0..3).filter(|&k| k != a).map(|k| f0[k]).product();
                grad[a] += c * f1[a] * others;
                hess[a][a] += c * f2[a] * others;
                for b in a + 1..3 {
                    let rest = f0[3 - a - b];
                    let h = c * f1[a] * f1[b] * rest;
                    hess[a][b] += h;
                    hess[b][a] += h;
                }
            }
        }
        (value, grad, hess)
    }
}

/// Entry `(l, s)` is monomial `s` evaluated at point `l`.
pub fn monomial_matrix(points: &[[f64; 3]], map: &MonomialIndexMap) -> DMatrix<f64> {
    let k = map.len();
    let mut m = DMatrix::zeros(points.len(), k);
    for (l, &z) in points.iter().enumerate() {
        for (s, v) in map.row(z).into_iter().enumerate() {
            m[(l, s)] = v;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn degree_one_order_and_row() {
        let map = MonomialIndexMap::new(1);
        let m = monomial_matrix(&[[2.0, 3.0, 4.0]], &map);
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 4.0, 3.0, 2.0]);
    }

    #[test]
    fn term_counts() {
        assert_eq!(MonomialIndexMap::new(8).len(), 165);
        assert_eq!(MonomialIndexMap::new(2).len(), 10);
        assert_eq!(n_terms(0), 1);
    }

    #[test]
    fn map_is_a_bijection_up_to_degree_twelve() {
        for d in 0..=12 {
            let map = MonomialIndexMap::new(d);
            assert_eq!(map.len(), n_terms(d));
            for i in 0..map.len() {
                let e = map.exponents(i);
                assert!(e.iter().sum::<u32>() as usize <= d);
                assert_eq!(map.index_of(e), Some(i));
            }
            let mut sorted: Vec<[u32; 3]> = map.iter().collect();
            sorted.sort_by_key(|e| (e.iter().sum::<u32>(), *e));
            assert_eq!(sorted, map.iter().collect::<Vec<_>>());
        }
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(
            coeffs in proptest::collection::vec(-1.0f64..1.0, 35),
            z in proptest::array::uniform3(-1.5f64..1.5),
        ) {
            let map = MonomialIndexMap::new(4);
            let (_, g, h) = map.eval(&coeffs, z);
            let step = 1e-5;
            for a in 0..3 {
                let mut zp = z;
                let mut zm = z;
                zp[a] += step;
                zm[a] -= step;
                let (fp, gp, _) = map.eval(&coeffs, zp);
                let (fm, gm, _) = map.eval(&coeffs, zm);
                let fd = (fp - fm) / (2.0 * step);
                prop_assert!((fd - g[a]).abs() <= 1e-6 * (1.0 + g[a].abs()));
                for b in 0..3 {
                    let fd = (gp[b] - gm[b]) / (2.0 * step);
                    prop_assert!((fd - h[a][b]).abs() <= 1e-5 * (1.0 + h[a][b].abs()));
                }
            }
        }
    }
}
