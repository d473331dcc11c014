//! Power leaving one terminal of a π-model branch, with exact first and
//! second derivatives in the local variables `(θa, θb, va, vb)`.
//!
//! With own admittance `Gs + jBs`, mutual admittance `Gm + jBm` and
//! `δ = θa − θb`:
//!
//! ```text
//! P = va² Gs + va vb (Gm cos δ + Bm sin δ)
//! Q = −va² Bs + va vb (Gm sin δ − Bm cos δ)
//! ```

use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchEnd {
    /// Bus positions of this terminal and the opposite one.
    pub a: usize,
    pub b: usize,
    pub own: Complex64,
    pub mutual: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EndFlow {
    pub p: f64,
    pub q: f64,
    pub dp: [f64; 4],
    pub dq: [f64; 4],
    pub d2p: [[f64; 4]; 4],
    pub d2q: [[f64; 4]; 4],
}

impl BranchEnd {
    /// Both terminals of a branch from its stamp `[yff, yft, ytf, ytt]`.
    pub fn pair(f: usize, t: usize, stamp: [Complex64; 4]) -> [BranchEnd; 2] {
        let [yff, yft, ytf, ytt] = stamp;
        [BranchEnd { a: f, b: t, own: yff, mutual: yft }, BranchEnd { a: t, b: f, own: ytt, mutual: ytf }]
    }

    pub fn value(&self, th_a: f64, th_b: f64, va: f64, vb: f64) -> (f64, f64) {
        let (s, c) = (th_a - th_b).sin_cos();
        let (gs, bs, gm, bm) = (self.own.re, self.own.im, self.mutual.re, self.mutual.im);
        let a = gm * c + bm * s;
        let bq = gm * s - bm * c;
        (va * va * gs + va * vb * a, -va * va * bs + va * vb * bq)
    }

    pub fn eval(&self, th_a: f64, th_b: f64, va: f64, vb: f64) -> EndFlow {
        let (s, c) = (th_a - th_b).sin_cos();
        let (gs, bs, gm, bm) = (self.own.re, self.own.im, self.mutual.re, self.mutual.im);
        let a = gm * c + bm * s;
        let bq = gm * s - bm * c;
        let vv = va * vb;
        let p = va * va * gs + vv * a;
        let q = -va * va * bs + vv * bq;
        let dp = [-vv * bq, vv * bq, 2.0 * va * gs + vb * a, va * a];
        let dq = [vv * a, -vv * a, -2.0 * va * bs + vb * bq, va * bq];
        let d2p = [
            [-vv * a, vv * a, -vb * bq, -va * bq],
            [vv * a, -vv * a, vb * bq, va * bq],
            [-vb * bq, vb * bq, 2.0 * gs, a],
            [-va * bq, va * bq, a, 0.0],
        ];
        let d2q = [
            [-vv * bq, vv * bq, vb * a, va * a],
            [vv * bq, -vv * bq, -vb * a, -va * a],
            [vb * a, -vb * a, -2.0 * bs, bq],
            [va * a, -va * a, bq, 0.0],
        ];
        EndFlow { p, q, dp, dq, d2p, d2q }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::Branch;
    use proptest::prelude::*;

    fn complex_flow(end: &BranchEnd, x: [f64; 4]) -> (f64, f64) {
        let va = Complex64::from_polar(x[2], x[0]);
        let vb = Complex64::from_polar(x[3], x[1]);
        let s = va * (end.own * va + end.mutual * vb).conj();
        (s.re, s.im)
    }

    fn sample_end() -> BranchEnd {
        let mut br = Branch::line(1, 2, 0.02, 0.08);
        br.b_charge = 0.05;
        br.tap = 1.03;
        br.shift = 0.1;
        BranchEnd::pair(0, 1, br.pi_stamp())[0]
    }

    proptest! {
        #[test]
        fn matches_complex_power(ta in -0.5f64..0.5, tb in -0.5f64..0.5, va in 0.8f64..1.2, vb in 0.8f64..1.2, to_end in any::<bool>()) {
            let mut br = Branch::line(1, 2, 0.02, 0.08);
            br.b_charge = 0.05;
            br.tap = 0.97;
            br.shift = -0.2;
            let end = BranchEnd::pair(0, 1, br.pi_stamp())[to_end as usize];
            let (p, q) = end.value(ta, tb, va, vb);
            let (pc, qc) = complex_flow(&end, [ta, tb, va, vb]);
            prop_assert!((p - pc).abs() < 1e-12 && (q - qc).abs() < 1e-12);
        }

        #[test]
        fn derivatives_match_central_differences(ta in -0.5f64..0.5, tb in -0.5f64..0.5, va in 0.8f64..1.2, vb in 0.8f64..1.2) {
            let end = sample_end();
            let x = [ta, tb, va, vb];
            let f = end.eval(ta, tb, va, vb);
            let h = 1e-6;
            for k in 0..4 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let fp = end.eval(xp[0], xp[1], xp[2], xp[3]);
                let fm = end.eval(xm[0], xm[1], xm[2], xm[3]);
                prop_assert!(((fp.p - fm.p) / (2.0 * h) - f.dp[k]).abs() < 1e-6);
                prop_assert!(((fp.q - fm.q) / (2.0 * h) - f.dq[k]).abs() < 1e-6);
                for j in 0..4 {
                    prop_assert!(((fp.dp[j] - fm.dp[j]) / (2.0 * h) - f.d2p[k][j]).abs() < 1e-5);
                    prop_assert!(((fp.dq[j] - fm.dq[j]) / (2.0 * h) - f.d2q[k][j]).abs() < 1e-5);
                }
            }
        }
    }
}
