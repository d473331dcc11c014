use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::Network;

/// Bus admittance matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
}

impl AdmittanceMatrix {
    fn from_rows(rows: Vec<BTreeMap<usize, Complex64>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let (mut cols, mut vals) = (Vec::new(), Vec::new());
        row_ptr.push(0);
        for row in rows {
            for (j, y) in row {
                cols.push(j);
                vals.push(y);
            }
            row_ptr.push(cols.len());
        }
        AdmittanceMatrix { n, row_ptr, cols, vals }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.row(i).find(|&(c, _)| c == j).map_or(Complex64::new(0.0, 0.0), |(_, y)| y)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::from_element(self.n, self.n, Complex64::new(0.0, 0.0));
        for i in 0..self.n {
            for (j, y) in self.row(i) {
                m[(i, j)] = y;
            }
        }
        m
    }

    /// Complex current injections `I = Y V`.
    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.n).map(|i| self.row(i).map(|(j, y)| y * v[j]).sum()).collect()
    }

    /// Net bus power injections `S = V conj(Y V)` for polar voltages.
    pub fn injections(&self, vm: &[f64], va: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let v: Vec<Complex64> = vm.iter().zip(va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
        let i = self.mul_vec(&v);
        v.iter().zip(&i).map(|(v, i)| v * i.conj()).map(|s| (s.re, s.im)).unzip()
    }
}

/// Build the bus admittance matrix from π-model branch stamps and bus shunts.
/// Open branches contribute nothing.
pub fn build_admittance(network: &Network) -> AdmittanceMatrix {
    let n = network.n_buses();
    let mut rows = vec![BTreeMap::<usize, Complex64>::new(); n];
    for (i, bus) in network.buses().iter().enumerate() {
        if bus.gs != 0.0 || bus.bs != 0.0 {
            *rows[i].entry(i).or_default() += Complex64::new(bus.gs, bus.bs);
        }
    }
    for br in network.branches().iter().filter(|b| b.is_closed()) {
        // bus references were resolved at construction
        let f = network.bus_index(br.from_bus).unwrap();
        let t = network.bus_index(br.to_bus).unwrap();
        let [yff, yft, ytf, ytt] = br.pi_stamp();
        *rows[f].entry(f).or_default() += yff;
        *rows[f].entry(t).or_default() += yft;
        *rows[t].entry(f).or_default() += ytf;
        *rows[t].entry(t).or_default() += ytt;
    }
    AdmittanceMatrix::from_rows(rows)
}
