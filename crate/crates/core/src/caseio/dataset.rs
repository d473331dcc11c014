//! CSV datasets of coupling points, in MW / MVAr / p.u.
//!
//! Values are written in Rust's shortest round-trip decimal form, so reading a
//! written file reproduces every `f64` bit for bit.

use super::CaseError;

const BOUNDARY_HEADER: [&str; 5] = ["p_MW", "q_MVAr", "v_pu", "source", "seed"];
const COST_HEADER: [&str; 6] = ["p_MW", "q_MVAr", "v_pu", "cost_per_h", "source", "seed"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Boundary,
    Cost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub p_mw: f64,
    pub q_mvar: f64,
    pub v_pu: f64,
    /// Present iff the dataset kind is `Cost`.
    pub cost: Option<f64>,
    /// Name of the generator that produced the row (`bbps`, `fds`, `lhs`, ...).
    pub source: String,
    pub seed: u64,
}

impl DatasetRow {
    pub fn point(&self) -> [f64; 3] {
        [self.p_mw, self.q_mvar, self.v_pu]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub kind: DatasetKind,
    pub rows: Vec<DatasetRow>,
}

impl DatasetFile {
    pub fn points(&self) -> Vec<[f64; 3]> {
        self.rows.iter().map(DatasetRow::point).collect()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.cost).collect()
    }
}

fn err(msg: impl Into<String>) -> CaseError {
    CaseError::Dataset(msg.into())
}

pub fn write_dataset(d: &DatasetFile) -> Result<String, CaseError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |e: csv::Error| err(e.to_string());
    match d.kind {
        DatasetKind::Boundary => w.write_record(BOUNDARY_HEADER),
        DatasetKind::Cost => w.write_record(COST_HEADER),
    }
    .map_err(csv_err)?;
    for (k, r) in d.rows.iter().enumerate() {
        let mut values = vec![r.p_mw, r.q_mvar, r.v_pu];
        match (d.kind, r.cost) {
            (DatasetKind::Boundary, None) => {}
            (DatasetKind::Cost, Some(c)) => values.push(c),
            _ => return Err(err(format!("row {}: cost column does not match dataset kind", k + 1))),
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err(format!("row {}: non-finite value", k + 1)));
        }
        if r.source.is_empty() || r.source.contains([',', '"', '\n', '\r']) {
            return Err(err(format!("row {}: invalid source tag {:?}", k + 1, r.source)));
        }
        let mut rec: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        rec.push(r.source.clone());
        rec.push(r.seed.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| err(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is ascii"))
}

pub fn read_dataset(text: &str) -> Result<DatasetFile, CaseError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| err(e.to_string()))?.clone();
    let names: Vec<&str> = header.iter().collect();
    let kind = if names == BOUNDARY_HEADER {
        DatasetKind::Boundary
    } else if names == COST_HEADER {
        DatasetKind::Cost
    } else {
        return Err(err(format!(
            "header {names:?} matches neither boundary {BOUNDARY_HEADER:?} nor cost {COST_HEADER:?}"
        )));
    };
    let n_num = if kind == DatasetKind::Cost { 4 } else { 3 };
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| err(format!("line {line}: {e}")))?;
        if rec.len() != n_num + 2 {
            return Err(err(format!("line {line}: expected {} fields, found {}", n_num + 2, rec.len())));
        }
        let mut v = [0.0; 4];
        for (j, slot) in v.iter_mut().enumerate().take(n_num) {
            let x: f64 = rec[j].parse().map_err(|_| err(format!("line {line}: bad number {:?}", &rec[j])))?;
            if !x.is_finite() {
                return Err(err(format!("line {line}: non-finite value")));
            }
            *slot = x;
        }
        let seed = rec[n_num + 1].parse().map_err(|_| err(format!("line {line}: bad seed {:?}", &rec[n_num + 1])))?;
        rows.push(DatasetRow {
            p_mw: v[0],
            q_mvar: v[1],
            v_pu: v[2],
            cost: (kind == DatasetKind::Cost).then_some(v[3]),
            source: rec[n_num].to_string(),
            seed,
        });
    }
    Ok(DatasetFile { kind, rows })
}
