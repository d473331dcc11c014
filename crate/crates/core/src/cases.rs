//! Bundled desk-scale cases.
//!
//! * `ts9`: the 9-bus transmission case with coupling points at its three
//!   empty buses 4, 6 and 8.
//! * `ds33`: the 33-bus distribution feeder with all five tie lines closed,
//!   the substation generator removed and five DGs, one per capability preset.

use crate::caseio::{import_matpower, CaseDocument, CaseError, CaseRole, FitConfig, SamplingConfig, BenchmarkConfig};
use crate::netmodel::{DgArchetype, Interconnect, Network, Orientation, PccLink};

pub const CASE9_M: &str = include_str!("../cases/case9.m");
pub const CASE30_M: &str = include_str!("../cases/case30.m");
pub const CASE33BW_M: &str = include_str!("../cases/case33bw.m");

pub const DS33_NAME: &str = "ds33";
pub const TS9_PCC_BUSES: [usize; 3] = [4, 6, 8];
/// Tie lines of the 33-bus feeder, as 1-based branch positions.
pub const CASE33_TIES: [usize; 5] = [33, 34, 35, 36, 37];

/// DG placement on the 33-bus feeder: bus, preset, rating (MW), cost a ($/MW²h), b ($/MWh).
pub const DS33_DGS: [(usize, DgArchetype, f64, f64, f64); 5] = [
    (14, DgArchetype::Box, 1.0, 8.0, 18.0),
    (18, DgArchetype::BoxCircle, 0.8, 6.0, 22.0),
    (22, DgArchetype::Triangle, 1.0, 10.0, 15.0),
    (25, DgArchetype::Trapezoid, 1.2, 5.0, 25.0),
    (33, DgArchetype::Pentagon, 0.8, 7.0, 20.0),
];

pub fn case9() -> Network {
    import_matpower(CASE9_M).expect("bundled case9 is valid")
}

pub fn case30() -> Network {
    import_matpower(CASE30_M).expect("bundled case30 is valid")
}

pub fn case33bw() -> Network {
    import_matpower(CASE33BW_M).expect("bundled case33bw is valid")
}

/// Coupling link used for every bundled DS attachment.
pub fn ds33_link(ts_bus: usize) -> PccLink {
    PccLink {
        ts_bus,
        ds_name: DS33_NAME.into(),
        ds_bus: 1,
        interconnect: Interconnect { r: 0.005, x: 0.05, b_charge: 0.0, tap: 1.0, shift: 0.0, rating: 0.5 },
        v_min: 0.95,
        v_max: 1.05,
        orientation: Orientation::DsToTs,
    }
}

pub fn ds33_network() -> Network {
    let meshed = crate::caseio::close_normally_open(&case33bw(), &CASE33_TIES).expect("tie ids exist");
    let mut data = meshed.to_data();
    data.name = DS33_NAME.into();
    data.generators.clear();
    let root = &mut data.buses[0];
    (root.v_min, root.v_max) = (0.9, 1.1);
    let base = data.base_mva;
    data.dgs = DS33_DGS
        .iter()
        .map(|&(bus, kind, mw, a, b)| kind.build(bus, mw / base, (a * base * base, b * base, 0.0)))
        .collect();
    Network::new(data).expect("ds33 is valid")
}

pub fn ds33() -> CaseDocument {
    let mut doc = CaseDocument::new(CaseRole::Distribution, ds33_network(), vec![ds33_link(TS9_PCC_BUSES[0])])
        .expect("ds33 link is valid");
    doc.sampling = Some(SamplingConfig::default());
    doc.fit = Some(FitConfig::default());
    doc
}

pub fn ts9() -> CaseDocument {
    let mut net = case9().to_data();
    net.name = "ts9".into();
    let links = TS9_PCC_BUSES.iter().map(|&b| ds33_link(b)).collect();
    let mut doc = CaseDocument::new(CaseRole::Transmission, Network::new(net).expect("ts9 is valid"), links)
        .expect("ts9 links are valid");
    doc.benchmark = Some(BenchmarkConfig::default());
    doc
}

/// Look up a bundled case document by name (`ts9`, `ds33`).
pub fn by_name(name: &str) -> Option<CaseDocument> {
    match name {
        "ts9" => Some(ts9()),
        "ds33" => Some(ds33()),
        _ => None,
    }
}

/// Resolve `spec` as a bundled case name or a path to a native JSON case.
pub fn load(spec: &str) -> Result<CaseDocument, CaseError> {
    match by_name(spec) {
        Some(doc) => Ok(doc),
        None => crate::caseio::read_case(std::path::Path::new(spec)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caseio::{parse_case, serialize_case};

    #[test]
    fn case30_counts() {
        let net = case30();
        assert_eq!((net.n_buses(), net.branches().len(), net.generators().len()), (30, 41, 6));
    }

    #[test]
    fn ds33_is_meshed() {
        let raw = case33bw();
        assert_eq!(raw.branches().iter().filter(|b| b.is_closed()).count(), 32);
        let net = ds33_network();
        assert_eq!(net.branches().iter().filter(|b| b.is_closed()).count(), 37);
        assert_eq!(net.dgs().len(), 5);
        assert!(net.generators().is_empty());
        let (p, _) = net.total_load();
        assert!((p * net.base_mva() - 3.715).abs() < 1e-9);
    }

    #[test]
    fn bundled_documents_round_trip() {
        for doc in [ds33(), ts9()] {
            assert_eq!(parse_case(&serialize_case(&doc)).unwrap(), doc);
        }
    }

    /// Set `PQVFLEX_BLESS=1` to regenerate the JSON files.
    #[test]
    fn json_files_match_builders() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("cases");
        for name in ["ds33", "ts9"] {
            let path = dir.join(format!("{name}.json"));
            let fresh = serialize_case(&by_name(name).unwrap());
            if std::env::var_os("PQVFLEX_BLESS").is_some() {
                std::fs::write(&path, &fresh).unwrap();
            }
            assert_eq!(std::fs::read_to_string(&path).unwrap(), fresh, "{name}.json is stale");
        }
    }
}
