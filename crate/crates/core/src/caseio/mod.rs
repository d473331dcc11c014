//! Native case documents, MATPOWER import, and dataset files.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{BranchStatus, Network, NetworkData, NetworkError, PccLink};

mod dataset;
mod matpower;

pub use dataset::{read_dataset, write_dataset, DatasetFile, DatasetKind, DatasetRow};
pub use matpower::import_matpower;

pub const FORMAT_VERSION: &str = "1.0";

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("parse error at {path} (line {line}, column {column}): {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("unsupported format_version {0:?}, expected {FORMAT_VERSION:?}")]
    Version(String),
    #[error(transparent)]
    Semantic(#[from] NetworkError),
    #[error("{0}")]
    Link(String),
    #[error("matpower {matrix} row {row}: {message}")]
    Matpower { matrix: String, row: usize, message: String },
    #[error("matpower: {0}")]
    MatpowerFile(String),
    #[error("unsupported feature: {0}")]
    Unsupported(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Whether the document's network is a transmission system hosting coupling
/// points, or a distribution system described from behind its coupling point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseRole {
    Transmission,
    Distribution,
}

/// Data-generation settings. Defaults are one tenth of the paper-scale counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub n_bbps: usize,
    pub n_fds: usize,
    pub n_cost: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { n_bbps: 100, n_fds: 1000, n_cost: 100, seed: 1 }
    }
}

/// Implicit-polynomial fitting settings (volumetric shrink/grow factors and targets).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub degree: usize,
    pub gamma_in: f64,
    pub gamma_out: Vec<f64>,
    pub c_in: f64,
    pub c_bnd: f64,
    pub c_out: Vec<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { degree: 8, gamma_in: 0.999, gamma_out: vec![1.005, 1.07], c_in: -0.15, c_bnd: 0.0, c_out: vec![0.1, 0.2] }
    }
}

/// Benchmark sweep settings. Each trial multiplies every transmission
/// generator's linear cost coefficient by an independent draw from
/// `U[jitter_lo, jitter_hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub n_trials: usize,
    pub seed: u64,
    pub jitter_lo: f64,
    pub jitter_hi: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig { n_trials: 100, seed: 7, jitter_lo: 0.5, jitter_hi: 1.5 }
    }
}

/// Serialized shape of a case document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub format_version: String,
    pub role: CaseRole,
    pub network: NetworkData,
    #[serde(default)]
    pub pcc_links: Vec<PccLink>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkConfig>,
}

/// Validated case document.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseDocument {
    pub format_version: String,
    pub role: CaseRole,
    pub network: Network,
    pub pcc_links: Vec<PccLink>,
    pub sampling: Option<SamplingConfig>,
    pub fit: Option<FitConfig>,
    pub benchmark: Option<BenchmarkConfig>,
}

impl CaseDocument {
    pub fn new(role: CaseRole, network: Network, pcc_links: Vec<PccLink>) -> Result<Self, CaseError> {
        let doc = CaseDocument {
            format_version: FORMAT_VERSION.into(),
            role,
            network,
            pcc_links,
            sampling: None,
            fit: None,
            benchmark: None,
        };
        doc.check_links()?;
        Ok(doc)
    }

    fn check_links(&self) -> Result<(), CaseError> {
        let net = &self.network;
        for (k, link) in self.pcc_links.iter().enumerate() {
            if !(link.v_min <= link.v_max && link.v_min > 0.0) {
                return Err(CaseError::Link(format!("pcc_links[{k}]: invalid voltage band")));
            }
            match self.role {
                CaseRole::Transmission => {
                    if net.bus_index(link.ts_bus).is_none() {
                        return Err(NetworkError::DanglingBus { what: format!("pcc_links[{k}]"), bus: link.ts_bus }.into());
                    }
                    if !net.is_empty_bus(link.ts_bus) {
                        return Err(NetworkError::PccNotEmpty(link.ts_bus).into());
                    }
                    if self.pcc_links[..k].iter().any(|l| l.ts_bus == link.ts_bus) {
                        return Err(CaseError::Link(format!("pcc_links[{k}]: bus {} already hosts a coupling point", link.ts_bus)));
                    }
                }
                CaseRole::Distribution => {
                    if net.bus_index(link.ds_bus).is_none() {
                        return Err(NetworkError::DanglingBus { what: format!("pcc_links[{k}]"), bus: link.ds_bus }.into());
                    }
                    if link.ds_name != net.name() {
                        return Err(CaseError::Link(format!(
                            "pcc_links[{k}]: ds_name {:?} does not match network name {:?}",
                            link.ds_name,
                            net.name()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> CaseFile {
        CaseFile {
            format_version: self.format_version.clone(),
            role: self.role,
            network: self.network.to_data(),
            pcc_links: self.pcc_links.clone(),
            sampling: self.sampling.clone(),
            fit: self.fit.clone(),
            benchmark: self.benchmark.clone(),
        }
    }

    /// The coupling link of a distribution case.
    pub fn ds_link(&self) -> Result<&PccLink, CaseError> {
        match (self.role, self.pcc_links.as_slice()) {
            (CaseRole::Distribution, [link]) => Ok(link),
            _ => Err(CaseError::Link("expected a distribution case with exactly one pcc link".into())),
        }
    }
}

impl TryFrom<CaseFile> for CaseDocument {
    type Error = CaseError;

    fn try_from(f: CaseFile) -> Result<Self, CaseError> {
        if f.format_version != FORMAT_VERSION {
            return Err(CaseError::Version(f.format_version));
        }
        let mut doc = CaseDocument::new(f.role, Network::new(f.network)?, f.pcc_links)?;
        doc.sampling = f.sampling;
        doc.fit = f.fit;
        doc.benchmark = f.benchmark;
        Ok(doc)
    }
}

/// Deserialize JSON with a field path in the error.
pub fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, CaseError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        CaseError::Parse { path, line: inner.line(), column: inner.column(), message: inner.to_string() }
    })
}

pub fn parse_case(text: &str) -> Result<CaseDocument, CaseError> {
    from_json::<CaseFile>(text)?.try_into()
}

pub fn serialize_case(doc: &CaseDocument) -> String {
    // plain data with string keys cannot fail to serialize
    serde_json::to_string_pretty(&doc.to_file()).unwrap() + "\n"
}

pub fn read_case(path: &std::path::Path) -> Result<CaseDocument, CaseError> {
    parse_case(&std::fs::read_to_string(path)?)
}

/// Copy of `network` with the listed branches (1-based positions) closed.
pub fn close_normally_open(network: &Network, branch_ids: &[usize]) -> Result<Network, NetworkError> {
    let mut data = network.to_data();
    for &id in branch_ids {
        let br = id.checked_sub(1).and_then(|k| data.branches.get_mut(k)).ok_or(NetworkError::UnknownBranch(id))?;
        br.status = BranchStatus::Closed;
    }
    Network::new(data)
}
