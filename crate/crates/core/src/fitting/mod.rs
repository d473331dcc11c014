//! Analytical surrogates of a distribution system seen from its coupling
//! point: an implicit polynomial whose negative sublevel set approximates the
//! feasible operating region, and a quadratic cost model.
//!
//! Both models take `(p, q, v)` in MW, MVAr and p.u., z-score them with the
//! stored normalization and evaluate a polynomial in graded lexicographic
//! monomial order.

use log::warn;
use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caseio::FitConfig;
use crate::nlopt::{CouplingPoint, PqvFunction};

mod monomial;

pub use monomial::{monomial_matrix, n_terms, MonomialIndexMap};

/// Configuration of the volumetric implicit-polynomial fit.
pub type VolumetricFitConfig = FitConfig;

/// Relative singular-value cutoff of the pseudoinverse.
pub const PINV_CUTOFF: f64 = 1e-12;
/// Relative margin around the training domain before evaluations count as extrapolation.
pub const EXTRAPOLATION_MARGIN: f64 = 0.2;
pub const SIGMA_ORDER: &str = "grlex";
pub const COST_DEGREE: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("invalid fit configuration: {0}")]
    Config(String),
    #[error("{what} needs at least {need} rows, got {got}")]
    TooFewRows { what: &'static str, need: usize, got: usize },
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("model file: {0}")]
    Format(String),
}

/// Per-axis affine map `z = (x − mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization { mean: [0.0; 3], std: [1.0; 3] }
    }

    /// Population mean and standard deviation of `points`.
    pub fn from_points(points: &[[f64; 3]]) -> Result<Self, FitError> {
        if points.is_empty() {
            return Err(FitError::TooFewRows { what: "normalization", need: 1, got: 0 });
        }
        let n = points.len() as f64;
        let mean = [0, 1, 2].map(|k| points.iter().map(|x| x[k]).sum::<f64>() / n);
        let std = [0, 1, 2].map(|k| (points.iter().map(|x| (x[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt());
        for (k, name) in ["p", "q", "v"].iter().enumerate() {
            if !(std[k] > 1e-12 * (1.0 + mean[k].abs())) {
                return Err(FitError::Degenerate(format!("axis {name} is constant across the data")));
            }
        }
        Ok(Normalization { mean, std })
    }

    pub fn valid(&self) -> bool {
        self.mean.iter().all(|m| m.is_finite()) && self.std.iter().all(|s| s.is_finite() && *s > 0.0)
    }

    pub fn apply(&self, x: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|k| (x[k] - self.mean[k]) / self.std[k])
    }

    pub fn invert(&self, z: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|k| self.mean[k] + z[k] * self.std[k])
    }

    /// The same transform for inputs expressed in units `factor` times larger.
    pub fn rescaled(&self, factor: [f64; 3]) -> Self {
        Normalization {
            mean: [0, 1, 2].map(|k| self.mean[k] / factor[k]),
            std: [0, 1, 2].map(|k| self.std[k] / factor[k]),
        }
    }
}

/// Minimum-norm least-squares solution via SVD.
#[derive(Debug, Clone, PartialEq)]
pub struct LstsqSolution {
    pub x: DVector<f64>,
    pub rank: usize,
    pub residual: f64,
}

/// `M⁺ b` with singular values below `PINV_CUTOFF · σ_max` treated as zero.
pub fn pinv_solve(m: &DMatrix<f64>, b: &DVector<f64>) -> LstsqSolution {
    let svd = m.clone().svd(true, true);
    let (u, vt) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let smax = svd.singular_values.max();
    let utb = u.tr_mul(b);
    let mut y = DVector::zeros(vt.nrows());
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > PINV_CUTOFF * smax && s > 0.0 {
            y[i] = utb[i] / s;
            rank += 1;
        }
    }
    let x = vt.tr_mul(&y);
    let residual = (m * &x - b).norm();
    LstsqSolution { x, rank, residual }
}

/// Inward and outward copies of a boundary dataset, scaled about its centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumetricSets {
    pub centroid: [f64; 3],
    pub inner: Vec<[f64; 3]>,
    pub outer: Vec<Vec<[f64; 3]>>,
}

fn scale_about(c: [f64; 3], gamma: f64, pts: &[[f64; 3]]) -> Vec<[f64; 3]> {
    pts.iter().map(|x| [0, 1, 2].map(|k| c[k] + gamma * (x[k] - c[k]))).collect()
}

pub fn generate_volumetric_sets(boundary: &[[f64; 3]], cfg: &VolumetricFitConfig) -> Result<VolumetricSets, FitError> {
    if boundary.is_empty() {
        return Err(FitError::TooFewRows { what: "volumetric sets", need: 1, got: 0 });
    }
    let n = boundary.len() as f64;
    let centroid = [0, 1, 2].map(|k| boundary.iter().map(|x| x[k]).sum::<f64>() / n);
    Ok(VolumetricSets {
        centroid,
        inner: scale_about(centroid, cfg.gamma_in, boundary),
        outer: cfg.gamma_out.iter().map(|&g| scale_about(centroid, g, boundary)).collect(),
    })
}

fn check_config(cfg: &VolumetricFitConfig) -> Result<(), FitError> {
    let bad = |m: &str| Err(FitError::Config(m.into()));
    if !(cfg.gamma_in > 0.0 && cfg.gamma_in < 1.0) {
        return bad("gamma_in must lie in (0, 1)");
    }
    if cfg.gamma_out.is_empty() || cfg.gamma_out.len() != cfg.c_out.len() {
        return bad("gamma_out and c_out need the same non-zero length");
    }
    if cfg.gamma_out.iter().any(|g| !(*g > 1.0)) {
        return bad("every gamma_out must exceed 1");
    }
    if !(cfg.c_in < 0.0) || cfg.c_out.iter().any(|c| !(*c > 0.0)) {
        return bad("c_in must be negative and every c_out positive");
    }
    if !cfg.c_bnd.is_finite() {
        return bad("c_bnd must be finite");
    }
    Ok(())
}

fn domain_of(points: &[[f64; 3]]) -> [[f64; 3]; 2] {
    let mut d = [[f64::INFINITY; 3], [f64::NEG_INFINITY; 3]];
    for x in points {
        for k in 0..3 {
            d[0][k] = d[0][k].min(x[k]);
            d[1][k] = d[1][k].max(x[k]);
        }
    }
    d
}

fn outside(domain: &[[f64; 3]; 2], x: [f64; 3]) -> bool {
    (0..3).any(|k| {
        let m = EXTRAPOLATION_MARGIN * (domain[1][k] - domain[0][k]);
        x[k] < domain[0][k] - m || x[k] > domain[1][k] + m
    })
}

fn chain(norm: &Normalization, g: [f64; 3], h: [[f64; 3]; 3], scale: f64) -> ([f64; 3], [[f64; 3]; 3]) {
    let s = norm.std;
    let grad = [0, 1, 2].map(|a| scale * g[a] / s[a]);
    let hess = [0, 1, 2].map(|a| [0, 1, 2].map(|b| scale * h[a][b] / (s[a] * s[b])));
    (grad, hess)
}

/// Implicit polynomial `FOR(x)`: negative inside the region, positive outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct ImplicitPolynomial {
    pub map: MonomialIndexMap,
    pub coeffs: Vec<f64>,
    pub normalization: Normalization,
    /// Component-wise extent of the training boundary data.
    pub domain: [[f64; 3]; 2],
}

/// Value and gradient of the region model at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForValue {
    pub value: f64,
    pub gradient: [f64; 3],
    /// The point lies more than 20% of the training extent outside it on some axis.
    pub extrapolated: bool,
}

impl ForValue {
    pub fn inside(&self) -> bool {
        self.value <= 0.0
    }
}

impl ImplicitPolynomial {
    /// A model equal to `c` everywhere.
    pub fn constant(c: f64) -> Self {
        ImplicitPolynomial {
            map: MonomialIndexMap::new(0),
            coeffs: vec![c],
            normalization: Normalization::identity(),
            domain: [[f64::NEG_INFINITY; 3], [f64::INFINITY; 3]],
        }
    }

    pub fn degree(&self) -> usize {
        self.map.degree()
    }

    /// The same function of inputs measured in units `factor` times larger.
    pub fn rescaled(&self, factor: [f64; 3]) -> Self {
        let d = self.domain;
        ImplicitPolynomial {
            normalization: self.normalization.rescaled(factor),
            domain: [[0, 1, 2].map(|k| d[0][k] / factor[k]), [0, 1, 2].map(|k| d[1][k] / factor[k])],
            ..self.clone()
        }
    }
}

impl PqvFunction for ImplicitPolynomial {
    fn value(&self, x: [f64; 3]) -> f64 {
        self.map.eval(&self.coeffs, self.normalization.apply(x)).0
    }
    fn gradient(&self, x: [f64; 3]) -> [f64; 3] {
        let (_, g, h) = self.map.eval(&self.coeffs, self.normalization.apply(x));
        chain(&self.normalization, g, h, 1.0).0
    }
    fn hessian(&self, x: [f64; 3]) -> [[f64; 3]; 3] {
        let (_, g, h) = self.map.eval(&self.coeffs, self.normalization.apply(x));
        chain(&self.normalization, g, h, 1.0).1
    }
}

pub fn eval_for(model: &ImplicitPolynomial, x: CouplingPoint) -> ForValue {
    let x = x.to_array();
    let (value, g, h) = model.map.eval(&model.coeffs, model.normalization.apply(x));
    ForValue { value, gradient: chain(&model.normalization, g, h, 1.0).0, extrapolated: outside(&model.domain, x) }
}

/// Diagnostics of a least-squares fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub rows: usize,
    pub terms: usize,
    pub rank: usize,
    /// Fewer stacked rows than monomial terms.
    pub underdetermined: bool,
    /// `‖M a − b‖₂` of the stacked system.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForFit {
    pub model: ImplicitPolynomial,
    pub report: FitReport,
    pub sets: VolumetricSets,
}

/// Stacked volumetric system for `boundary` in normalized coordinates.
pub fn volumetric_system(
    boundary: &[[f64; 3]],
    sets: &VolumetricSets,
    cfg: &VolumetricFitConfig,
    norm: &Normalization,
    map: &MonomialIndexMap,
) -> (DMatrix<f64>, DVector<f64>) {
    let mut blocks: Vec<(&[[f64; 3]], f64)> = vec![(&sets.inner, cfg.c_in), (boundary, cfg.c_bnd)];
    for (pts, &c) in sets.outer.iter().zip(&cfg.c_out) {
        blocks.push((pts, c));
    }
    let rows: Vec<[f64; 3]> = blocks.iter().flat_map(|(p, _)| p.iter().map(|&x| norm.apply(x))).collect();
    let b: Vec<f64> = blocks.iter().flat_map(|(p, c)| std::iter::repeat_n(*c, p.len())).collect();
    (monomial_matrix(&rows, map), DVector::from_vec(b))
}

fn check_coplanar(z: &[[f64; 3]]) -> Result<(), FitError> {
    let n = z.len() as f64;
    let mean = [0, 1, 2].map(|k| z.iter().map(|x| x[k]).sum::<f64>() / n);
    let mut cov = Matrix3::<f64>::zeros();
    for x in z {
        for a in 0..3 {
            for b in 0..3 {
                cov[(a, b)] += (x[a] - mean[a]) * (x[b] - mean[b]) / n;
            }
        }
    }
    let ev = cov.symmetric_eigenvalues();
    if ev.min() <= 1e-10 * ev.max() {
        return Err(FitError::Degenerate("boundary points are coplanar, the region has no volume".into()));
    }
    Ok(())
}

/// Fit the region model to boundary samples with inward and outward copies
/// carrying the signed targets of `cfg`.
pub fn fit_for(boundary: &[[f64; 3]], cfg: &VolumetricFitConfig) -> Result<ForFit, FitError> {
    check_config(cfg)?;
    if boundary.iter().flatten().any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite("boundary data"));
    }
    let norm = Normalization::from_points(boundary)?;
    let z: Vec<[f64; 3]> = boundary.iter().map(|&x| norm.apply(x)).collect();
    check_coplanar(&z)?;
    let map = MonomialIndexMap::new(cfg.degree);
    let sets = generate_volumetric_sets(boundary, cfg)?;
    let (m, b) = volumetric_system(boundary, &sets, cfg, &norm, &map);
    let underdetermined = m.nrows() < map.len();
    if underdetermined {
        warn!("region fit is under-determined: {} rows for {} terms", m.nrows(), map.len());
    }
    let sol = pinv_solve(&m, &b);
    if sol.x.iter().any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite("region coefficients"));
    }
    let report = FitReport { rows: m.nrows(), terms: map.len(), rank: sol.rank, underdetermined, residual: sol.residual };
    let model = ImplicitPolynomial { map, coeffs: sol.x.iter().copied().collect(), normalization: norm, domain: domain_of(boundary) };
    Ok(ForFit { model, report, sets })
}

/// Trivariate quadratic cost `C(x) = offset + scale · Σ w_s m_s(z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct CostModel {
    pub coeffs: Vec<f64>,
    pub normalization: Normalization,
    pub offset: f64,
    pub scale: f64,
    pub domain: [[f64; 3]; 2],
}

impl CostModel {
    pub fn new(coeffs: Vec<f64>, normalization: Normalization, offset: f64, scale: f64) -> Self {
        assert_eq!(coeffs.len(), n_terms(COST_DEGREE), "cost model needs ten coefficients");
        CostModel { coeffs, normalization, offset, scale, domain: [[f64::NEG_INFINITY; 3], [f64::INFINITY; 3]] }
    }

    fn map() -> MonomialIndexMap {
        MonomialIndexMap::new(COST_DEGREE)
    }

    pub fn rescaled(&self, factor: [f64; 3]) -> Self {
        let d = self.domain;
        CostModel {
            normalization: self.normalization.rescaled(factor),
            domain: [[0, 1, 2].map(|k| d[0][k] / factor[k]), [0, 1, 2].map(|k| d[1][k] / factor[k])],
            ..self.clone()
        }
    }

    fn full(&self, x: [f64; 3]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
        let (v, g, h) = Self::map().eval(&self.coeffs, self.normalization.apply(x));
        let (g, h) = chain(&self.normalization, g, h, self.scale);
        (self.offset + self.scale * v, g, h)
    }
}

impl PqvFunction for CostModel {
    fn value(&self, x: [f64; 3]) -> f64 {
        self.full(x).0
    }
    fn gradient(&self, x: [f64; 3]) -> [f64; 3] {
        self.full(x).1
    }
    fn hessian(&self, x: [f64; 3]) -> [[f64; 3]; 3] {
        self.full(x).2
    }
}

/// Cost and gradient at `x`.
pub fn eval_cost(model: &CostModel, x: CouplingPoint) -> (f64, [f64; 3]) {
    let (v, g, _) = model.full(x.to_array());
    (v, g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostFit {
    pub model: CostModel,
    pub report: FitReport,
    pub rmse: f64,
    pub mae: f64,
}

pub fn residual_metrics(model: &CostModel, features: &[[f64; 3]], targets: &[f64]) -> (f64, f64) {
    let n = targets.len().max(1) as f64;
    let err: Vec<f64> = features.iter().zip(targets).map(|(&x, &y)| model.value(x) - y).collect();
    ((err.iter().map(|e| e * e).sum::<f64>() / n).sqrt(), err.iter().map(|e| e.abs()).sum::<f64>() / n)
}

/// Least-squares quadratic fit of `targets` over `features`.
pub fn fit_cost(features: &[[f64; 3]], targets: &[f64]) -> Result<CostFit, FitError> {
    fit_cost_with(features, targets, None)
}

/// [`fit_cost`] with a given input normalization instead of the features' own.
pub fn fit_cost_with(features: &[[f64; 3]], targets: &[f64], normalization: Option<Normalization>) -> Result<CostFit, FitError> {
    let k = n_terms(COST_DEGREE);
    if features.len() != targets.len() {
        return Err(FitError::Config(format!("{} feature rows but {} targets", features.len(), targets.len())));
    }
    if features.len() < k {
        return Err(FitError::TooFewRows { what: "cost fit", need: k, got: features.len() });
    }
    if features.iter().flatten().chain(targets).any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite("cost data"));
    }
    let norm = match normalization {
        Some(n) if n.valid() => n,
        Some(_) => return Err(FitError::NonFinite("normalization")),
        None => Normalization::from_points(features)?,
    };
    let n = targets.len() as f64;
    let offset = targets.iter().sum::<f64>() / n;
    let spread = (targets.iter().map(|y| (y - offset).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if spread > 1e-12 * (1.0 + offset.abs()) { spread } else { 1.0 };
    let map = CostModel::map();
    let z: Vec<[f64; 3]> = features.iter().map(|&x| norm.apply(x)).collect();
    let m = monomial_matrix(&z, &map);
    let b = DVector::from_iterator(targets.len(), targets.iter().map(|y| (y - offset) / scale));
    let sol = pinv_solve(&m, &b);
    if sol.rank < k {
        warn!("cost fit is rank deficient ({} of {k}); taking the minimum-norm solution", sol.rank);
    }
    let mut model = CostModel::new(sol.x.iter().copied().collect(), norm, offset, scale);
    model.domain = domain_of(features);
    let (rmse, mae) = residual_metrics(&model, features, targets);
    let report = FitReport { rows: m.nrows(), terms: k, rank: sol.rank, underdetermined: false, residual: sol.residual * scale };
    Ok(CostFit { model, report, rmse, mae })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    For,
    Cost,
}

/// Serialized form shared by both models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub degree: usize,
    pub sigma_order: String,
    pub coeffs: Vec<f64>,
    pub normalization: Normalization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "domain_serde")]
    pub domain: Option<[[f64; 3]; 2]>,
}

mod domain_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(d: &Option<[[f64; 3]; 2]>, s: S) -> Result<S::Ok, S::Error> {
        d.filter(|d| d.iter().flatten().all(|v| v.is_finite())).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<[[f64; 3]; 2]>, D::Error> {
        Option::deserialize(d)
    }
}

fn unbounded() -> [[f64; 3]; 2] {
    [[f64::NEG_INFINITY; 3], [f64::INFINITY; 3]]
}

impl ModelFile {
    fn check(&self, kind: ModelKind) -> Result<MonomialIndexMap, FitError> {
        if self.kind != kind {
            return Err(FitError::Format(format!("expected a {kind:?} model, found {:?}", self.kind)));
        }
        if self.sigma_order != SIGMA_ORDER {
            return Err(FitError::Format(format!("unsupported monomial order {:?}", self.sigma_order)));
        }
        let map = MonomialIndexMap::new(self.degree);
        if self.coeffs.len() != map.len() {
            return Err(FitError::Format(format!("degree {} needs {} coefficients, found {}", self.degree, map.len(), self.coeffs.len())));
        }
        if self.coeffs.iter().any(|c| !c.is_finite()) || !self.normalization.valid() {
            return Err(FitError::NonFinite("model file"));
        }
        Ok(map)
    }
}

impl TryFrom<ModelFile> for ImplicitPolynomial {
    type Error = FitError;
    fn try_from(f: ModelFile) -> Result<Self, FitError> {
        let map = f.check(ModelKind::For)?;
        Ok(ImplicitPolynomial { map, coeffs: f.coeffs, normalization: f.normalization, domain: f.domain.unwrap_or_else(unbounded) })
    }
}

impl From<ImplicitPolynomial> for ModelFile {
    fn from(m: ImplicitPolynomial) -> Self {
        ModelFile {
            kind: ModelKind::For,
            degree: m.map.degree(),
            sigma_order: SIGMA_ORDER.into(),
            coeffs: m.coeffs,
            normalization: m.normalization,
            target_offset: None,
            target_scale: None,
            domain: Some(m.domain),
        }
    }
}

impl TryFrom<ModelFile> for CostModel {
    type Error = FitError;
    fn try_from(f: ModelFile) -> Result<Self, FitError> {
        f.check(ModelKind::Cost)?;
        if f.degree != COST_DEGREE {
            return Err(FitError::Format(format!("cost models have degree {COST_DEGREE}")));
        }
        let offset = f.target_offset.unwrap_or(0.0);
        let scale = f.target_scale.unwrap_or(1.0);
        if !offset.is_finite() || !scale.is_finite() {
            return Err(FitError::NonFinite("cost target scaling"));
        }
        Ok(CostModel { coeffs: f.coeffs, normalization: f.normalization, offset, scale, domain: f.domain.unwrap_or_else(unbounded) })
    }
}

impl From<CostModel> for ModelFile {
    fn from(m: CostModel) -> Self {
        ModelFile {
            kind: ModelKind::Cost,
            degree: COST_DEGREE,
            sigma_order: SIGMA_ORDER.into(),
            coeffs: m.coeffs,
            normalization: m.normalization,
            target_offset: Some(m.offset),
            target_scale: Some(m.scale),
            domain: Some(m.domain),
        }
    }
}
