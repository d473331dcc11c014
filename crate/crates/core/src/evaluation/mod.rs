//! Validation of fitted models against the elastic feasibility verdict and the
//! fixed-PCC cost, plus plot-ready CSV/JSON bundles.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caseio::{write_dataset, CaseError, DatasetFile};
use crate::fitting::{eval_for, CostModel, ImplicitPolynomial};
use crate::netmodel::PccNetwork;
use crate::nlopt::{feasibility_verdict, CouplingPoint, FixedPccOptions, NlpStatus, PqvFunction};
use crate::sampling::{sample_cost_interior, seeded_rng, BoundingBox, SamplingError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid histogram bin width {0}")]
    BinWidth(f64),
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Confusion counts with "feasible" as the positive class. Ratios are `None`
/// when their denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    /// Labeled samples; equals `tp + tn + fp + fn`.
    pub n_samples: usize,
    /// Samples whose verdict was inconclusive, excluded from the counts.
    pub excluded: usize,
    pub seed: u64,
}

impl ConfusionMetrics {
    pub fn from_counts(tp: usize, tn: usize, fp: usize, fn_: usize, excluded: usize, seed: u64) -> Self {
        let n = tp + tn + fp + fn_;
        ConfusionMetrics {
            tp,
            tn,
            fp,
            fn_,
            accuracy: ratio(tp + tn, n),
            recall: ratio(tp, tp + fn_),
            specificity: ratio(tn, tn + fp),
            n_samples: n,
            excluded,
            seed,
        }
    }

    /// Tally `(truth, prediction)` pairs; `None` truth counts as excluded.
    pub fn tally(pairs: impl IntoIterator<Item = (Option<bool>, bool)>, seed: u64) -> Self {
        let (mut tp, mut tn, mut fp, mut fn_, mut ex) = (0, 0, 0, 0, 0);
        for (truth, pred) in pairs {
            match (truth, pred) {
                (None, _) => ex += 1,
                (Some(true), true) => tp += 1,
                (Some(false), false) => tn += 1,
                (Some(false), true) => fp += 1,
                (Some(true), false) => fn_ += 1,
            }
        }
        Self::from_counts(tp, tn, fp, fn_, ex, seed)
    }
}

/// One validation sample with its verdict and the model's value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledSample {
    pub point: [f64; 3],
    /// `None` when the verdict was inconclusive.
    pub feasible: Option<bool>,
    pub status: NlpStatus,
    pub violation: f64,
    pub model_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForValidation {
    pub metrics: ConfusionMetrics,
    pub samples: Vec<LabeledSample>,
}

/// `n` points drawn uniformly from `bx` with stream 0 of `seed`.
pub fn uniform_in_box(bx: &BoundingBox, n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = seeded_rng(seed, 0);
    let (lo, hi) = (bx.lo(), bx.hi());
    (0..n).map(|_| [0, 1, 2].map(|k| if hi[k] > lo[k] { rng.random_range(lo[k]..hi[k]) } else { lo[k] })).collect()
}

/// Confusion matrix of `model` over `n` uniform box samples labeled by the
/// elastic feasibility verdict.
pub fn validate_for(model: &ImplicitPolynomial, ds: &PccNetwork, bx: &BoundingBox, n: usize, seed: u64, opts: &FixedPccOptions) -> ForValidation {
    let samples: Vec<LabeledSample> = uniform_in_box(bx, n, seed)
        .par_iter()
        .map(|&x| {
            let v = feasibility_verdict(ds, CouplingPoint::from_array(x), opts);
            LabeledSample {
                point: x,
                feasible: v.conclusive().then_some(v.feasible),
                status: v.status,
                violation: v.violation,
                model_value: eval_for(model, CouplingPoint::from_array(x)).value,
            }
        })
        .collect();
    let metrics = ConfusionMetrics::tally(samples.iter().map(|s| (s.feasible, s.model_value <= 0.0)), seed);
    ForValidation { metrics, samples }
}

/// Cost-model errors, absolute and relative to the observed cost range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitErrorMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub n_validation: usize,
    /// `max − min` of the true costs.
    pub cost_range: f64,
    pub rmse_normalized: f64,
    pub mae_normalized: f64,
}

impl FitErrorMetrics {
    pub fn compute(model: &CostModel, features: &[[f64; 3]], targets: &[f64]) -> Self {
        let (rmse, mae) = crate::fitting::residual_metrics(model, features, targets);
        let lo = targets.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = if targets.is_empty() { 0.0 } else { hi - lo };
        let rel = |e: f64| if range > 0.0 { e / range } else { 0.0 };
        FitErrorMetrics { rmse, mae, n_validation: targets.len(), cost_range: range, rmse_normalized: rel(rmse), mae_normalized: rel(mae) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostValidation {
    pub metrics: FitErrorMetrics,
    pub features: Vec<[f64; 3]>,
    pub targets: Vec<f64>,
    pub predictions: Vec<f64>,
    /// Draws whose fixed-PCC solve failed numerically.
    pub excluded: usize,
}

/// Errors of `model` on `n` fresh feasible interior samples.
pub fn validate_cost(model: &CostModel, ds: &PccNetwork, bx: &BoundingBox, n: usize, seed: u64, opts: &FixedPccOptions) -> Result<CostValidation, EvalError> {
    let run = sample_cost_interior(ds, bx, n, seed, opts)?;
    let excluded = run.log.iter().filter(|e| e.status == NlpStatus::NumericalFailure).count();
    let features: Vec<[f64; 3]> = run.data.features.iter().map(|x| x.to_array()).collect();
    let predictions = features.iter().map(|&x| model.value(x)).collect();
    let metrics = FitErrorMetrics::compute(model, &features, &run.data.targets);
    Ok(CostValidation { metrics, features, targets: run.data.targets, predictions, excluded })
}

/// Fixed-width histogram with bins `[k·w, (k+1)·w)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// `counts.len() + 1` edges; empty when there is no data.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bin_width: f64) -> Result<Self, EvalError> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(EvalError::BinWidth(bin_width));
        }
        let bins: Vec<i64> = values.iter().filter(|v| v.is_finite()).map(|v| (v / bin_width + 1e-9).floor() as i64).collect();
        let (Some(&lo), Some(&hi)) = (bins.iter().min(), bins.iter().max()) else {
            return Ok(Histogram { bin_width, edges: Vec::new(), counts: Vec::new() });
        };
        let mut counts = vec![0; (hi - lo + 1) as usize];
        for b in bins {
            counts[(b - lo) as usize] += 1;
        }
        let edges = (lo..=hi + 1).map(|k| k as f64 * bin_width).collect();
        Ok(Histogram { bin_width, edges, counts })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", self.edges[k], self.edges[k + 1], c));
        }
        s
    }
}

/// Inputs of [`emit_plots`]; absent parts are skipped.
#[derive(Debug, Default)]
pub struct PlotInputs<'a> {
    pub boundary: Option<&'a DatasetFile>,
    pub cost: Option<&'a DatasetFile>,
    /// Per-trial cost and wall-time differences in percent.
    pub cost_diff_pct: Option<&'a [f64]>,
    pub time_diff_pct: Option<&'a [f64]>,
    pub bin_width_pct: f64,
    pub metrics: Option<serde_json::Value>,
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf, EvalError> {
    std::fs::write(&path, text).map_err(|source| EvalError::Io { path: path.clone(), source })?;
    Ok(path)
}

/// Write scatter, histogram and metrics files into `dir`; returns the paths written.
pub fn emit_plots(dir: &Path, inputs: &PlotInputs) -> Result<Vec<PathBuf>, EvalError> {
    std::fs::create_dir_all(dir).map_err(|source| EvalError::Io { path: dir.into(), source })?;
    let mut out = Vec::new();
    if let Some(b) = inputs.boundary {
        out.push(write(dir.join("scatter_boundary.csv"), &write_dataset(b)?)?);
    }
    if let Some(c) = inputs.cost {
        out.push(write(dir.join("scatter_cost.csv"), &write_dataset(c)?)?);
    }
    for (name, values) in [("hist_cost_diff.csv", inputs.cost_diff_pct), ("hist_time_diff.csv", inputs.time_diff_pct)] {
        if let Some(v) = values {
            out.push(write(dir.join(name), &Histogram::new(v, inputs.bin_width_pct)?.to_csv())?);
        }
    }
    if let Some(m) = &inputs.metrics {
        out.push(write(dir.join("metrics.json"), &(serde_json::to_string_pretty(m).expect("json value") + "\n"))?);
    }
    Ok(out)
}
