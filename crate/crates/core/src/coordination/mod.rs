//! Single-round coordination: the transmission OPF with analytical DS models
//! (phase 1) followed by DSO-side disaggregation at the agreed coupling points
//! (phase 2), and the benchmark against the merged standard OPF.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caseio::{BenchmarkConfig, FitConfig};
use crate::fitting::{
    eval_cost, eval_for, fit_cost_with, fit_for, CostFit, CostModel, FitError, ForFit, ImplicitPolynomial, Normalization,
};
use crate::netmodel::{attach_pcc, merge_ts_ds, Network, NetworkError, PccLink, PccNetwork};
use crate::nlopt::{
    assemble_opf, solve_fixed_pcc, CouplingPoint, FixedPccOptions, FixedPccResult, NlpSolution, NlpStatus, OpfBuilder,
    OpfError, OpfLayout, OpfObjective, OpfProblem, PortSpec, SolveOptions,
};
use crate::sampling::{seeded_rng, BoundingBox};

#[derive(Debug, Error)]
pub enum CoordError {
    #[error("coupling bus {0} is not empty")]
    PccNotEmpty(usize),
    #[error("coupling bus {0} hosts more than one bundle")]
    DuplicatePcc(usize),
    #[error("bundle at bus {0}: region and cost models use different normalizations")]
    NormalizationMismatch(usize),
    #[error("bundle at bus {0}: invalid normalization")]
    InvalidNormalization(usize),
    #[error("bundle at bus {0}: bounding box is not finite")]
    InfiniteBox(usize),
    #[error("expected {expected} distribution networks, got {got}")]
    NetworkCount { expected: usize, got: usize },
    #[error("distribution network {k} is attached at bus {got}, bundle expects bus {expected}")]
    NetworkMismatch { k: usize, expected: usize, got: usize },
    #[error(transparent)]
    Opf(#[from] OpfError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Everything the TSO receives from one DSO.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DsModelBundle {
    pub pcc: PccLink,
    pub for_model: ImplicitPolynomial,
    pub cost_model: CostModel,
    #[serde(rename = "box")]
    pub bounds: BoundingBox,
}

fn same_normalization(a: &Normalization, b: &Normalization) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs()));
    (0..3).all(|k| close(a.mean[k], b.mean[k]) && close(a.std[k], b.std[k]))
}

impl DsModelBundle {
    pub fn check(&self) -> Result<(), CoordError> {
        let bus = self.pcc.ts_bus;
        if !self.for_model.normalization.valid() || !self.cost_model.normalization.valid() {
            return Err(CoordError::InvalidNormalization(bus));
        }
        if !same_normalization(&self.for_model.normalization, &self.cost_model.normalization) {
            return Err(CoordError::NormalizationMismatch(bus));
        }
        if !self.bounds.lo().iter().chain(self.bounds.hi().iter()).all(|x| x.is_finite()) {
            return Err(CoordError::InfiniteBox(bus));
        }
        Ok(())
    }

    fn port(&self) -> PortSpec {
        let (lo, hi) = (self.bounds.lo(), self.bounds.hi());
        PortSpec {
            bus: self.pcc.ts_bus,
            sign: 1.0,
            p_bounds: (lo[0], hi[0]),
            q_bounds: (lo[1], hi[1]),
            v_bounds: Some((lo[2], hi[2])),
            constraint: Some(Arc::new(self.for_model.clone())),
            cost: Some(Arc::new(self.cost_model.clone())),
        }
    }
}

/// Fit the region model on `boundary` and the cost model on `(features, targets)`,
/// both in the normalization of the boundary data.
pub fn fit_bundle(
    pcc: PccLink,
    boundary: &[[f64; 3]],
    features: &[[f64; 3]],
    targets: &[f64],
    bounds: BoundingBox,
    cfg: &FitConfig,
) -> Result<(DsModelBundle, ForFit, CostFit), FitError> {
    let region = fit_for(boundary, cfg)?;
    let priced = fit_cost_with(features, targets, Some(region.model.normalization))?;
    let bundle = DsModelBundle { pcc, for_model: region.model.clone(), cost_model: priced.model.clone(), bounds };
    Ok((bundle, region, priced))
}

/// The FOR-based transmission OPF: one port `(p_j, q_j)` per bundle at its
/// coupling bus, whose voltage is the bus voltage, constrained by the region
/// model and the box and priced by the cost model.
///
/// The start places every coupling point at its box center.
pub fn build_for_opf(ts: &Network, bundles: &[DsModelBundle]) -> Result<OpfProblem, CoordError> {
    let mut builder = OpfBuilder::new(ts, OpfObjective::TotalCost);
    let mut seen = Vec::new();
    for b in bundles {
        b.check()?;
        let bus = b.pcc.ts_bus;
        if ts.bus_index(bus).is_none() {
            return Err(OpfError::UnknownBus(bus).into());
        }
        if !ts.is_empty_bus(bus) {
            return Err(CoordError::PccNotEmpty(bus));
        }
        if seen.contains(&bus) {
            return Err(CoordError::DuplicatePcc(bus));
        }
        seen.push(bus);
        builder = builder.port(b.port());
    }
    let mut problem = builder.build()?;
    let starts = start_points(&problem.layout, bundles, 0.0);
    problem.nlp.x0 = Some(patch_start(problem.nlp.x0.take().expect("builder sets a start"), &problem.layout, &starts));
    Ok(problem)
}

fn start_points(layout: &OpfLayout, bundles: &[DsModelBundle], shift: f64) -> Vec<[f64; 3]> {
    bundles
        .iter()
        .map(|b| {
            let c = b.bounds.center().to_array();
            let h = b.bounds.half_width();
            [(c[0] + shift * h[0]) / layout.base_mva, c[1] / layout.base_mva, c[2]]
        })
        .collect()
}

fn patch_start(mut x0: Vec<f64>, layout: &OpfLayout, starts: &[[f64; 3]]) -> Vec<f64> {
    for (j, s) in starts.iter().enumerate() {
        for (&i, &value) in layout.port_vars(j).iter().zip(s) {
            x0[i] = value;
        }
    }
    x0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinationOptions {
    pub solve: SolveOptions,
    pub fixed: FixedPccOptions,
    /// Number of phase-1 starts: the box center, then the center shifted by
    /// half the box width up and down in `p`. The best optimal solve is kept.
    pub multistart: usize,
}

impl Default for CoordinationOptions {
    fn default() -> Self {
        CoordinationOptions { solve: SolveOptions::default(), fixed: FixedPccOptions::default(), multistart: 1 }
    }
}

/// Phase-2 outcome at one coupling point.
#[derive(Debug, Clone)]
pub struct Disaggregation {
    pub point: CouplingPoint,
    /// Region model value at the point.
    pub for_value: f64,
    /// Cost predicted by the DS cost model.
    pub model_cost: f64,
    pub result: FixedPccResult,
    pub wall_time: f64,
}

impl Disaggregation {
    pub fn succeeded(&self) -> bool {
        self.result.status == NlpStatus::Optimal
    }

    /// The DSO proved the agreed point infeasible.
    pub fn false_feasible(&self) -> bool {
        self.result.status == NlpStatus::Infeasible
    }
}

#[derive(Debug, Clone)]
pub struct CoordinationReport {
    pub ts_solution: NlpSolution,
    pub layout: OpfLayout,
    /// Transmission generator cost at the phase-1 dispatch.
    pub ts_cost: f64,
    /// Empty when phase 1 did not reach an optimum.
    pub disaggregation: Vec<Disaggregation>,
    /// Transmission cost plus the true phase-2 DS costs; NaN unless every phase succeeded.
    pub total_cost: f64,
    pub phase1_time: f64,
    /// Longest single disaggregation; DSOs solve independently.
    pub phase2_time: f64,
}

impl CoordinationReport {
    pub fn phase1_optimal(&self) -> bool {
        self.ts_solution.status == NlpStatus::Optimal
    }

    pub fn points(&self) -> Vec<CouplingPoint> {
        self.disaggregation.iter().map(|d| d.point).collect()
    }

    /// Phase 1 optimal and every disaggregation solved.
    pub fn feasible(&self) -> bool {
        self.phase1_optimal() && self.disaggregation.iter().all(Disaggregation::succeeded)
    }

    pub fn false_feasible_events(&self) -> usize {
        self.disaggregation.iter().filter(|d| d.false_feasible()).count()
    }

    pub fn wall_time(&self) -> f64 {
        self.phase1_time + self.phase2_time
    }

    /// Deterministic summary without wall times.
    pub fn summary(&self, ts: &Network, bundles: &[DsModelBundle]) -> CoordinationSummary {
        let base = self.layout.base_mva;
        CoordinationSummary {
            phase1_status: self.ts_solution.status,
            phase1_objective: self.ts_solution.objective,
            ts_cost: self.ts_cost,
            total_cost: self.total_cost,
            feasible: self.feasible(),
            false_feasible_events: self.false_feasible_events(),
            generators: ts
                .generators()
                .iter()
                .zip(self.layout.gen_p(&self.ts_solution.x).iter().zip(self.layout.gen_q(&self.ts_solution.x)))
                .map(|(g, (p, q))| DispatchRow { bus: g.bus, p_mw: p * base, q_mvar: q * base })
                .collect(),
            ds: self
                .disaggregation
                .iter()
                .zip(bundles)
                .map(|(d, b)| {
                    let dgs = match (&d.result.solution, &d.result.layout) {
                        (Some(sol), Some(layout)) => layout
                            .dg_p(&sol.x)
                            .iter()
                            .zip(layout.dg_q(&sol.x))
                            .map(|(p, q)| [p * layout.base_mva, q * layout.base_mva])
                            .collect(),
                        _ => Vec::new(),
                    };
                    DsSummary {
                        ts_bus: b.pcc.ts_bus,
                        ds_name: b.pcc.ds_name.clone(),
                        point: d.point,
                        for_value: d.for_value,
                        model_cost: d.model_cost,
                        status: d.result.status,
                        cost: d.result.cost,
                        violation: d.result.violation,
                        dg_setpoints: dgs,
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchRow {
    pub bus: usize,
    pub p_mw: f64,
    pub q_mvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DsSummary {
    pub ts_bus: usize,
    pub ds_name: String,
    pub point: CouplingPoint,
    pub for_value: f64,
    pub model_cost: f64,
    pub status: NlpStatus,
    pub cost: f64,
    pub violation: f64,
    /// `[p MW, q MVAr]` per DG.
    pub dg_setpoints: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinationSummary {
    pub phase1_status: NlpStatus,
    pub phase1_objective: f64,
    pub ts_cost: f64,
    pub total_cost: f64,
    pub feasible: bool,
    pub false_feasible_events: usize,
    pub generators: Vec<DispatchRow>,
    pub ds: Vec<DsSummary>,
}

fn generator_cost(ts: &Network, layout: &OpfLayout, x: &[f64]) -> f64 {
    ts.generators().iter().zip(layout.gen_p(x)).map(|(g, &p)| g.cost(p)).sum()
}

/// Solve phase 1 from each configured start and keep the best optimum, or
/// the first attempt if none is optimal.
fn solve_phase1(
    ts: &Network,
    problem: &OpfProblem,
    bundles: &[DsModelBundle],
    opts: &CoordinationOptions,
) -> Result<NlpSolution, CoordError> {
    let mut best = problem.solve(&opts.solve);
    for &shift in [0.5, -0.5].iter().take(opts.multistart.saturating_sub(1)) {
        let mut shifted = build_for_opf(ts, bundles)?;
        let starts = start_points(&shifted.layout, bundles, shift);
        let x0 = shifted.nlp.x0.take().expect("builder sets a start");
        shifted.nlp.x0 = Some(patch_start(x0, &shifted.layout, &starts));
        let sol = shifted.solve(&opts.solve);
        if sol.status == NlpStatus::Optimal && (best.status != NlpStatus::Optimal || sol.objective < best.objective) {
            best = sol;
        }
    }
    Ok(best)
}

/// Phase 1 on the transmission system, then per-DS disaggregation at the
/// resulting coupling points. `ds_networks[j]` belongs to `bundles[j]`.
pub fn solve_coordination(
    ts: &Network,
    bundles: &[DsModelBundle],
    ds_networks: &[PccNetwork],
    opts: &CoordinationOptions,
) -> Result<CoordinationReport, CoordError> {
    if ds_networks.len() != bundles.len() {
        return Err(CoordError::NetworkCount { expected: bundles.len(), got: ds_networks.len() });
    }
    for (k, (b, ds)) in bundles.iter().zip(ds_networks).enumerate() {
        if b.pcc.ts_bus != ds.link.ts_bus {
            return Err(CoordError::NetworkMismatch { k, expected: b.pcc.ts_bus, got: ds.link.ts_bus });
        }
    }
    let problem = build_for_opf(ts, bundles)?;
    let start = Instant::now();
    let sol = solve_phase1(ts, &problem, bundles, opts)?;
    let phase1_time = start.elapsed().as_secs_f64();
    let layout = problem.layout;
    let ts_cost = generator_cost(ts, &layout, &sol.x);
    let mut disaggregation = Vec::new();
    if sol.status == NlpStatus::Optimal {
        for (j, (b, ds)) in bundles.iter().zip(ds_networks).enumerate() {
            let point = layout.port_point(&sol.x, j);
            let start = Instant::now();
            let result = solve_fixed_pcc(ds, point, &opts.fixed);
            let wall_time = start.elapsed().as_secs_f64();
            disaggregation.push(Disaggregation {
                point,
                for_value: eval_for(&b.for_model, point).value,
                model_cost: eval_cost(&b.cost_model, point).0,
                result,
                wall_time,
            });
        }
    }
    let phase2_time = disaggregation.iter().map(|d| d.wall_time).fold(0.0, f64::max);
    let all_ok = sol.status == NlpStatus::Optimal && disaggregation.iter().all(Disaggregation::succeeded);
    let total_cost =
        if all_ok { ts_cost + disaggregation.iter().map(|d| d.result.cost).sum::<f64>() } else { f64::NAN };
    Ok(CoordinationReport { ts_solution: sol, layout, ts_cost, disaggregation, total_cost, phase1_time, phase2_time })
}

/// One benchmark trial. Times are wall-clock seconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    /// Multiplier applied to each transmission generator's linear cost coefficient.
    pub b_multipliers: Vec<f64>,
    pub proposed_status: NlpStatus,
    pub standard_status: NlpStatus,
    pub proposed_cost: f64,
    pub standard_cost: f64,
    /// `100 · (proposed − standard) / standard`.
    pub cost_diff_pct: f64,
    /// Every disaggregation solved.
    pub feasible: bool,
    pub false_feasible: usize,
    pub proposed_time: f64,
    pub standard_time: f64,
    pub time_diff_pct: f64,
}

impl TrialRecord {
    pub fn both_solved(&self) -> bool {
        self.feasible && self.standard_status == NlpStatus::Optimal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkSummary {
    pub n_trials: usize,
    pub seed: u64,
    pub jitter: (f64, f64),
    /// Share of trials whose disaggregations all solved.
    pub feasibility_ratio: f64,
    pub standard_failures: usize,
    pub false_feasible_events: usize,
    pub mean_cost_diff_pct: f64,
    pub median_cost_diff_pct: f64,
    pub max_abs_cost_diff_pct: f64,
    /// Trials where both paths solved and the proposed cost undercut the standard one beyond `1e-6` relative.
    pub dominance_violations: usize,
    pub mean_time_diff_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub trials: Vec<TrialRecord>,
    pub summary: BenchmarkSummary,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl BenchmarkSummary {
    pub fn from_trials(trials: &[TrialRecord], cfg: &BenchmarkConfig) -> Self {
        let solved: Vec<&TrialRecord> = trials.iter().filter(|t| t.both_solved()).collect();
        let diffs: Vec<f64> = solved.iter().map(|t| t.cost_diff_pct).collect();
        let times: Vec<f64> = solved.iter().map(|t| t.time_diff_pct).collect();
        BenchmarkSummary {
            n_trials: trials.len(),
            seed: cfg.seed,
            jitter: (cfg.jitter_lo, cfg.jitter_hi),
            feasibility_ratio: if trials.is_empty() {
                f64::NAN
            } else {
                trials.iter().filter(|t| t.feasible).count() as f64 / trials.len() as f64
            },
            standard_failures: trials.iter().filter(|t| t.standard_status != NlpStatus::Optimal).count(),
            false_feasible_events: trials.iter().map(|t| t.false_feasible).sum(),
            mean_cost_diff_pct: mean(&diffs),
            median_cost_diff_pct: median(diffs.clone()),
            max_abs_cost_diff_pct: diffs.iter().fold(0.0, |m, d| m.max(d.abs())),
            dominance_violations: solved.iter().filter(|t| t.cost_diff_pct < -1e-4).count(),
            mean_time_diff_pct: mean(&times),
        }
    }
}

/// Multiply each generator's linear cost coefficient by a draw from `U[lo, hi)`.
pub fn jitter_costs(ts: &Network, cfg: &BenchmarkConfig, trial: usize) -> Result<(Network, Vec<f64>), NetworkError> {
    let mut rng = seeded_rng(cfg.seed, trial as u64);
    let mut data = ts.to_data();
    let mut mult = Vec::with_capacity(data.generators.len());
    for g in &mut data.generators {
        let m = if cfg.jitter_hi > cfg.jitter_lo { rng.random_range(cfg.jitter_lo..cfg.jitter_hi) } else { cfg.jitter_lo };
        g.cost_b *= m;
        mult.push(m);
    }
    Ok((Network::new(data)?, mult))
}

fn pct(a: f64, b: f64) -> f64 {
    100.0 * (a - b) / b
}

/// Compare the coordination pipeline with the merged standard OPF over
/// `cfg.n_trials` random draws of transmission cost coefficients.
///
/// `attachments[j]` is the distribution network behind `bundles[j]`.
pub fn run_benchmark(
    ts: &Network,
    attachments: &[(PccLink, Network)],
    bundles: &[DsModelBundle],
    cfg: &BenchmarkConfig,
    opts: &CoordinationOptions,
) -> Result<BenchmarkReport, CoordError> {
    let ds_networks =
        attachments.iter().map(|(link, net)| attach_pcc(net, link)).collect::<Result<Vec<_>, _>>()?;
    build_for_opf(ts, bundles)?;
    merge_ts_ds(ts, attachments)?;
    let trials: Vec<TrialRecord> = (0..cfg.n_trials)
        .into_par_iter()
        .map(|k| run_trial(ts, attachments, bundles, &ds_networks, cfg, opts, k))
        .collect::<Result<_, _>>()?;
    let summary = BenchmarkSummary::from_trials(&trials, cfg);
    Ok(BenchmarkReport { trials, summary })
}

fn run_trial(
    ts: &Network,
    attachments: &[(PccLink, Network)],
    bundles: &[DsModelBundle],
    ds_networks: &[PccNetwork],
    cfg: &BenchmarkConfig,
    opts: &CoordinationOptions,
    k: usize,
) -> Result<TrialRecord, CoordError> {
    let (jittered, b_multipliers) = jitter_costs(ts, cfg, k)?;
    let report = solve_coordination(&jittered, bundles, ds_networks, opts)?;

    let (merged, _) = merge_ts_ds(&jittered, attachments)?;
    let start = Instant::now();
    let standard = assemble_opf(&merged, OpfObjective::TotalCost, None)?.solve(&opts.solve);
    let standard_time = start.elapsed().as_secs_f64();
    let standard_cost = if standard.status == NlpStatus::Optimal { standard.objective } else { f64::NAN };

    let proposed_time = report.wall_time();
    Ok(TrialRecord {
        trial: k,
        b_multipliers,
        proposed_status: report.ts_solution.status,
        standard_status: standard.status,
        proposed_cost: report.total_cost,
        standard_cost,
        cost_diff_pct: pct(report.total_cost, standard_cost),
        feasible: report.feasible(),
        false_feasible: report.false_feasible_events(),
        proposed_time,
        standard_time,
        time_diff_pct: pct(proposed_time, standard_time),
    })
}

/// Trial table without wall times, one row per trial.
pub fn trials_to_csv(trials: &[TrialRecord], cfg: &BenchmarkConfig) -> String {
    let mut out = format!(
        "# jitter b ~ U[{}, {}) per transmission generator, seed {}\n",
        cfg.jitter_lo, cfg.jitter_hi, cfg.seed
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "trial",
        "b_multipliers",
        "proposed_status",
        "standard_status",
        "proposed_cost",
        "standard_cost",
        "cost_diff_pct",
        "feasible",
        "false_feasible",
    ])
    .expect("in-memory write");
    for t in trials {
        let mult = t.b_multipliers.iter().map(|m| format!("{m:?}")).collect::<Vec<_>>().join(";");
        w.write_record([
            t.trial.to_string(),
            mult,
            format!("{:?}", t.proposed_status),
            format!("{:?}", t.standard_status),
            format!("{:?}", t.proposed_cost),
            format!("{:?}", t.standard_cost),
            format!("{:?}", t.cost_diff_pct),
            t.feasible.to_string(),
            t.false_feasible.to_string(),
        ])
        .expect("in-memory write");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));
    out
}

/// Wall times per trial.
pub fn timings_to_csv(trials: &[TrialRecord]) -> String {
    let mut out = String::from("trial,proposed_time_s,standard_time_s,time_diff_pct\n");
    for t in trials {
        out.push_str(&format!("{},{:?},{:?},{:?}\n", t.trial, t.proposed_time, t.standard_time, t.time_diff_pct));
    }
    out
}

#[cfg(test)]
mod tests;
