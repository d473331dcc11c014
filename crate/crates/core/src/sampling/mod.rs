//! Data generation over a distribution system's PQV feasible operating region:
//! bounding box, boundary projection (BBPS), Fibonacci ray casting (FDS) and
//! interior cost sampling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caseio::{DatasetFile, DatasetKind, DatasetRow};
use crate::netmodel::PccNetwork;
use crate::nlopt::{
    assemble_opf, feasibility_verdict, solve_fixed_pcc, Axis, CouplingPoint, FixedPccOptions, NlpStatus, OpfObjective,
};

pub mod design;

pub use design::{fibonacci_directions, golden_angle, lhs, lhs_on_facets, lhs_with, seeded_rng};

/// Width below which an axis counts as degenerate, per unit.
pub const DEGENERATE_WIDTH: f64 = 1e-4;
pub const BATCH_SIZE: usize = 64;
pub const BBPS_ATTEMPT_FACTOR: usize = 5;
pub const COST_ATTEMPT_FACTOR: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub x_min: CouplingPoint,
    pub x_max: CouplingPoint,
}

impl BoundingBox {
    pub fn new(x_min: CouplingPoint, x_max: CouplingPoint) -> Self {
        BoundingBox { x_min, x_max }
    }

    pub fn lo(&self) -> [f64; 3] {
        self.x_min.to_array()
    }

    pub fn hi(&self) -> [f64; 3] {
        self.x_max.to_array()
    }

    pub fn center(&self) -> CouplingPoint {
        let (lo, hi) = (self.lo(), self.hi());
        CouplingPoint::from_array([0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k])))
    }

    pub fn half_width(&self) -> [f64; 3] {
        let (lo, hi) = (self.lo(), self.hi());
        [0, 1, 2].map(|k| 0.5 * (hi[k] - lo[k]))
    }

    pub fn contains(&self, x: [f64; 3], tol: f64) -> bool {
        let (lo, hi) = (self.lo(), self.hi());
        (0..3).all(|k| x[k] >= lo[k] - tol && x[k] <= hi[k] + tol)
    }

    pub fn clamp(&self, x: [f64; 3]) -> [f64; 3] {
        let (lo, hi) = (self.lo(), self.hi());
        [0, 1, 2].map(|k| x[k].clamp(lo[k], hi[k]))
    }

    /// Widen axes narrower than [`DEGENERATE_WIDTH`] per unit by that amount on each side.
    pub fn inflated(&self, base_mva: f64) -> BoundingBox {
        let (mut lo, mut hi) = (self.lo(), self.hi());
        let unit = [base_mva, base_mva, 1.0];
        for k in 0..3 {
            let eps = DEGENERATE_WIDTH * unit[k];
            if hi[k] - lo[k] < eps {
                lo[k] -= eps;
                hi[k] += eps;
            }
        }
        BoundingBox::new(CouplingPoint::from_array(lo), CouplingPoint::from_array(hi))
    }

    /// Map to box coordinates in `[-1, 1]³`.
    pub fn normalize(&self, x: [f64; 3]) -> [f64; 3] {
        let c = self.center().to_array();
        let h = self.half_width();
        [0, 1, 2].map(|k| (x[k] - c[k]) / h[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    Bbps,
    Fds,
    Lhs,
}

impl SampleSource {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleSource::Bbps => "bbps",
            SampleSource::Fds => "fds",
            SampleSource::Lhs => "lhs",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("feasible operating region is empty: extreme of {axis:?} ended with status {status:?}")]
    EmptyRegion { axis: Axis, status: NlpStatus },
    #[error("cost sampling kept {kept} of {attempts} draws (acceptance rate {rate:.4}); the region is too small relative to its box")]
    AttemptCap { kept: usize, attempts: usize, rate: f64 },
}

/// One line of the sampling log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub stage: String,
    pub index: usize,
    pub status: NlpStatus,
    pub kept: bool,
    pub point: Option<[f64; 3]>,
    pub violation: Option<f64>,
    /// Status of the elastic solve behind the verdict on `point`.
    pub verdict: Option<NlpStatus>,
}

impl LogEvent {
    fn new(stage: &str, index: usize, status: NlpStatus, kept: bool) -> Self {
        LogEvent { stage: stage.into(), index, status, kept, point: None, violation: None, verdict: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryDataset {
    pub points: Vec<CouplingPoint>,
    pub sources: Vec<SampleSource>,
    pub seed: u64,
}

impl BoundaryDataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn extend(&mut self, other: BoundaryDataset) {
        self.points.extend(other.points);
        self.sources.extend(other.sources);
    }

    pub fn to_file(&self) -> DatasetFile {
        let rows = self
            .points
            .iter()
            .zip(&self.sources)
            .map(|(x, s)| DatasetRow { p_mw: x.p, q_mvar: x.q, v_pu: x.v, cost: None, source: s.as_str().into(), seed: self.seed })
            .collect();
        DatasetFile { kind: DatasetKind::Boundary, rows }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostDataset {
    pub features: Vec<CouplingPoint>,
    /// Minimum internal generation cost per hour.
    pub targets: Vec<f64>,
    pub seed: u64,
}

impl CostDataset {
    pub fn to_file(&self) -> DatasetFile {
        let rows = self
            .features
            .iter()
            .zip(&self.targets)
            .map(|(x, &c)| DatasetRow { p_mw: x.p, q_mvar: x.q, v_pu: x.v, cost: Some(c), source: "lhs".into(), seed: self.seed })
            .collect();
        DatasetFile { kind: DatasetKind::Cost, rows }
    }
}

/// Outcome of a boundary sampling stage.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryRun {
    pub data: BoundaryDataset,
    pub attempts: usize,
    /// False when the attempt cap stopped the stage before the requested count.
    pub complete: bool,
    pub log: Vec<LogEvent>,
}

/// Outcome of FDS, which also returns the ray geometry of every kept point.
#[derive(Debug, Clone, PartialEq)]
pub struct RayRun {
    pub run: BoundaryRun,
    pub center: CouplingPoint,
    /// `(direction, t*)` of each kept point, with `x* = center + t*·direction`.
    pub rays: Vec<([f64; 3], f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostRun {
    pub data: CostDataset,
    pub attempts: usize,
    pub log: Vec<LogEvent>,
}

impl CostRun {
    pub fn acceptance_rate(&self) -> f64 {
        self.data.targets.len() as f64 / self.attempts.max(1) as f64
    }
}

fn pcc_id(ds: &PccNetwork) -> usize {
    ds.network.buses()[ds.pcc_bus].id
}

fn per_unit_scale(ds: &PccNetwork) -> [f64; 3] {
    let base = ds.base_mva();
    [base, base, 1.0]
}

/// Box spanned by the six axis extremes of the coupling point.
pub fn compute_bounding_box(ds: &PccNetwork, opts: &FixedPccOptions) -> Result<BoundingBox, SamplingError> {
    let bus = pcc_id(ds);
    let jobs: Vec<(Axis, bool)> = Axis::ALL.iter().flat_map(|&a| [(a, false), (a, true)]).collect();
    let ends: Vec<Result<f64, SamplingError>> = jobs
        .par_iter()
        .map(|&(axis, maximize)| {
            let p = assemble_opf(&ds.network, OpfObjective::AxisExtreme { axis, maximize }, Some(bus)).expect("pcc bus exists");
            let s = p.solve(&opts.solve);
            if s.status != NlpStatus::Optimal {
                return Err(SamplingError::EmptyRegion { axis, status: s.status });
            }
            Ok(p.layout.port_point(&s.x, 0).to_array()[axis.index()])
        })
        .collect();
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for (&(axis, maximize), e) in jobs.iter().zip(ends) {
        let v = e?;
        if maximize {
            hi[axis.index()] = v;
        } else {
            lo[axis.index()] = v;
        }
    }
    for k in 0..3 {
        if hi[k] < lo[k] {
            (lo[k], hi[k]) = (hi[k], lo[k]);
        }
    }
    Ok(BoundingBox::new(CouplingPoint::from_array(lo), CouplingPoint::from_array(hi)))
}

/// Projection of `target` onto the region in box-normalized distance.
fn project(ds: &PccNetwork, bx: &BoundingBox, target: [f64; 3], opts: &FixedPccOptions) -> (NlpStatus, Option<[f64; 3]>) {
    let obj = OpfObjective::L2Projection { target: CouplingPoint::from_array(target), scale: bx.half_width() };
    let p = assemble_opf(&ds.network, obj, Some(pcc_id(ds))).expect("pcc bus exists");
    let s = p.solve(&opts.solve);
    let x = (s.status == NlpStatus::Optimal).then(|| p.layout.port_point(&s.x, 0).to_array());
    (s.status, x)
}

struct Confirmed {
    ok: bool,
    x: [f64; 3],
    violation: f64,
    status: NlpStatus,
}

impl Confirmed {
    fn annotate(&self, ev: &mut LogEvent) {
        ev.point = Some(self.x);
        ev.violation = Some(self.violation);
        ev.verdict = Some(self.status);
    }
}

/// Clamp to the box and confirm with the elastic verdict.
fn confirm(ds: &PccNetwork, bx: &BoundingBox, x: [f64; 3], opts: &FixedPccOptions) -> Confirmed {
    let x = bx.clamp(x);
    let v = feasibility_verdict(ds, CouplingPoint::from_array(x), opts);
    Confirmed { ok: v.feasible, x, violation: v.violation, status: v.status }
}

/// Boundary points by projecting box-facet samples onto the region.
/// Failed projections are replaced by fresh draws until `n` points are kept
/// or `5n` draws have been made.
pub fn bbps(ds: &PccNetwork, bx: &BoundingBox, n: usize, seed: u64, opts: &FixedPccOptions) -> BoundaryRun {
    let work = bx.inflated(ds.base_mva());
    let scale = per_unit_scale(ds);
    let cap = BBPS_ATTEMPT_FACTOR * n;
    let mut data = BoundaryDataset { points: Vec::new(), sources: Vec::new(), seed };
    let mut log = Vec::new();
    let mut attempts = 0;
    let mut round = 0u64;
    while data.len() < n && attempts < cap {
        let m = (n - data.len()).min(cap - attempts);
        let targets = lhs_on_facets(m, &work, scale, seed.wrapping_add(round.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        round += 1;
        let results: Vec<(NlpStatus, Option<Confirmed>)> = targets
            .par_iter()
            .map(|&t| {
                let (status, x) = project(ds, bx, t, opts);
                (status, x.map(|x| confirm(ds, bx, x, opts)))
            })
            .collect();
        for (status, r) in results {
            let mut ev = LogEvent::new("bbps", attempts, status, false);
            attempts += 1;
            if let Some(c) = r {
                c.annotate(&mut ev);
                if c.ok && data.len() < n {
                    ev.kept = true;
                    data.points.push(CouplingPoint::from_array(c.x));
                    data.sources.push(SampleSource::Bbps);
                }
            }
            log.push(ev);
        }
    }
    BoundaryRun { complete: data.len() == n, data, attempts, log }
}

/// Boundary points by casting `n` rays from the box center along
/// box-scaled Fibonacci directions. An infeasible center is first replaced by
/// its projection onto the region.
pub fn fds(ds: &PccNetwork, bx: &BoundingBox, n: usize, seed: u64, opts: &FixedPccOptions) -> RayRun {
    let mut log = Vec::new();
    let mut center = bx.center();
    let cv = feasibility_verdict(ds, center, opts);
    log.push(LogEvent { point: Some(center.to_array()), violation: Some(cv.violation), verdict: Some(cv.status), ..LogEvent::new("fds_center", 0, cv.status, cv.feasible) });
    if !cv.feasible {
        let (status, x) = project(ds, bx, center.to_array(), opts);
        if let Some(x) = x {
            center = CouplingPoint::from_array(x);
        }
        log.push(LogEvent { point: x, ..LogEvent::new("fds_center_projection", 0, status, x.is_some()) });
    }
    let h = bx.inflated(ds.base_mva()).half_width();
    let dirs: Vec<[f64; 3]> = fibonacci_directions(n).iter().map(|d| [0, 1, 2].map(|k| d[k] * h[k])).collect();
    let bus = pcc_id(ds);
    let results: Vec<(NlpStatus, Option<(f64, Confirmed)>)> = dirs
        .par_iter()
        .map(|&d| {
            let p = assemble_opf(&ds.network, OpfObjective::RayMax { center, direction: d }, Some(bus)).expect("pcc bus exists");
            let s = p.solve(&opts.solve);
            if s.status != NlpStatus::Optimal {
                return (s.status, None);
            }
            let t = s.x[p.layout.t.expect("ray variable")].max(0.0);
            let c = center.to_array();
            let x = [0, 1, 2].map(|k| c[k] + t * d[k]);
            (s.status, Some((t, confirm(ds, bx, x, opts))))
        })
        .collect();
    let mut data = BoundaryDataset { points: Vec::new(), sources: Vec::new(), seed };
    let mut rays = Vec::new();
    for (k, (status, r)) in results.into_iter().enumerate() {
        let mut ev = LogEvent::new("fds", k, status, false);
        if let Some((t, c)) = r {
            c.annotate(&mut ev);
            if c.ok {
                ev.kept = true;
                data.points.push(CouplingPoint::from_array(c.x));
                data.sources.push(SampleSource::Fds);
                rays.push((dirs[k], t));
            }
        }
        log.push(ev);
    }
    RayRun { run: BoundaryRun { complete: data.len() == n, data, attempts: n, log }, center, rays }
}

/// Feasible interior points with their minimum internal cost, drawn by Latin
/// hypercube batches over the box.
pub fn sample_cost_interior(
    ds: &PccNetwork,
    bx: &BoundingBox,
    n: usize,
    seed: u64,
    opts: &FixedPccOptions,
) -> Result<CostRun, SamplingError> {
    let work = bx.inflated(ds.base_mva());
    let cap = COST_ATTEMPT_FACTOR * n;
    let mut data = CostDataset { features: Vec::new(), targets: Vec::new(), seed };
    let mut log = Vec::new();
    let mut attempts = 0;
    let mut batch = 0u64;
    while data.targets.len() < n {
        if attempts >= cap {
            let kept = data.targets.len();
            return Err(SamplingError::AttemptCap { kept, attempts, rate: kept as f64 / attempts.max(1) as f64 });
        }
        let m = BATCH_SIZE.min(cap - attempts);
        let draws = lhs_with(&mut seeded_rng(seed, 1000 + batch), m, &work.lo(), &work.hi());
        batch += 1;
        let results: Vec<_> = draws
            .par_iter()
            .map(|x| {
                let x = bx.clamp([x[0], x[1], x[2]]);
                (x, solve_fixed_pcc(ds, CouplingPoint::from_array(x), opts))
            })
            .collect();
        for (x, r) in results {
            let mut ev = LogEvent { point: Some(x), violation: Some(r.violation), ..LogEvent::new("cost", attempts, r.status, false) };
            attempts += 1;
            if r.status == NlpStatus::Optimal && data.targets.len() < n {
                ev.kept = true;
                data.features.push(CouplingPoint::from_array(x));
                data.targets.push(r.cost);
            }
            log.push(ev);
        }
    }
    Ok(CostRun { data, attempts, log })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::netmodel::{attach_pcc, Bus, BusKind, DgArchetype, Interconnect, Network, NetworkData, Orientation, PccLink};

    /// Lossless one-DG feeder on a 10 MVA base: the DG exports up to 5 MW.
    pub(crate) fn trivial_ds() -> PccNetwork {
        let mut dg = DgArchetype::Box.build(2, 0.5, (1.0, 2.0, 0.3));
        dg.generator.q_min = -0.2;
        dg.generator.q_max = 0.2;
        let data = NetworkData {
            name: "trivial".into(),
            base_mva: 10.0,
            buses: vec![Bus::new(1, BusKind::Slack, 0.9, 1.1), Bus::new(2, BusKind::Pq, 0.9, 1.1)],
            branches: vec![crate::netmodel::Branch::line(1, 2, 0.0, 0.05)],
            generators: vec![],
            dgs: vec![dg],
            loads: vec![],
        };
        let link = PccLink {
            ts_bus: 5,
            ds_name: "trivial".into(),
            ds_bus: 1,
            interconnect: Interconnect { r: 0.0, x: 0.02, b_charge: 0.0, tap: 1.0, shift: 0.0, rating: 0.0 },
            v_min: 0.95,
            v_max: 1.05,
            orientation: Orientation::DsToTs,
        };
        attach_pcc(&Network::new(data).unwrap(), &link).unwrap()
    }

    fn opts() -> FixedPccOptions {
        FixedPccOptions::default()
    }

    #[test]
    fn trivial_box_matches_lossless_export() {
        let bx = compute_bounding_box(&trivial_ds(), &opts()).unwrap();
        assert!(bx.x_min.p.abs() < 1e-6 && (bx.x_max.p - 5.0).abs() < 1e-6, "{bx:?}");
        assert!(bx.x_min.v >= 0.95 - 1e-9 && bx.x_max.v <= 1.05 + 1e-9);
        assert!((bx.x_max.v - 1.05).abs() < 1e-6 && (bx.x_min.v - 0.95).abs() < 1e-6);
    }

    #[test]
    fn inflation_only_touches_flat_axes() {
        let bx = BoundingBox::new(CouplingPoint::new(0.0, -1.0, 1.0), CouplingPoint::new(2.0, 1.0, 1.0));
        let w = bx.inflated(10.0);
        assert_eq!((w.x_min.p, w.x_max.p), (0.0, 2.0));
        assert_eq!((w.x_min.v, w.x_max.v), (1.0 - 1e-4, 1.0 + 1e-4));
    }

    #[test]
    fn interior_target_projects_to_itself() {
        let ds = trivial_ds();
        let bx = compute_bounding_box(&ds, &opts()).unwrap();
        let (status, x) = project(&ds, &bx, [2.0, 0.1, 1.0], &opts());
        assert_eq!(status, NlpStatus::Optimal);
        let x = x.unwrap();
        assert!((x[0] - 2.0).abs() < 1e-6 && (x[1] - 0.1).abs() < 1e-6 && (x[2] - 1.0).abs() < 1e-6, "{x:?}");
    }

    #[test]
    fn far_target_projects_onto_max_p() {
        let ds = trivial_ds();
        let bx = compute_bounding_box(&ds, &opts()).unwrap();
        let (_, x) = project(&ds, &bx, [50.0, 0.0, 1.0], &opts());
        assert!((x.unwrap()[0] - bx.x_max.p).abs() < 1e-6);
    }

    #[test]
    fn bbps_rows_are_feasible_and_inside_the_box() {
        let ds = trivial_ds();
        let bx = compute_bounding_box(&ds, &opts()).unwrap();
        let run = bbps(&ds, &bx, 24, 4, &opts());
        assert!(run.complete);
        let tight = FixedPccOptions { feas_tol: 1e-5, ..opts() };
        for x in &run.data.points {
            assert!(bx.contains(x.to_array(), 1e-9));
            assert!(feasibility_verdict(&ds, *x, &tight).feasible);
        }
        assert_eq!(run, bbps(&ds, &bx, 24, 4, &opts()));
    }

    #[test]
    fn axis_ray_hits_max_p_and_pushing_past_is_infeasible() {
        let ds = trivial_ds();
        let bx = compute_bounding_box(&ds, &opts()).unwrap();
        let run = fds(&ds, &bx, 64, 0, &opts());
        assert_eq!(run.run.data.len(), 64);
        let mut tight = 0;
        for (x, &(d, t)) in run.run.data.points.iter().zip(&run.rays) {
            assert!(bx.contains(x.to_array(), 1e-9));
            let c = run.center.to_array();
            let pushed = CouplingPoint::from_array([0, 1, 2].map(|k| c[k] + 1.01 * t * d[k]));
            tight += !feasibility_verdict(&ds, pushed, &opts()).feasible as usize;
        }
        assert!(tight as f64 >= 0.95 * 64.0, "{tight}");

        let c = run.center;
        let p = assemble_opf(&ds.network, OpfObjective::RayMax { center: c, direction: [1.0, 0.0, 0.0] }, Some(pcc_id(&ds))).unwrap();
        let s = p.solve(&opts().solve);
        let x = p.layout.port_point(&s.x, 0);
        assert!((x.p - bx.x_max.p).abs() < 1e-6, "{x:?}");
    }

    #[test]
    fn null_exchange_is_an_interior_cost_point() {
        let ds = trivial_ds();
        let r = solve_fixed_pcc(&ds, CouplingPoint::new(0.0, 0.0, 1.0), &opts());
        assert_eq!(r.status, NlpStatus::Optimal);
        assert!((r.cost - 0.3).abs() < 1e-7);
    }

    #[test]
    fn cost_sampling_is_seeded_and_inside_the_box() {
        let ds = trivial_ds();
        let bx = compute_bounding_box(&ds, &opts()).unwrap();
        let a = sample_cost_interior(&ds, &bx, 20, 3, &opts()).unwrap();
        assert_eq!(a.data.targets.len(), 20);
        assert!(a.data.features.iter().all(|x| bx.contains(x.to_array(), 1e-9)));
        assert_eq!(a, sample_cost_interior(&ds, &bx, 20, 3, &opts()).unwrap());
    }

    #[test]
    fn empty_region_is_reported() {
        let mut ds = trivial_ds();
        let mut d = ds.network.to_data();
        d.loads.push(crate::netmodel::Load { bus: 2, p_d: 5.0, q_d: 0.0 });
        d.branches.last_mut().unwrap().rating = 0.01;
        ds.network = Network::new(d).unwrap();
        assert!(matches!(compute_bounding_box(&ds, &opts()), Err(SamplingError::EmptyRegion { .. })));
    }
}
