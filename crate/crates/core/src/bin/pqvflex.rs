use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use pqvflex::caseio::{
    import_matpower, read_dataset, write_dataset, BenchmarkConfig, CaseDocument, CaseRole, DatasetFile, FitConfig,
};
use pqvflex::cases;
use pqvflex::coordination::{
    fit_bundle, run_benchmark, solve_coordination, timings_to_csv, trials_to_csv, CoordinationOptions, DsModelBundle,
};
use pqvflex::evaluation::{emit_plots, validate_cost, validate_for, PlotInputs};
use pqvflex::netmodel::{attach_pcc, Network, PccLink};
use pqvflex::nlopt::FixedPccOptions;
use pqvflex::sampling::{bbps, compute_bounding_box, fds, sample_cost_interior, BoundingBox};

type Result<T> = std::result::Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "pqvflex", version, about = "PQV flexibility regions, analytical surrogates and TSO-DSO coordination")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a MATPOWER case file into a native JSON case.
    Import(ImportArgs),
    /// Sample the boundary and the interior cost of a distribution system.
    Sample(SampleArgs),
    /// Fit the region and cost models and write a model bundle.
    Fit(FitArgs),
    /// Validate a model bundle on fresh samples.
    Validate(ValidateArgs),
    /// Run the two-phase coordination once.
    Coordinate(CoordinateArgs),
    /// Compare coordination against the merged standard OPF over random cost draws.
    Benchmark(BenchmarkArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Transmission,
    Distribution,
}

#[derive(Args)]
struct ImportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "transmission")]
    role: Role,
    /// Override the network name.
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    /// Bundled case name (`ds33`) or path to a JSON case.
    #[arg(long)]
    case: String,
    /// Index of the coupling link within the case.
    #[arg(long, default_value_t = 0)]
    pcc: usize,
    #[arg(long)]
    n_bbps: Option<usize>,
    #[arg(long)]
    n_fds: Option<usize>,
    #[arg(long)]
    n_cost: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    boundary: PathBuf,
    #[arg(long)]
    cost: PathBuf,
    /// JSON fit configuration; defaults to the case's, then to the built-in one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Distribution case providing the coupling link.
    #[arg(long)]
    case: String,
    #[arg(long, default_value_t = 0)]
    pcc: usize,
    /// Bounding box JSON written by `sample`.
    #[arg(long = "box")]
    bounds: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Model bundle written by `fit`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    case: String,
    #[arg(long, default_value_t = 0)]
    pcc: usize,
    /// Uniform samples for the region model.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Fresh interior samples for the cost model (0 skips it).
    #[arg(long, default_value_t = 100)]
    n_cost: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write scatter files for the labeled samples into this directory.
    #[arg(long)]
    plots: Option<PathBuf>,
}

#[derive(Args)]
struct SystemArgs {
    /// Transmission case name (`ts9`) or path.
    #[arg(long)]
    ts: String,
    /// Model bundle; one per coupling link of the transmission case, or one reused for all.
    #[arg(long = "bundle", required = true)]
    bundles: Vec<PathBuf>,
    /// Distribution case behind each bundle, or one reused for all.
    #[arg(long = "ds", required = true)]
    ds: Vec<String>,
    /// Phase-1 starts.
    #[arg(long, default_value_t = 1)]
    multistart: usize,
}

#[derive(Args)]
struct CoordinateArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trial table; timings, summary and histograms are written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    bin_width_pct: f64,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Import(a) => import(a),
        Command::Sample(a) => sample(a),
        Command::Fit(a) => fit(a),
        Command::Validate(a) => validate(a),
        Command::Coordinate(a) => coordinate(a),
        Command::Benchmark(a) => benchmark(a),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(|e| format!("writing {}: {e}", path.display()).into())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()).into())
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes") + "\n"
}

fn link_of(doc: &CaseDocument, k: usize) -> Result<PccLink> {
    doc.pcc_links.get(k).cloned().ok_or_else(|| format!("case has {} pcc links, no index {k}", doc.pcc_links.len()).into())
}

fn import(a: ImportArgs) -> Result<()> {
    let mut data = import_matpower(&read(&a.input)?)?.to_data();
    if let Some(name) = a.name {
        data.name = name;
    }
    let role = match a.role {
        Role::Transmission => CaseRole::Transmission,
        Role::Distribution => CaseRole::Distribution,
    };
    let doc = CaseDocument::new(role, Network::new(data)?, Vec::new())?;
    write(&a.out, &pqvflex::caseio::serialize_case(&doc))?;
    info!("wrote {}", a.out.display());
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let doc = cases::load(&a.case)?;
    let cfg = doc.sampling.clone().unwrap_or_default();
    let link = link_of(&doc, a.pcc)?;
    let ds = attach_pcc(&doc.network, &link)?;
    let opts = FixedPccOptions::default();
    let seed = a.seed.unwrap_or(cfg.seed);
    let bx = compute_bounding_box(&ds, &opts)?;
    info!("bounding box {:?} .. {:?}", bx.x_min, bx.x_max);
    let mut boundary = bbps(&ds, &bx, a.n_bbps.unwrap_or(cfg.n_bbps), seed, &opts);
    info!("bbps kept {} of {} attempts", boundary.data.len(), boundary.attempts);
    let rays = fds(&ds, &bx, a.n_fds.unwrap_or(cfg.n_fds), seed, &opts);
    info!("fds kept {} of {} attempts", rays.run.data.len(), rays.run.attempts);
    let cost = sample_cost_interior(&ds, &bx, a.n_cost.unwrap_or(cfg.n_cost), seed, &opts)?;
    info!("cost kept {} of {} attempts", cost.data.targets.len(), cost.attempts);

    let mut log = String::new();
    for ev in boundary.log.iter().chain(&rays.run.log).chain(&cost.log) {
        log.push_str(&serde_json::to_string(ev)?);
        log.push('\n');
    }
    boundary.data.extend(rays.run.data);
    write(&a.out_dir.join("boundary.csv"), &write_dataset(&boundary.data.to_file())?)?;
    write(&a.out_dir.join("cost.csv"), &write_dataset(&cost.data.to_file())?)?;
    write(&a.out_dir.join("box.json"), &to_json(&bx))?;
    write(&a.out_dir.join("log.jsonl"), &log)?;
    info!("wrote {}", a.out_dir.display());
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let doc = cases::load(&a.case)?;
    let cfg: FitConfig = match &a.config {
        Some(p) => pqvflex::caseio::from_json(&read(p)?)?,
        None => doc.fit.clone().unwrap_or_default(),
    };
    let boundary = read_dataset(&read(&a.boundary)?)?;
    let cost = read_dataset(&read(&a.cost)?)?;
    let bx: BoundingBox = pqvflex::caseio::from_json(&read(&a.bounds)?)?;
    let (bundle, region, priced) =
        fit_bundle(link_of(&doc, a.pcc)?, &boundary.points(), &cost.points(), &cost.costs(), bx, &cfg)?;
    info!(
        "region model: {} rows, {} terms, rank {}; cost model rmse {:.6} mae {:.6}",
        region.report.rows, region.report.terms, region.report.rank, priced.rmse, priced.mae
    );
    write(&a.out, &to_json(&bundle))?;
    info!("wrote {}", a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct ValidationFile {
    region: pqvflex::evaluation::ConfusionMetrics,
    cost: Option<pqvflex::evaluation::FitErrorMetrics>,
    cost_excluded: Option<usize>,
}

fn validate(a: ValidateArgs) -> Result<()> {
    let bundle: DsModelBundle = pqvflex::caseio::from_json(&read(&a.model)?)?;
    let doc = cases::load(&a.case)?;
    let ds = attach_pcc(&doc.network, &link_of(&doc, a.pcc)?)?;
    let opts = FixedPccOptions::default();
    let region = validate_for(&bundle.for_model, &ds, &bundle.bounds, a.n, a.seed, &opts);
    info!(
        "region model: tp {} tn {} fp {} fn {} excluded {}",
        region.metrics.tp, region.metrics.tn, region.metrics.fp, region.metrics.fn_, region.metrics.excluded
    );
    let cost = if a.n_cost > 0 {
        let c = validate_cost(&bundle.cost_model, &ds, &bundle.bounds, a.n_cost, a.seed, &opts)?;
        info!("cost model: rmse {:.6} ({:.4}% of range)", c.metrics.rmse, 100.0 * c.metrics.rmse_normalized);
        Some(c)
    } else {
        None
    };
    let out = ValidationFile {
        region: region.metrics.clone(),
        cost: cost.as_ref().map(|c| c.metrics.clone()),
        cost_excluded: cost.as_ref().map(|c| c.excluded),
    };
    write(&a.out, &to_json(&out))?;
    if let Some(dir) = &a.plots {
        let labeled = DatasetFile {
            kind: pqvflex::caseio::DatasetKind::Boundary,
            rows: region
                .samples
                .iter()
                .map(|s| pqvflex::caseio::DatasetRow {
                    p_mw: s.point[0],
                    q_mvar: s.point[1],
                    v_pu: s.point[2],
                    cost: None,
                    source: match s.feasible {
                        Some(true) => "feasible",
                        Some(false) => "infeasible",
                        None => "inconclusive",
                    }
                    .into(),
                    seed: a.seed,
                })
                .collect(),
        };
        let inputs = PlotInputs {
            boundary: Some(&labeled),
            metrics: Some(serde_json::to_value(&out)?),
            bin_width_pct: 1.0,
            ..Default::default()
        };
        emit_plots(dir, &inputs)?;
    }
    info!("wrote {}", a.out.display());
    Ok(())
}

struct System {
    ts: CaseDocument,
    bundles: Vec<DsModelBundle>,
    ds: Vec<(PccLink, Network)>,
}

/// Pair every coupling link of the transmission case with a bundle and a
/// distribution network. A single bundle or network is reused for all links;
/// a reused bundle is rebound to each link.
fn load_system(a: &SystemArgs) -> Result<System> {
    let ts = cases::load(&a.ts)?;
    let links = ts.pcc_links.clone();
    if links.is_empty() {
        return Err("transmission case has no pcc links".into());
    }
    let loaded =
        a.bundles.iter().map(|p| Ok(pqvflex::caseio::from_json::<DsModelBundle>(&read(p)?)?)).collect::<Result<Vec<_>>>()?;
    let bundles = match loaded.len() {
        1 => links.iter().map(|l| DsModelBundle { pcc: l.clone(), ..loaded[0].clone() }).collect(),
        n if n == links.len() => loaded,
        n => return Err(format!("{n} bundles for {} pcc links", links.len()).into()),
    };
    let nets = a.ds.iter().map(|s| Ok(cases::load(s)?.network)).collect::<Result<Vec<_>>>()?;
    let ds = match nets.len() {
        1 => links.iter().map(|l| (l.clone(), nets[0].clone())).collect(),
        n if n == links.len() => links.iter().cloned().zip(nets).collect(),
        n => return Err(format!("{n} distribution cases for {} pcc links", links.len()).into()),
    };
    Ok(System { ts, bundles, ds })
}

fn coordinate(a: CoordinateArgs) -> Result<()> {
    let sys = load_system(&a.system)?;
    let pcc = sys.ds.iter().map(|(l, n)| attach_pcc(n, l)).collect::<std::result::Result<Vec<_>, _>>()?;
    let opts = CoordinationOptions { multistart: a.system.multistart, ..Default::default() };
    let report = solve_coordination(&sys.ts.network, &sys.bundles, &pcc, &opts)?;
    info!(
        "phase 1 {:?} in {:.3} s, phase 2 {:.3} s, total cost {:.4}",
        report.ts_solution.status, report.phase1_time, report.phase2_time, report.total_cost
    );
    write(&a.out, &to_json(&report.summary(&sys.ts.network, &sys.bundles)))?;
    let timing = serde_json::json!({ "phase1_s": report.phase1_time, "phase2_s": report.phase2_time });
    write(&sibling(&a.out, "timing.json"), &to_json(&timing))?;
    info!("wrote {}", a.out.display());
    Ok(())
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    path.with_file_name(format!("{stem}.{name}"))
}

fn benchmark(a: BenchmarkArgs) -> Result<()> {
    let sys = load_system(&a.system)?;
    let base = sys.ts.benchmark.clone().unwrap_or_default();
    let cfg = BenchmarkConfig { n_trials: a.trials.unwrap_or(base.n_trials), seed: a.seed.unwrap_or(base.seed), ..base };
    let opts = CoordinationOptions { multistart: a.system.multistart, ..Default::default() };
    let report = run_benchmark(&sys.ts.network, &sys.ds, &sys.bundles, &cfg, &opts)?;
    let s = &report.summary;
    info!(
        "{} trials: feasibility {:.1}%, mean cost diff {:.5}%, dominance violations {}, mean time diff {:.2}%",
        s.n_trials,
        100.0 * s.feasibility_ratio,
        s.mean_cost_diff_pct,
        s.dominance_violations,
        s.mean_time_diff_pct
    );
    write(&a.out, &trials_to_csv(&report.trials, &cfg))?;
    write(&sibling(&a.out, "timing.csv"), &timings_to_csv(&report.trials))?;
    let mut summary = serde_json::to_value(s)?;
    summary.as_object_mut().expect("struct").remove("mean_time_diff_pct");
    write(&sibling(&a.out, "summary.json"), &to_json(&summary))?;
    let diffs: Vec<f64> = report.trials.iter().filter(|t| t.both_solved()).map(|t| t.cost_diff_pct).collect();
    let hist = pqvflex::evaluation::Histogram::new(&diffs, a.bin_width_pct)?;
    write(&sibling(&a.out, "hist_cost_diff.csv"), &hist.to_csv())?;
    let times: Vec<f64> = report.trials.iter().filter(|t| t.both_solved()).map(|t| t.time_diff_pct).collect();
    let hist = pqvflex::evaluation::Histogram::new(&times, 5.0)?;
    write(&sibling(&a.out, "timing_hist.csv"), &hist.to_csv())?;
    info!("wrote {}", a.out.display());
    Ok(())
}
