//! `leakhunt` command-line front end.
//!
//! Every subcommand echoes its effective configuration to stderr, and
//! every file it writes starts with a provenance header (tool version,
//! input hashes, seed, configuration) from which the run can be repeated.
//!
//! Exit codes: 0 success, 1 I/O, 2 invalid input, 3 numerical failure,
//! 4 fingerprint mismatch.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use tracing::info;
use tracing_subscriber::EnvFilter;

use leakhunt::amsi::{self, AmsiError, AmsiRecord};
use leakhunt::detect::{Aggregation, DetectError, DetectionConfig, Detector, DmaBaseline, NoiseModel, Observation};
use leakhunt::evaluate::{self, CampaignConfig, EvalError};
use leakhunt::hydraulics::{self, HydraulicState, SolveError, SolverSettings};
use leakhunt::network::{MeterConfig, Network, NetworkError};
use leakhunt::provenance::RunHeader;
use leakhunt::scenariodb::{self, DbError, GridConfig, LeakSimulator, RandomConfig, Range, ScenarioDatabase};

#[derive(Parser)]
#[command(name = "leakhunt", version, about = "Model-based punctual leak detection in DMA-partitioned water networks")]
struct Cli {
    /// JSON file with default knobs (sections: solver, grid, random, detection, campaign); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for database builds and campaigns (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a network file and list every problem found.
    Validate {
        #[arg(long)]
        network: PathBuf,
    },
    /// Solve the leak-free network and write heads, flows, leakage and AMSI.
    Solve(SolveArgs),
    /// Build the scenario database over pipes × orifice sizes × demand levels.
    BuildDb(BuildDbArgs),
    /// Build a database of uniformly drawn random leak events.
    BuildRandomDb(BuildRandomArgs),
    /// Run both detection phases on an observation file.
    Detect(DetectArgs),
    /// Detect every event of a random database and compute the indicators.
    Campaign(CampaignArgs),
    /// Compare pressure meter layouts on the same campaign.
    CompareMeters(CompareArgs),
    /// Recompute indicator tables from a campaign's event table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SolverFlags {
    #[arg(long)]
    head_tolerance: Option<f64>,
    #[arg(long)]
    flow_tolerance: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
}

impl SolverFlags {
    fn apply(&self, s: &mut SolverSettings) {
        if let Some(v) = self.head_tolerance {
            s.head_tolerance = v;
        }
        if let Some(v) = self.flow_tolerance {
            s.flow_tolerance = v;
        }
        if let Some(v) = self.max_iterations {
            s.max_iterations = v;
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    network: PathBuf,
    /// Demand multiplier of the steady state.
    #[arg(long, default_value_t = 1.0)]
    multiplier: f64,
    /// Also solve the network's operative cycle and add its mean.
    #[arg(long)]
    cycle: bool,
    /// Output CSV (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args)]
struct RangeFlags {
    /// Smallest orifice diameter, m.
    #[arg(long)]
    orifice_min: Option<f64>,
    /// Largest orifice diameter, m.
    #[arg(long)]
    orifice_max: Option<f64>,
    #[arg(long)]
    demand_min: Option<f64>,
    #[arg(long)]
    demand_max: Option<f64>,
}

impl RangeFlags {
    fn apply(&self, orifice: &mut Range, demand: &mut Range) {
        orifice.min = self.orifice_min.unwrap_or(orifice.min);
        orifice.max = self.orifice_max.unwrap_or(orifice.max);
        demand.min = self.demand_min.unwrap_or(demand.min);
        demand.max = self.demand_max.unwrap_or(demand.max);
    }
}

#[derive(Args)]
struct BuildDbArgs {
    #[arg(long)]
    network: PathBuf,
    /// Pressure meter layout (JSON); the network's own meters when absent.
    #[arg(long)]
    meters: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    orifice_steps: Option<usize>,
    #[arg(long)]
    demand_steps: Option<usize>,
    #[command(flatten)]
    ranges: RangeFlags,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args)]
struct BuildRandomArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    meters: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Number of events.
    #[arg(long)]
    events: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    ranges: RangeFlags,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    Max,
    Mean,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Uniform,
    Gaussian,
}

#[derive(Args)]
struct DetectionFlags {
    /// Minimum AMSI rise that flags a DMA.
    #[arg(long)]
    amsi_threshold: Option<f64>,
    /// Meters whose pressure drop is within this bound (m) are ignored.
    #[arg(long)]
    meter_error: Option<f64>,
    #[arg(long, value_enum)]
    aggregation: Option<AggregationArg>,
}

impl DetectionFlags {
    fn apply(&self, d: &mut DetectionConfig) {
        d.amsi_threshold = self.amsi_threshold.unwrap_or(d.amsi_threshold);
        d.meter_error_bound = self.meter_error.unwrap_or(d.meter_error_bound);
        match self.aggregation {
            Some(AggregationArg::Max) => d.aggregation = Aggregation::Max,
            Some(AggregationArg::Mean) => d.aggregation = Aggregation::Mean,
            None => {}
        }
    }
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    db: PathBuf,
    /// Observation file: per-DMA water-loss densities and meter pressures.
    #[arg(long)]
    obs: PathBuf,
    /// Report JSON; the inspection sequences go next to it as CSV.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    detection: DetectionFlags,
}

#[derive(Args)]
struct CampaignFlags {
    #[command(flatten)]
    detection: DetectionFlags,
    /// Magnitude of the simulated meter error added to each pressure drop, m.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, value_enum)]
    noise_model: Option<NoiseArg>,
    #[arg(long)]
    seed: Option<u64>,
}

impl CampaignFlags {
    fn apply(&self, c: &mut CampaignConfig) {
        self.detection.apply(&mut c.detection);
        c.meter_error = self.noise.unwrap_or(c.meter_error);
        c.seed = self.seed.unwrap_or(c.seed);
        match self.noise_model {
            Some(NoiseArg::Uniform) => c.noise_model = NoiseModel::Uniform,
            Some(NoiseArg::Gaussian) => c.noise_model = NoiseModel::Gaussian,
            None => {}
        }
    }
}

#[derive(Args)]
struct CampaignArgs {
    #[arg(long, required_unless_present = "replay")]
    network: Option<PathBuf>,
    /// Scenario database.
    #[arg(long, required_unless_present = "replay")]
    db: Option<PathBuf>,
    /// Random event database.
    #[arg(long, required_unless_present = "replay")]
    events: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Repeat the campaign recorded in the header of this output file.
    #[arg(long, conflicts_with_all = ["network", "db", "events"])]
    replay: Option<PathBuf>,
    #[command(flatten)]
    flags: CampaignFlags,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    network: PathBuf,
    /// Scenario database built with a layout containing every compared meter.
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    events: PathBuf,
    /// Meter layout files (JSON), one per compared configuration.
    #[arg(long = "layout", required = true)]
    layouts: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: CampaignFlags,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    network: PathBuf,
    /// Event table written by `campaign`.
    #[arg(long)]
    events: PathBuf,
    /// Where to write the class and DMA tables; printed only when absent.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Knobs read from `--config`.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    solver: SolverSettings,
    grid: GridConfig,
    random: RandomConfig,
    detection: DetectionConfig,
    campaign: CampaignConfig,
}

/// An error with an explicit exit code.
#[derive(Debug)]
struct Fail {
    code: u8,
    message: String,
}

impl std::fmt::Display for Fail {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Fail {}

fn fail(code: u8, message: impl Into<String>) -> anyhow::Error {
    Fail { code, message: message.into() }.into()
}

fn network_code(e: &NetworkError) -> u8 {
    match e {
        NetworkError::Io { .. } => 1,
        _ => 2,
    }
}

fn db_code(e: &DbError) -> u8 {
    match e {
        DbError::Io { .. } => 1,
        DbError::Fingerprint { .. } => 4,
        DbError::TooManyFailures { .. } | DbError::Baseline { .. } | DbError::Amsi(_) => 3,
        DbError::Network(n) => network_code(n),
        _ => 2,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Fail>() {
            return e.code;
        }
        if let Some(e) = cause.downcast_ref::<NetworkError>() {
            return network_code(e);
        }
        if let Some(e) = cause.downcast_ref::<DbError>() {
            return db_code(e);
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return match e {
                EvalError::Mismatch(_) => 4,
                EvalError::Db(d) => db_code(d),
                EvalError::Network(n) => network_code(n),
                _ => 2,
            };
        }
        if cause.is::<SolveError>() || cause.is::<AmsiError>() {
            return 3;
        }
        if cause.is::<DetectError>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if cause.is::<std::io::Error>() {
            return 1;
        }
    }
    2
}

fn main() -> ExitCode {
    let filter = EnvFilter::try_from_env("LEAKHUNT_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => {
            let text = read(path)?;
            serde_json::from_str::<FileConfig>(&text).with_context(|| format!("config file {}", path.display()))?
        }
        None => FileConfig::default(),
    };
    let workers = cli.workers;
    match cli.command {
        Command::Validate { network } => validate(&network),
        Command::Solve(args) => solve(args, file),
        Command::BuildDb(args) => scenariodb::with_workers(workers, || build_db(args, file)),
        Command::BuildRandomDb(args) => scenariodb::with_workers(workers, || build_random(args, file)),
        Command::Detect(args) => detect(args, file),
        Command::Campaign(args) => scenariodb::with_workers(workers, || campaign(args, file)),
        Command::CompareMeters(args) => scenariodb::with_workers(workers, || compare(args, file)),
        Command::Report(args) => report(args),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    info!(path = %path.display(), "written");
    Ok(())
}

fn echo_config(command: &str, config: &serde_json::Value) {
    eprintln!("leakhunt {command}: effective config {config}");
}

fn load_network(path: &Path) -> Result<Network> {
    Ok(Network::load(path)?)
}

fn load_meters(net: &Network, path: Option<&Path>) -> Result<MeterConfig> {
    match path {
        Some(p) => {
            let meters = MeterConfig::load(p)?;
            net.meter_junctions(&meters)?;
            Ok(meters)
        }
        None => Ok(net.meters.clone()),
    }
}

fn load_db(path: &Path) -> Result<ScenarioDatabase> {
    Ok(ScenarioDatabase::load(path)?)
}

fn check_network(db: &ScenarioDatabase, net: &Network, what: &str) -> Result<()> {
    let found = net.fingerprint();
    if db.header.network_fingerprint != found {
        return Err(fail(
            4,
            format!("{what} was built for network {} but the given network is {found}", db.header.network_fingerprint),
        ));
    }
    Ok(())
}

fn validate(path: &Path) -> Result<()> {
    let text = read(path)?;
    let net = Network::from_json(&text)?;
    println!(
        "{}: valid ({} junctions, {} reservoirs, {} pipes, {} valves, {} DMAs, {} pressure meters)",
        path.display(),
        net.n_junctions(),
        net.n_reservoirs(),
        net.n_pipes(),
        net.valves.len(),
        net.dmas.len(),
        net.meters.len()
    );
    Ok(())
}

fn solve_error(e: SolveError) -> anyhow::Error {
    if let SolveError::NotConverged { state } = &e {
        eprintln!(
            "residuals after {} iterations: mass {:.3e} m3/s, momentum {:.3e} m",
            state.iterations, state.max_mass_residual, state.max_momentum_residual
        );
    }
    e.into()
}

fn state_rows(out: &mut String, section: &str, net: &Network, state: &HydraulicState) -> Result<()> {
    let states = std::slice::from_ref(state);
    for (i, j) in net.junctions.iter().enumerate() {
        let _ = writeln!(out, "{section}node,{},{},{},,,", j.id, state.heads[i], state.pressure(net, i));
    }
    for (k, p) in net.pipes.iter().enumerate() {
        let amsi = if p.is_open() && state.pipe_pressures[k] > 0.0 {
            amsi::pipe_record(net, states, k)?.amsi.to_string()
        } else {
            String::new()
        };
        let _ = writeln!(
            out,
            "{section}pipe,{},,{},{},{},{amsi}",
            p.id, state.pipe_pressures[k], state.pipe_flows[k], state.pipe_leaks[k]
        );
    }
    for d in &net.dmas {
        let r: AmsiRecord = amsi::dma_amsi(net, states, &d.id, None)?;
        let _ = writeln!(out, "{section}dma,{},,{},,{},{}", d.id, r.p_ref, r.leak_density, r.amsi);
    }
    Ok(())
}

fn solve(args: SolveArgs, file: FileConfig) -> Result<()> {
    let mut settings = file.solver;
    args.solver.apply(&mut settings);
    let config = serde_json::json!({
        "network": args.network, "multiplier": args.multiplier, "cycle": args.cycle, "solver": settings,
    });
    echo_config("solve", &config);
    let net = load_network(&args.network)?;
    let state = hydraulics::solve_steady_state(&net, args.multiplier, &settings).map_err(solve_error)?;
    let header = RunHeader::new("solve", config).with_hash("network", net.fingerprint());
    let mut out = header.to_comment_block();
    // node rows: head, pressure; pipe rows: mean pressure, flow, diffuse leak, AMSI;
    // dma rows: reference pressure, leak density, AMSI
    out.push_str("kind,id,head_m,pressure_m,flow_m3s,leak_m3s_or_density,amsi\n");
    state_rows(&mut out, "", &net, &state)?;
    if args.cycle {
        let cycle = hydraulics::solve_cycle(&net, &net.cycle, &settings).map_err(solve_error)?;
        state_rows(&mut out, "cycle_", &net, &cycle.mean)?;
    }
    match &args.out {
        Some(path) => write(path, out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

fn build_db(args: BuildDbArgs, file: FileConfig) -> Result<()> {
    let mut cfg = file.grid;
    args.ranges.apply(&mut cfg.orifice, &mut cfg.demand);
    cfg.orifice_steps = args.orifice_steps.unwrap_or(cfg.orifice_steps);
    cfg.demand_steps = args.demand_steps.unwrap_or(cfg.demand_steps);
    args.solver.apply(&mut cfg.solver);
    echo_config("build-db", &serde_json::json!({ "network": args.network, "meters": args.meters, "grid": cfg }));
    let net = load_network(&args.network)?;
    let meters = load_meters(&net, args.meters.as_deref())?;
    let started = std::time::Instant::now();
    let db = scenariodb::build_scenario_db(&net, &meters, &cfg)?;
    db.save(&args.out)?;
    println!(
        "{}: {} scenarios over {} pipes, {} failed cells, {:.1} s, fingerprint {}",
        args.out.display(),
        db.len(),
        db.header.pipes.len(),
        db.header.failures.len(),
        started.elapsed().as_secs_f64(),
        db.fingerprint()
    );
    Ok(())
}

fn build_random(args: BuildRandomArgs, file: FileConfig) -> Result<()> {
    let mut cfg = file.random;
    args.ranges.apply(&mut cfg.orifice, &mut cfg.demand);
    cfg.n_events = args.events.unwrap_or(cfg.n_events);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    args.solver.apply(&mut cfg.solver);
    echo_config("build-random-db", &serde_json::json!({ "network": args.network, "meters": args.meters, "random": cfg }));
    let net = load_network(&args.network)?;
    let meters = load_meters(&net, args.meters.as_deref())?;
    let started = std::time::Instant::now();
    let db = scenariodb::build_random_db(&net, &meters, &cfg)?;
    db.save(&args.out)?;
    println!(
        "{}: {} events, {} failed, {:.1} s, fingerprint {}",
        args.out.display(),
        db.len(),
        db.header.failures.len(),
        started.elapsed().as_secs_f64(),
        db.fingerprint()
    );
    Ok(())
}

fn detect(args: DetectArgs, file: FileConfig) -> Result<()> {
    let mut cfg = file.detection;
    args.detection.apply(&mut cfg);
    let config = serde_json::json!({ "network": args.network, "db": args.db, "obs": args.obs, "detection": cfg });
    echo_config("detect", &config);
    let net = load_network(&args.network)?;
    let db = load_db(&args.db)?;
    check_network(&db, &net, "scenario database")?;
    let obs_text = read(&args.obs)?;
    let obs: Observation = serde_json::from_str(&obs_text).with_context(|| format!("observation {}", args.obs.display()))?;
    let meters = MeterConfig {
        name: "database".into(),
        pressure: db
            .header
            .meters
            .iter()
            .map(|n| leakhunt::network::PressureMeter { node: n.clone(), tag: leakhunt::network::MeterTag::Boundary })
            .collect(),
        flow: Vec::new(),
    };
    let sim = LeakSimulator::new(&net, &meters, db.header.solver)?;
    let base = sim.baseline(obs.demand_multiplier, None)?;
    let baselines: Vec<DmaBaseline> = base
        .references
        .iter()
        .zip(&base.densities)
        .zip(&base.amsi)
        .map(|((r, d), a)| DmaBaseline {
            dma: r.dma.clone(),
            p_ref: r.p_ref,
            alpha_ref: r.alpha_ref,
            leak_density: *d,
            amsi: *a,
        })
        .collect();
    let evidence = obs.evidence(&baselines, &db)?;
    let detector = Detector::new(&net, &db, cfg)?;
    let report = detector.detect(&evidence)?;
    let header = RunHeader::new("detect", config)
        .with_hash("network", net.fingerprint())
        .with_hash("db", db.fingerprint())
        .with_hash("obs", leakhunt::provenance::sha256_hex(obs_text.as_bytes()));
    let json = serde_json::json!({ "provenance": header, "baselines": baselines, "report": report });
    write(&args.out, serde_json::to_string_pretty(&json)? + "\n")?;
    write(&args.out.with_extension("csv"), header.to_comment_block() + &report.to_csv())?;
    if report.is_empty() {
        println!("no DMA exceeds the AMSI threshold {}", cfg.amsi_threshold);
    }
    for d in &report.identified {
        let first: Vec<&str> = d.sequence.iter().take(5).map(|s| s.pipe.as_str()).collect();
        println!("DMA {} (ΔAMSI {:.4}): inspect {} ...", d.dma, d.amsi_delta, first.join(", "));
    }
    Ok(())
}

/// Inputs and settings of a campaign, as recorded in its output headers.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CampaignRecord {
    network: PathBuf,
    db: PathBuf,
    events: PathBuf,
    campaign: CampaignConfig,
}

fn campaign(args: CampaignArgs, file: FileConfig) -> Result<()> {
    let (record, expected) = match &args.replay {
        Some(path) => {
            let text = read(path)?;
            let header = RunHeader::parse_comment_block(&text)
                .filter(|h| h.command == "campaign")
                .ok_or_else(|| fail(2, format!("{} has no campaign header", path.display())))?;
            let record: CampaignRecord =
                serde_json::from_value(header.config.clone()).context("campaign header configuration")?;
            (record, Some(header))
        }
        None => {
            let mut cfg = file.campaign;
            cfg.detection = file.detection;
            args.flags.apply(&mut cfg);
            let missing = || anyhow!("--network, --db and --events are required");
            let record = CampaignRecord {
                network: args.network.clone().ok_or_else(missing)?,
                db: args.db.clone().ok_or_else(missing)?,
                events: args.events.clone().ok_or_else(missing)?,
                campaign: cfg,
            };
            (record, None)
        }
    };
    let config = serde_json::to_value(&record)?;
    echo_config("campaign", &config);
    let net = load_network(&record.network)?;
    let db = load_db(&record.db)?;
    let events = load_db(&record.events)?;
    check_network(&db, &net, "scenario database")?;
    check_network(&events, &net, "event database")?;
    let header = RunHeader::new("campaign", config)
        .with_hash("network", net.fingerprint())
        .with_hash("db", db.fingerprint())
        .with_hash("events", events.fingerprint())
        .with_seed(Some(record.campaign.seed));
    if let Some(old) = &expected {
        if old.hashes != header.hashes {
            return Err(fail(4, "inputs differ from those recorded in the replayed header"));
        }
        if old.version != header.version {
            eprintln!("warning: replaying a header written by version {}", old.version);
        }
    }
    let cfg = record.campaign;
    let detector = Detector::new(&net, &db, cfg.detection)?;
    let started = std::time::Instant::now();
    let results = evaluate::run_campaign(&net, &events, &detector, &cfg)?;
    let summary = evaluate::summarize(&results, &net, db.header.meters.len())?;
    let block = header.to_comment_block();
    let dir = &args.out_dir;
    write(&dir.join("events.csv"), block.clone() + &evaluate::events_csv(&results))?;
    write(&dir.join("classes.csv"), block.clone() + &evaluate::classes_csv(&summary.classes))?;
    write(&dir.join("dmas.csv"), block + &evaluate::dma_csv(&summary.dmas))?;
    let json = serde_json::json!({ "provenance": header, "summary": summary });
    write(&dir.join("summary.json"), serde_json::to_string_pretty(&json)? + "\n")?;
    println!(
        "{} events in {:.1} s: {:.2}% detected ({} wrong DMA, {} undetected, {} failed)",
        summary.n_events,
        started.elapsed().as_secs_f64(),
        summary.detection_rate,
        summary.wrong_dma,
        summary.undetected,
        summary.failed
    );
    print_summary(&summary);
    Ok(())
}

fn print_summary(s: &evaluate::CampaignSummary) {
    println!("class          events detected  true_pred%  avg_pred  length_m  pct_inspect%");
    for c in &s.classes {
        match &c.indicators {
            Some(i) => println!(
                "{:<14} {:>6} {:>8} {:>11.2} {:>9.3} {:>9.1} {:>13.3}",
                c.class.label(),
                c.n_events,
                c.n_detected,
                i.true_prediction,
                i.average_prediction,
                i.length_to_inspect,
                i.percentage_to_inspect
            ),
            None => println!("{:<14} {:>6} {:>8}  (no detected events)", c.class.label(), c.n_events, c.n_detected),
        }
    }
    println!(
        "always predicted {:.2}%  never predicted {:.2}%  random inspection baseline {:.2}%",
        s.sampling.always_predicted, s.sampling.never_predicted, s.random_baseline
    );
    for d in &s.dmas {
        match d.prediction_index {
            Some(pi) => println!(
                "DMA {:<6} {:>4} pipes  {:>5} events  PI {:.3}  avg inspection {:.1} m",
                d.dma,
                d.n_pipes,
                d.n_events,
                pi,
                d.avg_inspection_length.unwrap_or(0.0)
            ),
            None => println!("DMA {:<6} {:>4} pipes  no detected events", d.dma, d.n_pipes),
        }
    }
}

fn compare(args: CompareArgs, file: FileConfig) -> Result<()> {
    let mut cfg = file.campaign;
    cfg.detection = file.detection;
    args.flags.apply(&mut cfg);
    let config = serde_json::json!({
        "network": args.network, "db": args.db, "events": args.events, "layouts": args.layouts, "campaign": cfg,
    });
    echo_config("compare-meters", &config);
    let net = load_network(&args.network)?;
    let db = load_db(&args.db)?;
    let events = load_db(&args.events)?;
    check_network(&db, &net, "scenario database")?;
    check_network(&events, &net, "event database")?;
    let layouts = args
        .layouts
        .iter()
        .map(|p| Ok(MeterConfig::load(p)?))
        .collect::<Result<Vec<_>>>()?;
    let rows = evaluate::compare_meter_configs(&net, &db, &events, &layouts, &cfg)?;
    let mut header = RunHeader::new("compare-meters", config)
        .with_hash("network", net.fingerprint())
        .with_hash("db", db.fingerprint())
        .with_hash("events", events.fingerprint())
        .with_seed(Some(cfg.seed));
    for (i, layout) in layouts.iter().enumerate() {
        header = header.with_hash(&format!("layout{}", i + 1), layout.fingerprint());
    }
    let table = evaluate::comparison_csv(&rows);
    write(&args.out, header.to_comment_block() + &table)?;
    print!("{table}");
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    echo_config("report", &serde_json::json!({ "network": args.network, "events": args.events }));
    let net = load_network(&args.network)?;
    let text = read(&args.events)?;
    let results = evaluate::parse_events_csv(&text).map_err(|e| fail(2, format!("{}: {e}", args.events.display())))?;
    let source = RunHeader::parse_comment_block(&text);
    let summary = evaluate::summarize(&results, &net, net.meters.len())?;
    print_summary(&summary);
    if let Some(dir) = &args.out_dir {
        let mut header = RunHeader::new("report", serde_json::json!({ "network": args.network, "events": args.events }))
            .with_hash("network", net.fingerprint())
            .with_hash("events", leakhunt::provenance::sha256_hex(text.as_bytes()));
        if let Some(seed) = source.and_then(|h| h.seed) {
            header = header.with_seed(Some(seed));
        }
        let block = header.to_comment_block();
        write(&dir.join("classes.csv"), block.clone() + &evaluate::classes_csv(&summary.classes))?;
        write(&dir.join("dmas.csv"), block + &evaluate::dma_csv(&summary.dmas))?;
    }
    if summary.n_events == 0 {
        bail!("event table is empty");
    }
    Ok(())
}
