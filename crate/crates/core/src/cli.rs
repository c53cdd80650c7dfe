//! Command-line front end: `simulate`, `validate`, `fit-routes`, `scenario`
//! and `synth`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::agents::CrowdLimit;
use crate::demand::{
    parse_journeys, reshape_demand, scale_population, synthesize_demand, write_journeys, DemandProfile, JourneyRecord,
};
use crate::des::RngStream;
use crate::metrics::{self, DurationsByOd, DEFAULT_MIN_OD_DEMAND};
use crate::network::Network;
use crate::routing::{fit_route_choice, RouteChoiceTable, RouteFitOptions};
use crate::scenarios::{self, ScenarioKind, ScenarioSpec};
use crate::simulation::{self, run_replications, SimConfig};

#[derive(Debug, Parser)]
#[command(name = "rts-sim", version, about = "Agent-based rapid-transit simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run replications and write report.csv, durations.csv, crowdedness.csv.
    Simulate(SimulateArgs),
    /// Compare simulated durations with observed ones; writes gof.csv.
    Validate(ValidateArgs),
    /// Fit route choice from observed durations; writes routes.csv.
    FitRoutes(FitRoutesArgs),
    /// Population sweep under crowd limits (A) or demand reshaping (B).
    Scenario(ScenarioArgs),
    /// Generate synthetic journeys.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Directory with stations.csv, edges.csv, walktimes.csv (and lines.csv).
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long)]
    pub journeys: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    /// Station crowd limit (`inf` for none).
    #[arg(long, default_value = "inf")]
    pub psi: CrowdLimit,
    /// Resample the journeys to this many before simulating.
    #[arg(long)]
    pub population: Option<usize>,
    /// Share of peak commuters moved out of the peak.
    #[arg(long)]
    pub phi: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub max_parallel: usize,
    #[arg(long, default_value_t = 1.0)]
    pub capacity_scale: f64,
    #[arg(long)]
    pub walk_sd_fraction: Option<f64>,
    /// Route-choice table from `fit-routes`.
    #[arg(long, conflicts_with = "shortest_path")]
    pub routes: Option<PathBuf>,
    /// Send every commuter along the shortest route.
    #[arg(long)]
    pub shortest_path: bool,
    /// Also write events.log.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub network: PathBuf,
    /// Journeys with observed durations.
    #[arg(long)]
    pub journeys: PathBuf,
    /// durations.csv from `simulate`.
    #[arg(long)]
    pub durations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_OD_DEMAND)]
    pub min_od_demand: usize,
    /// Label for the `day` column.
    #[arg(long, default_value = "day")]
    pub day: String,
}

#[derive(Debug, Args)]
pub struct FitRoutesArgs {
    #[arg(long)]
    pub network: PathBuf,
    /// Journeys with observed durations.
    #[arg(long)]
    pub journeys: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub k_max: usize,
    /// Seconds added to route times before matching.
    #[arg(long, default_value_t = 0.0)]
    pub access_overhead: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// `A` or `B`.
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub network: PathBuf,
    /// Base journeys to resample.
    #[arg(long)]
    pub journeys: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file of spec keys; flags override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Comma-separated crowd limits (one value for kind B).
    #[arg(long, value_delimiter = ',')]
    pub psi: Option<Vec<CrowdLimit>>,
    /// Comma-separated participation ratios.
    #[arg(long, value_delimiter = ',')]
    pub phi: Option<Vec<f64>>,
    /// `N` or `START:END:STEP`.
    #[arg(long)]
    pub population: Option<String>,
    #[arg(long)]
    pub max_parallel: Option<usize>,
    #[arg(long)]
    pub capacity_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub network: PathBuf,
    /// Output journeys file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: usize,
    /// `monday` or `desk`.
    #[arg(long, default_value = "monday")]
    pub profile: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Validate(a) => validate(a),
        Command::FitRoutes(a) => fit_routes(a),
        Command::Scenario(a) => scenario(a),
        Command::Synth(a) => synth(a),
    }
}

fn load_network(dir: &Path) -> Result<Network> {
    Network::load(dir).with_context(|| format!("loading network from {}", dir.display()))
}

fn load_journeys(path: &Path, net: &Network) -> Result<Vec<JourneyRecord>> {
    let parsed = parse_journeys(path, net).with_context(|| format!("reading journeys from {}", path.display()))?;
    if parsed.malformed > 0 {
        eprintln!("{}: skipped {} malformed rows", path.display(), parsed.malformed);
    }
    Ok(parsed.records)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let net = load_network(&a.network)?;
    let mut records = load_journeys(&a.journeys, &net)?;
    if let Some(n) = a.population {
        records = scale_population(&records, n, &mut RngStream::new(a.seed, "scale-population"))?;
    }
    if let Some(phi) = a.phi {
        records = reshape_demand(&records, phi, &mut RngStream::new(a.seed, "reshape"))?;
    }
    let routes = match (&a.routes, a.shortest_path) {
        (Some(p), false) => Some(Arc::new(
            RouteChoiceTable::read_csv(&net, p).with_context(|| format!("reading routes from {}", p.display()))?,
        )),
        _ => None,
    };
    let config = SimConfig {
        seed: a.seed,
        psi: a.psi,
        capacity_scale: a.capacity_scale,
        walk_sd_fraction: a.walk_sd_fraction,
        routes,
        trace: a.trace,
        ..SimConfig::default()
    };
    let reports = run_replications(&net, &config, &records, a.runs, a.max_parallel)?;
    create_dir(&a.out)?;
    simulation::write_outputs(&a.out, &net, &reports)?;
    for (i, r) in reports.iter().enumerate() {
        println!(
            "run {i}: departed {} rejected {} stranded {} mean {:.1} s missed events {}",
            r.departed, r.rejected, r.stranded, r.mean_duration, r.missed_events
        );
    }
    Ok(())
}

fn observed(records: &[JourneyRecord]) -> DurationsByOd {
    let mut out = DurationsByOd::new();
    for r in records {
        if let Some(d) = r.observed_duration {
            out.entry((r.origin, r.destination)).or_default().push(f64::from(d));
        }
    }
    out
}

fn validate(a: ValidateArgs) -> Result<()> {
    let net = load_network(&a.network)?;
    let empirical = observed(&load_journeys(&a.journeys, &net)?);
    let simulated = simulation::read_durations(&a.durations, &net)
        .with_context(|| format!("reading simulated durations from {}", a.durations.display()))?;
    let rows = metrics::validate_durations(&net, &a.day, &empirical, &simulated, a.min_od_demand)?;
    let summary = metrics::summarize(&a.day, &rows);
    create_dir(&a.out)?;
    metrics::write_csv(&a.out.join("gof.csv"), &rows)?;
    metrics::write_csv(&a.out.join("gof_summary.csv"), std::slice::from_ref(&summary))?;
    println!(
        "{}: {} O-D pairs, mean BC {:.4}, PPCC {:.4}, F {:.4}, C {:.4}, Q {:.4}",
        summary.day, summary.od_pairs, summary.mean_bc, summary.mean_ppcc, summary.mean_f, summary.mean_c, summary.mean_q
    );
    Ok(())
}

fn fit_routes(a: FitRoutesArgs) -> Result<()> {
    let net = load_network(&a.network)?;
    let empirical = observed(&load_journeys(&a.journeys, &net)?);
    if empirical.is_empty() {
        bail!("{} has no observed durations", a.journeys.display());
    }
    let mut opts = RouteFitOptions {
        k_max: a.k_max,
        access_overhead: a.access_overhead,
        ..RouteFitOptions::default()
    };
    opts.gumbel.seed = a.seed;
    let (table, skipped) = fit_route_choice(&net, &empirical, &opts)?;
    create_dir(&a.out)?;
    let path = a.out.join("routes.csv");
    table.write_csv(&net, &path)?;
    println!(
        "fitted {} O-D pairs, {} left to the shortest route; wrote {}",
        table.len(),
        skipped.len(),
        path.display()
    );
    Ok(())
}

fn parse_population(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |p: &str| p.trim().parse::<usize>().with_context(|| format!("bad population `{s}`"));
    match parts.as_slice() {
        [n] => {
            let n = num(n)?;
            Ok((n, n, 1))
        }
        [a, b, c] => Ok((num(a)?, num(b)?, num(c)?)),
        _ => bail!("population must be N or START:END:STEP, got `{s}`"),
    }
}

fn scenario(a: ScenarioArgs) -> Result<()> {
    let kind: ScenarioKind = a.kind.parse()?;
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading spec {}", p.display()))?;
            ScenarioSpec::from_toml(&text).with_context(|| format!("parsing spec {}", p.display()))?
        }
        None => ScenarioSpec::default(),
    };
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(v) = a.runs {
        spec.runs = v;
    }
    if let Some(v) = a.max_parallel {
        spec.max_parallel = v;
    }
    if let Some(v) = a.capacity_scale {
        spec.capacity_scale = v;
    }
    if let Some(p) = &a.population {
        (spec.population_start, spec.population_end, spec.population_step) = parse_population(p)?;
    }
    if let Some(v) = a.phi {
        spec.phi_values = v;
    }
    if let Some(v) = a.psi {
        match kind {
            ScenarioKind::A => spec.psi_values = v,
            ScenarioKind::B => match v.as_slice() {
                [one] => spec.psi = *one,
                _ => bail!("scenario B takes a single --psi value"),
            },
        }
    }
    spec.validate(kind)?;

    let net = load_network(&a.network)?;
    let base = load_journeys(&a.journeys, &net)?;
    create_dir(&a.out)?;
    let template = SimConfig::default();
    let knees = match kind {
        ScenarioKind::A => {
            let cells = scenarios::run_scenario_a(&net, &base, &spec, &template)?;
            scenarios::write_csv(&a.out.join("scenario_a.csv"), &scenarios::scenario_a_rows(&cells))?;
            scenarios::critical_points(&cells)
        }
        ScenarioKind::B => {
            let cells = scenarios::run_scenario_b(&net, &base, &spec, &template)?;
            scenarios::write_csv(&a.out.join("scenario_b.csv"), &scenarios::scenario_b_rows(&cells))?;
            scenarios::critical_points(cells.iter().map(|c| &c.cell))
        }
    };
    scenarios::write_csv(&a.out.join("critical_points.csv"), &knees)?;
    for k in &knees {
        let at = k.knee_population.map_or_else(|| "none".to_string(), |p| p.to_string());
        println!("critical point {} {}: {at}", k.setting, k.indicator);
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let net = load_network(&a.network)?;
    let profile = match a.profile.as_str() {
        "monday" => DemandProfile::monday(&net)?,
        "desk" => DemandProfile::desk(&net)?,
        other => bail!("unknown profile `{other}` (expected monday or desk)"),
    };
    let records = synthesize_demand(&profile, a.n, &mut RngStream::new(a.seed, "synthesize"));
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_journeys(&a.out, &net, &records)?;
    println!("wrote {} journeys to {}", records.len(), a.out.display());
    Ok(())
}
