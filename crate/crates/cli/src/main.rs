use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use immunet_core::rng::{derive_seed, Stream};
use immunet_core::scenario::{ScenarioError, ScenarioFile};
use immunet_core::threat::TrafficRecord;
use immunet_core::{generate_topology, MetricsReport, Simulation, Strategy};

#[derive(Parser)]
#[command(name = "immunet", version, about = "Run artificial-cell network security simulations")]
struct Cli {
    /// Directory for output files (overrides the scenario's output.out_dir).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Dump nonzero trail values after every timestep to trails.csv.
    #[arg(long, global = true)]
    verbose_trails: bool,
    /// Log every resolved traffic packet to traffic.csv.
    #[arg(long, global = true)]
    verbose_traffic: bool,
    /// Parallel runs for `sweep` (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario once and write summary.json and timeseries.csv.
    Run { scenario: PathBuf },
    /// Run every (strategy, seed) pair listed in the scenario's sweep table.
    Sweep { scenario: PathBuf },
    /// Generate the scenario's topology and write it as a topology file.
    GenTopology { config: PathBuf, out: PathBuf },
    /// Parse and validate a scenario without running it.
    Validate { scenario: PathBuf },
}

enum Failure {
    Config(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Io(_) => 2,
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Config(format!("invalid scenario: {e}"))
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    ExitCode::from(execute(std::env::args_os()))
}

/// Parses `args` and runs the command, returning the process exit code.
fn execute<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(f) => {
            let (Failure::Config(msg) | Failure::Io(msg)) = &f;
            eprintln!("error: {msg}");
            f.code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Validate { scenario } => {
            let s = ScenarioFile::load(scenario)?;
            s.load_topology()?;
            println!("{}: ok", scenario.display());
            Ok(())
        }
        Command::GenTopology { config, out } => {
            let s = ScenarioFile::load(config)?;
            let seed = s.topology.seed.unwrap_or_else(|| derive_seed(s.run.seed, Stream::Topology));
            let topology =
                generate_topology(&s.topology, seed).map_err(|e| Failure::Config(format!("invalid scenario: {e}")))?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            fs::write(out, topology.to_text()).map_err(io_err(out))
        }
        Command::Run { scenario } => run(cli, scenario),
        Command::Sweep { scenario } => sweep(cli, scenario),
    }
}

fn out_dir(cli: &Cli, scenario: &ScenarioFile) -> Result<PathBuf, Failure> {
    let dir = cli
        .out_dir
        .clone()
        .or_else(|| scenario.output.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn simulation(scenario: &ScenarioFile, strategy: Strategy, seed: u64) -> Result<Simulation, Failure> {
    let config = scenario.simulation_for(strategy, seed);
    let sim = match scenario.load_topology()? {
        Some(topology) => Simulation::with_topology(config, topology),
        None => Simulation::new(config),
    };
    sim.map_err(|e| Failure::Config(format!("invalid scenario: {e}")))
}

fn run(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let scenario = ScenarioFile::load(path)?;
    let dir = out_dir(cli, &scenario)?;
    let mut sim = simulation(&scenario, scenario.run.strategy, scenario.run.seed)?;

    let trails_path = dir.join("trails.csv");
    let mut trails = if cli.verbose_trails {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&trails_path).map_err(io_err(&trails_path))?));
        w.write_record(["t", "node", "link", "type", "value"]).map_err(csv_err(&trails_path))?;
        Some(w)
    } else {
        None
    };
    let traffic_path = dir.join("traffic.csv");
    let mut traffic = if cli.verbose_traffic {
        sim.enable_traffic_log();
        Some(csv::Writer::from_writer(BufWriter::new(
            File::create(&traffic_path).map_err(io_err(&traffic_path))?,
        )))
    } else {
        None
    };

    while !sim.is_finished() {
        let t = sim.time();
        sim.step();
        if let (Some(w), Some(table)) = (trails.as_mut(), sim.trail_table()) {
            for (node, link, ty, value) in table.nonzero_entries(sim.topology()) {
                w.write_record([t.to_string(), node.to_string(), link.to_string(), ty.to_string(), value.to_string()])
                    .map_err(csv_err(&trails_path))?;
            }
        }
        if let Some(w) = traffic.as_mut() {
            for record in sim.drain_traffic_log() {
                w.serialize(TrafficRow::from(&record)).map_err(csv_err(&traffic_path))?;
            }
        }
    }
    if let Some(mut w) = trails {
        w.flush().map_err(io_err(&trails_path))?;
    }
    if let Some(mut w) = traffic {
        w.flush().map_err(io_err(&traffic_path))?;
    }

    let report = sim.into_report();
    let summary = dir.join("summary.json");
    fs::write(&summary, report.summary_json()).map_err(io_err(&summary))?;
    let series = dir.join("timeseries.csv");
    fs::write(&series, report.csv()).map_err(io_err(&series))?;
    println!(
        "{} seed {}: detection_rate {:.4}, control_bandwidth {}, written to {}",
        report.strategy,
        report.seed,
        report.detection_rate(),
        report.control_bandwidth,
        dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrafficRow {
    t: u64,
    packet: u64,
    source: u32,
    destination: u32,
    intrusion: Option<u16>,
    fate: &'static str,
}

impl From<&TrafficRecord> for TrafficRow {
    fn from(r: &TrafficRecord) -> Self {
        TrafficRow {
            t: r.t,
            packet: r.packet,
            source: r.source.0,
            destination: r.destination.0,
            intrusion: r.intrusion.map(|ty| ty.0),
            fate: match r.fate {
                immunet_core::threat::PacketFate::Detected => "detected",
                immunet_core::threat::PacketFate::Infected => "infected",
                immunet_core::threat::PacketFate::Delivered => "delivered",
            },
        }
    }
}

#[derive(Serialize)]
struct SweepRow {
    strategy: &'static str,
    seed: u64,
    detection_rate: f64,
    checked_fraction: f64,
    redundant_checks: u64,
    control_bandwidth: u64,
    notification_packets: u64,
    intrusions_introduced: u64,
    intrusions_detected: u64,
    final_deficient_nodes: u32,
}

impl SweepRow {
    fn new(r: &MetricsReport) -> SweepRow {
        let half = r.final_half();
        SweepRow {
            strategy: r.strategy.label(),
            seed: r.seed,
            detection_rate: r.detection_rate(),
            checked_fraction: r.checked_fraction(r.coverage_window, half.clone()),
            redundant_checks: r.redundant_check_count((r.coverage_window / 4).max(1), half),
            control_bandwidth: r.control_bandwidth,
            notification_packets: r.notification_total,
            intrusions_introduced: r.introduced,
            intrusions_detected: r.detected,
            final_deficient_nodes: r.deficiency_series.last().copied().unwrap_or(0),
        }
    }
}

#[derive(Serialize)]
struct ComparisonRow {
    strategy: &'static str,
    runs: usize,
    mean_detection_rate: f64,
    mean_checked_fraction: f64,
    mean_control_bandwidth: f64,
}

fn sweep(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let scenario = ScenarioFile::load(path)?;
    let dir = out_dir(cli, &scenario)?;
    let mut strategies = scenario.sweep.strategies.clone();
    strategies.sort_by_key(|s| s.label());
    strategies.dedup();
    let mut seeds = scenario.sweep.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let jobs: Vec<(Strategy, u64)> = strategies
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        pool = pool.num_threads(n.max(1));
    }
    let pool = pool.build().map_err(|e| Failure::Io(format!("thread pool: {e}")))?;
    let results: Vec<Result<SweepRow, Failure>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(strategy, seed)| Ok(SweepRow::new(&simulation(&scenario, strategy, seed)?.run_to_end())))
            .collect()
    });
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let sweep_path = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&sweep_path).map_err(csv_err(&sweep_path))?;
    for row in &rows {
        w.serialize(row).map_err(csv_err(&sweep_path))?;
    }
    w.flush().map_err(io_err(&sweep_path))?;

    let comparison: Vec<ComparisonRow> = strategies
        .iter()
        .map(|s| {
            let mine: Vec<&SweepRow> = rows.iter().filter(|r| r.strategy == s.label()).collect();
            let mean = |f: fn(&SweepRow) -> f64| mine.iter().map(|r| f(r)).sum::<f64>() / mine.len() as f64;
            ComparisonRow {
                strategy: s.label(),
                runs: mine.len(),
                mean_detection_rate: mean(|r| r.detection_rate),
                mean_checked_fraction: mean(|r| r.checked_fraction),
                mean_control_bandwidth: mean(|r| r.control_bandwidth as f64),
            }
        })
        .collect();
    let cmp_path = dir.join("comparison.csv");
    let mut w = csv::Writer::from_path(&cmp_path).map_err(csv_err(&cmp_path))?;
    for row in &comparison {
        w.serialize(row).map_err(csv_err(&cmp_path))?;
    }
    w.flush().map_err(io_err(&cmp_path))?;

    let stdout = io::stdout();
    let mut out = stdout.lock();
    let _ = writeln!(out, "{:<14} {:>5} {:>15} {:>16} {:>18}", "strategy", "runs", "detection_rate", "checked_fraction", "control_bandwidth");
    for c in &comparison {
        let _ = writeln!(
            out,
            "{:<14} {:>5} {:>15.4} {:>16.4} {:>18.1}",
            c.strategy, c.runs, c.mean_detection_rate, c.mean_checked_fraction, c.mean_control_bandwidth
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use immunet_core::Topology;

    const SMALL: &str = r#"
[topology]
node_count = 25

[cells]
intrusion_types = 3
packet_checkers_per_type = 10
node_checkers_per_type = 1

[security]
min_sec = 1.0

[run]
duration = 60
seed = 9

[sweep]
seeds = [2, 1]
strategies = ["trails", "uninformed"]
"#;

    fn scenario(dir: &Path, text: &str) -> PathBuf {
        let path = dir.join("scenario.toml");
        fs::write(&path, text).unwrap();
        path
    }

    fn args(parts: &[&dyn AsRef<std::ffi::OsStr>]) -> Vec<std::ffi::OsString> {
        std::iter::once("immunet".into()).chain(parts.iter().map(|p| p.as_ref().to_owned())).collect()
    }

    fn failure(parts: &[&dyn AsRef<std::ffi::OsStr>]) -> Failure {
        let cli = Cli::try_parse_from(args(parts)).unwrap();
        match dispatch(&cli) {
            Ok(()) => panic!("command succeeded"),
            Err(f) => f,
        }
    }

    #[test]
    fn negative_min_sec_is_a_config_error_naming_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = scenario(dir.path(), "[security]\nmin_sec = -1\n");
        assert_eq!(execute(args(&[&"validate", &path])), 1);
        let Failure::Config(msg) = failure(&[&"validate", &path]) else { panic!("expected config error") };
        assert!(msg.contains("security.min_sec"), "{msg}");
    }

    #[test]
    fn unknown_key_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = scenario(dir.path(), "[run]\nduraton = 5\n");
        let Failure::Config(msg) = failure(&[&"validate", &path]) else { panic!("expected config error") };
        assert!(msg.contains("run.duraton"), "{msg}");
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(execute(args(&[&"run", &dir.path().join("absent.toml")])), 2);
        assert_eq!(execute(args(&[&"validate", &dir.path().join("absent.toml")])), 2);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(execute(["immunet", "frobnicate"]), 1);
        assert_eq!(execute(["immunet", "run"]), 1);
    }

    #[test]
    fn validate_accepts_shipped_scenarios() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
        for name in ["reference.toml", "fragmented.toml"] {
            assert_eq!(execute(args(&[&"validate", &root.join(name)])), 0, "{name}");
        }
    }

    #[test]
    fn repeated_runs_write_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = scenario(dir.path(), SMALL);
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        for out in [&a, &b] {
            let code = execute(args(&[&"run", &path, &"--out-dir", out, &"--verbose-trails", &"--verbose-traffic"]));
            assert_eq!(code, 0);
        }
        for file in ["summary.json", "timeseries.csv", "trails.csv", "traffic.csv"] {
            let (x, y) = (fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap());
            assert!(!x.is_empty(), "{file} empty");
            assert_eq!(x, y, "{file} differs");
        }
        let series = fs::read_to_string(a.join("timeseries.csv")).unwrap();
        assert_eq!(series.lines().count(), 61);
        assert!(series.starts_with(immunet_core::metrics::CSV_HEADER));
        assert!(fs::read_to_string(a.join("trails.csv")).unwrap().starts_with("t,node,link,type,value\n"));
    }

    #[test]
    fn sweep_writes_sorted_rows_and_comparison() {
        let dir = tempfile::tempdir().unwrap();
        let path = scenario(dir.path(), SMALL);
        let out = dir.path().join("sweep");
        assert_eq!(execute(args(&[&"sweep", &path, &"--out-dir", &out, &"--jobs", &"2"])), 0);
        let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
        let keys: Vec<String> = sweep.lines().skip(1).map(|l| l.split(',').take(2).collect::<Vec<_>>().join(",")).collect();
        assert_eq!(keys, ["trails,1", "trails,2", "uninformed,1", "uninformed,2"]);
        let comparison = fs::read_to_string(out.join("comparison.csv")).unwrap();
        assert_eq!(comparison.lines().count(), 3);
        assert!(comparison.lines().nth(1).unwrap().starts_with("trails,2,"));
    }

    #[test]
    fn gen_topology_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = scenario(dir.path(), SMALL);
        let out = dir.path().join("nested/net.txt");
        assert_eq!(execute(args(&[&"gen-topology", &path, &out])), 0);
        let text = fs::read_to_string(&out).unwrap();
        assert!(text.starts_with("nodes 25\n"));
        let topo = Topology::from_text(&text).unwrap();
        assert_eq!(topo.node_count(), 25);
        assert_eq!(topo.to_text(), text);
    }
}
