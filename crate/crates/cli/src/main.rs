//! `nel`: build stage networks, compute effective resistances and run
//! convergence experiments.
//!
//! Exit codes: 0 pass, 1 assertion failure, 2 resource cap, 3 numeric or
//! singular failure, 4 configuration or input error.

mod manifest;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use nel_core::convergence_lab::{
    compactness_lower_bound, density_limit, equivalence_gap, extra_assumption_probe,
    finite_energy_limit, gamma_limsup_probe, i_limit_continuum, i_limit_fixed_n, local_baseline,
    parse_scale, parse_weights, resistance_bounds_suite, ConvergenceReport, ExperimentConfig,
    CONFIG_KEYS,
};
use nel_core::geometry::{parse_rational, rational_label};
use nel_core::index_space::DEFAULT_PATH_CAP;
use nel_core::network::{
    build_network_capped, reduce_to_pair, ConductanceNetwork, KernelSpec, Network, NetworkJson,
    ResistanceSolver, Source, DEFAULT_SOLVER_NODE_CAP,
};
use nel_core::sum::with_threads;
use nel_core::{fmt17, Error};

use crate::manifest::{manifest_path_for, RunManifest};

const CHECK_TOL: f64 = 1e-9;

#[derive(Parser)]
#[command(
    name = "nel",
    version,
    about = "Nonlocal electrical networks on dyadic grids"
)]
struct Cli {
    /// Worker threads (0 uses every core). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a stage network and write it as JSON.
    Build(BuildCmd),
    /// Effective resistances of a network.
    Resistance(ResistanceCmd),
    /// Run a convergence experiment from a config file.
    Experiment(ExperimentCmd),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceKind {
    Kernel,
    Weights,
}

#[derive(Args, Clone)]
struct NetworkArgs {
    /// Index-space vertex.
    #[arg(long)]
    i: Option<u64>,
    /// Stage.
    #[arg(long)]
    n: Option<u32>,
    #[arg(long, value_enum, default_value = "kernel")]
    source: SourceKind,
    /// frac | perturbed
    #[arg(long, default_value = "frac")]
    kernel: String,
    #[arg(long, default_value_t = 0.25)]
    s: f64,
    /// Amplitude of the perturbed kernel.
    #[arg(long, default_value_t = 0.5)]
    amplitude: f64,
    /// Frequency of the perturbed kernel.
    #[arg(long, default_value_t = 7.0)]
    frequency: f64,
    /// one | i2 | <number>
    #[arg(long, default_value = "one")]
    scale: String,
    /// uniform:r | random:seed,lo,hi | stage1:a,b,g
    #[arg(long, default_value = "uniform:1")]
    weights: String,
    /// Largest number of wires.
    #[arg(long, default_value_t = DEFAULT_PATH_CAP)]
    cap: u128,
}

impl NetworkArgs {
    fn stage(&self) -> Result<(u64, u32), Error> {
        match (self.i, self.n) {
            (Some(i), Some(n)) => Ok((i, n)),
            _ => Err(Error::Config("--i and --n are required".into())),
        }
    }

    fn source(&self) -> Result<Source, Error> {
        let source = match self.source {
            SourceKind::Weights => Source::Weights(parse_weights(&self.weights)?),
            SourceKind::Kernel => {
                let k = match self.kernel.as_str() {
                    "frac" | "fractional" => KernelSpec::fractional(self.s),
                    "perturbed" => KernelSpec::perturbed(self.s, self.amplitude, self.frequency),
                    other => return Err(Error::Config(format!("unknown kernel {other:?}"))),
                };
                Source::Kernel(k.with_scale(parse_scale(&self.scale)?))
            }
        };
        source
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(source)
    }

    fn build(&self) -> Result<Network, Error> {
        let (i, n) = self.stage()?;
        build_cached(i, n, &self.source()?, self.cap)
    }
}

#[derive(Args)]
struct BuildCmd {
    #[command(flatten)]
    network: NetworkArgs,
    /// Output file (default network-i<i>-n<n>.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Reduce {
    Solve,
    Starmesh,
}

#[derive(Args)]
struct ResistanceCmd {
    /// Network JSON from `build`, or an `x,y,conductance` CSV edge list.
    #[arg(long, conflicts_with_all = ["i", "random"])]
    network: Option<PathBuf>,
    #[command(flatten)]
    build: NetworkArgs,
    /// Use a random connected network with this many nodes.
    #[arg(long, conflicts_with = "i")]
    random: Option<usize>,
    /// Seed for --random.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// First node label (default: first node).
    #[arg(long)]
    x: Option<String>,
    /// Second node label (default: last node).
    #[arg(long)]
    y: Option<String>,
    /// Every node pair.
    #[arg(long, conflicts_with_all = ["x", "y"])]
    all_pairs: bool,
    #[arg(long, value_enum, default_value = "solve")]
    reduce: Reduce,
    /// Compare star-mesh reduction with the Laplacian solve.
    #[arg(long)]
    check: bool,
    /// Largest node count for dense solves.
    #[arg(long, default_value_t = DEFAULT_SOLVER_NODE_CAP)]
    solver_cap: usize,
    /// CSV output file (default stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Experiment {
    /// Energies of restrictions against the continuum target.
    Converge,
    /// Energies of cell averages.
    Density,
    /// Gap between the two approaches.
    Gap,
    /// Recovery-sequence probe.
    Gamma,
    /// Compactness lower bound on random functions.
    Compact,
    /// Energies as i grows at fixed n.
    Ilimit,
    /// Nearest-neighbour baseline.
    Local,
    /// Per-stage resistance bounds.
    Bounds,
    /// Sampled auxiliary assumption (diagnostic only).
    Assumption,
}

impl Experiment {
    fn name(self) -> &'static str {
        match self {
            Experiment::Converge => "converge",
            Experiment::Density => "density",
            Experiment::Gap => "gap",
            Experiment::Gamma => "gamma",
            Experiment::Compact => "compact",
            Experiment::Ilimit => "ilimit",
            Experiment::Local => "local",
            Experiment::Bounds => "bounds",
            Experiment::Assumption => "assumption",
        }
    }
}

#[derive(Args)]
struct ExperimentCmd {
    #[arg(value_enum)]
    kind: Experiment,
    /// Flat `key = value` config; unset keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` lines applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory for reports.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Also write two-column gnuplot data.
    #[arg(long)]
    gnuplot: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::ResourceCap { .. } | Error::Overflow(_) => 2,
        Error::Singular(_) | Error::Quadrature { .. } | Error::Divergent(_) => 3,
        Error::Domain(_)
        | Error::NotAWire { .. }
        | Error::StageMismatch { .. }
        | Error::Config(_)
        | Error::Parse(_)
        | Error::Io(_) => 4,
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Builds a network, memoising it under `NEL_CACHE_DIR` when that is set.
fn build_cached(i: u64, n: u32, source: &Source, cap: u128) -> Result<Network, Error> {
    let Some(dir) = std::env::var_os("NEL_CACHE_DIR") else {
        return build_network_capped(i, n, source, cap);
    };
    let key = hex(&Sha256::digest(format!("{i}:{n}:{source:?}").as_bytes()));
    let path = Path::new(&dir).join(format!("network-i{i}-n{n}-{}.json", &key[..16]));
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(doc) = serde_json::from_str::<NetworkJson>(&text) {
            if let Ok(net) = Network::from_json(&doc) {
                return Ok(net);
            }
        }
    }
    let net = build_network_capped(i, n, source, cap)?;
    fs::create_dir_all(&dir)?;
    fs::write(&path, serde_json::to_string(&net.to_json())?)?;
    Ok(net)
}

fn cmd_build(cmd: &BuildCmd, threads: usize) -> Result<u8, Error> {
    let started = Instant::now();
    let (i, n) = cmd.network.stage()?;
    let net = cmd.network.build()?;
    let out = cmd
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("network-i{i}-n{n}.json")));
    let config = format!("i = {i}\nn = {n}\nsource = {:?}\n", cmd.network.source()?);
    let seed = match cmd.network.source()? {
        Source::Weights(nel_core::index_space::WeightAssignment::Random { seed, .. }) => Some(seed),
        _ => None,
    };
    let mut manifest = RunManifest::new("build", config, seed, threads);
    let text = serde_json::to_string_pretty(&net.to_json())? + "\n";
    manifest.write_output(&out, text.as_bytes())?;
    manifest.finish(started, &manifest_path_for(&out))?;
    println!("nodes: {}, wires: {}", net.node_count(), net.wire_count());
    println!("wrote {}", out.display());
    Ok(0)
}

/// Spanning tree plus random chords, conductances in `[0.1, 10)`.
fn random_network(nodes: usize, seed: u64) -> Result<ConductanceNetwork, Error> {
    if nodes < 2 {
        return Err(Error::Config("--random needs at least 2 nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cn = ConductanceNetwork::new((0..nodes).map(|k| format!("v{k}")).collect());
    for k in 1..nodes {
        let parent = rng.random_range(0..k);
        cn.add_conductance(parent, k, rng.random_range(0.1..10.0))?;
    }
    for _ in 0..rng.random_range(0..=2 * nodes) {
        let (x, y) = (rng.random_range(0..nodes), rng.random_range(0..nodes));
        if x != y {
            cn.add_conductance(x, y, rng.random_range(0.1..10.0))?;
        }
    }
    Ok(cn)
}

fn load_network(cmd: &ResistanceCmd) -> Result<ConductanceNetwork, Error> {
    if let Some(path) = &cmd.network {
        let text = fs::read_to_string(path)?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        return if is_json {
            let doc: NetworkJson = serde_json::from_str(&text)?;
            Ok(Network::from_json(&doc)?.to_conductance_network())
        } else {
            ConductanceNetwork::read_csv(text.as_bytes())
        };
    }
    if let Some(nodes) = cmd.random {
        return random_network(nodes, cmd.seed);
    }
    Ok(cmd.build.build()?.to_conductance_network())
}

fn find_node(cn: &ConductanceNetwork, label: &str) -> Result<usize, Error> {
    if let Some(k) = cn.index_of(label) {
        return Ok(k);
    }
    parse_rational(label)
        .ok()
        .and_then(|r| cn.index_of(&rational_label(&r)))
        .ok_or_else(|| Error::Config(format!("no node labelled {label:?}")))
}

fn cmd_resistance(cmd: &ResistanceCmd, threads: usize) -> Result<u8, Error> {
    let started = Instant::now();
    let cn = load_network(cmd)?;
    let count = cn.node_count();
    if count < 2 {
        return Err(Error::Config("the network needs at least two nodes".into()));
    }
    if count > cmd.solver_cap && (cmd.reduce == Reduce::Solve || cmd.check) {
        return Err(Error::ResourceCap {
            what: "dense resistance solve",
            requested: count as u128,
            cap: cmd.solver_cap as u128,
        });
    }
    if !cn.is_connected() {
        return Err(Error::Singular("network is disconnected".into()));
    }
    let pairs: Vec<(usize, usize)> = if cmd.all_pairs {
        (0..count)
            .flat_map(|x| (x + 1..count).map(move |y| (x, y)))
            .collect()
    } else {
        let x = cmd.x.as_deref().map_or(Ok(0), |l| find_node(&cn, l))?;
        let y = cmd
            .y
            .as_deref()
            .map_or(Ok(count - 1), |l| find_node(&cn, l))?;
        vec![(x, y)]
    };
    let solved = if cmd.reduce == Reduce::Solve || cmd.check {
        Some(ResistanceSolver::for_conductances(&cn)?.all_pairs())
    } else {
        None
    };
    let starmesh = |x: usize, y: usize| {
        if x == y {
            Ok(0.0)
        } else {
            reduce_to_pair(&cn, x, y)
        }
    };
    let mut buf = Vec::new();
    let mut deviation = 0.0f64;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["x", "y", "resistance"])?;
        for &(x, y) in &pairs {
            let r = match (&solved, cmd.reduce) {
                (Some(m), Reduce::Solve) => m[(x, y)],
                _ => starmesh(x, y)?,
            };
            if let (true, Some(m)) = (cmd.check, &solved) {
                let other = if cmd.reduce == Reduce::Solve {
                    starmesh(x, y)?
                } else {
                    m[(x, y)]
                };
                deviation = deviation.max((r - other).abs());
            }
            w.write_record([cn.label(x), cn.label(y), &fmt17(r)])?;
        }
        w.flush()?;
    }
    match &cmd.out {
        Some(out) => {
            let config = format!(
                "network = {}\nrandom = {:?}\nreduce = {}\nall_pairs = {}\n",
                cmd.network
                    .as_ref()
                    .map_or("-".into(), |p| p.display().to_string()),
                cmd.random,
                if cmd.reduce == Reduce::Solve {
                    "solve"
                } else {
                    "starmesh"
                },
                cmd.all_pairs
            );
            let seed = cmd.random.map(|_| cmd.seed);
            let mut manifest = RunManifest::new("resistance", config, seed, threads);
            manifest.write_output(out, &buf)?;
            manifest.passed = cmd.check.then_some(deviation <= CHECK_TOL);
            manifest.finish(started, &manifest_path_for(out))?;
        }
        None => io::stdout().write_all(&buf)?,
    }
    if cmd.check {
        let ok = deviation <= CHECK_TOL;
        eprintln!(
            "check: max |R_starmesh - R_solve| = {deviation:e} over {} pairs ({})",
            pairs.len(),
            if ok { "pass" } else { "FAIL" }
        );
        return Ok(if ok { 0 } else { 1 });
    }
    Ok(0)
}

fn experiment_reports(
    kind: Experiment,
    cfg: &ExperimentConfig,
) -> Result<Vec<(String, ConvergenceReport)>, Error> {
    let name = kind.name().to_string();
    let one = |r: ConvergenceReport| Ok(vec![(name.clone(), r)]);
    match kind {
        Experiment::Converge => one(finite_energy_limit(cfg)?),
        Experiment::Density => one(density_limit(cfg)?),
        Experiment::Gap => one(equivalence_gap(cfg)?),
        Experiment::Gamma => one(gamma_limsup_probe(cfg)?),
        Experiment::Compact => one(compactness_lower_bound(cfg)?),
        Experiment::Local => one(local_baseline(cfg)?),
        Experiment::Bounds => one(resistance_bounds_suite(cfg)?),
        Experiment::Assumption => one(extra_assumption_probe(cfg)?),
        Experiment::Ilimit => {
            let mut out = vec![(name.clone(), i_limit_fixed_n(cfg)?)];
            if cfg.i_values.iter().all(|&i| i >= 3) {
                out.push((format!("{name}-continuum"), i_limit_continuum(cfg)?));
            }
            Ok(out)
        }
    }
}

fn cmd_experiment(cmd: &ExperimentCmd, threads: usize) -> Result<u8, Error> {
    let started = Instant::now();
    let mut text = match &cmd.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?,
        None => String::new(),
    };
    for line in &cmd.overrides {
        text.push('\n');
        text.push_str(line);
    }
    let cfg = ExperimentConfig::parse(&text)?;
    let reports = experiment_reports(cmd.kind, &cfg)?;
    let mut manifest = RunManifest::new(
        &format!("experiment {}", cmd.kind.name()),
        cfg.to_text(),
        Some(cfg.seed),
        threads,
    );
    let mut passed = true;
    for (stem, rep) in &reports {
        let mut csv = Vec::new();
        rep.write_csv(&mut csv)?;
        manifest.write_output(&cmd.out_dir.join(format!("{stem}.csv")), &csv)?;
        let json = rep.to_json()? + "\n";
        manifest.write_output(&cmd.out_dir.join(format!("{stem}.json")), json.as_bytes())?;
        if cmd.gnuplot {
            let mut dat = Vec::new();
            rep.write_gnuplot(&mut dat)?;
            manifest.write_output(&cmd.out_dir.join(format!("{stem}.dat")), &dat)?;
        }
        print_summary(rep);
        passed &= rep.passed();
    }
    manifest.passed = Some(passed);
    let manifest_path = cmd
        .out_dir
        .join(format!("{}.manifest.json", cmd.kind.name()));
    manifest.finish(started, &manifest_path)?;
    println!("{}", if passed { "PASS" } else { "FAIL" });
    Ok(if passed { 0 } else { 1 })
}

fn print_summary(rep: &ConvergenceReport) {
    println!("{}", rep.experiment);
    if let (Some(g), Some(v)) = (rep.grid.last(), rep.last()) {
        println!("  final {} = {g}: {}", rep.grid_name, fmt17(v));
    }
    if let Some(t) = rep.target {
        println!("  target: {} ({})", fmt17(t), rep.target_source);
    }
    if let Some(x) = rep.extrapolated {
        println!("  extrapolated: {}", fmt17(x));
    }
    for c in &rep.checks {
        println!("  [{}] {}", if c.passed { "pass" } else { "FAIL" }, c.name);
        if !c.passed {
            eprintln!("{}: {}: {}", rep.experiment, c.name, c.detail);
        }
    }
}

fn config_help() -> String {
    let mut out = String::from("Config keys (key = value, # comments):\n");
    for (key, default, meaning) in CONFIG_KEYS {
        out.push_str(&format!("  {key:<15} {meaning} [default: {default}]\n"));
    }
    out
}

fn run(cli: &Cli) -> Result<u8, Error> {
    match &cli.command {
        Command::Build(cmd) => cmd_build(cmd, cli.threads),
        Command::Resistance(cmd) => cmd_resistance(cmd, cli.threads),
        Command::Experiment(cmd) => cmd_experiment(cmd, cli.threads),
    }
}

fn main() -> ExitCode {
    let command = Cli::command().mut_subcommand("experiment", |c| c.after_help(config_help()));
    let cli = match command
        .try_get_matches()
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 4 } else { 0 });
        }
    };
    match with_threads(cli.threads, || run(&cli)) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_contract() {
        let cap = Error::ResourceCap {
            what: "wires",
            requested: 2,
            cap: 1,
        };
        assert_eq!(exit_code(&cap), 2);
        assert_eq!(exit_code(&Error::Singular("x".into())), 3);
        assert_eq!(exit_code(&Error::Config("x".into())), 4);
    }

    #[test]
    fn node_lookup_normalises_rationals() {
        let cn = ConductanceNetwork::new(vec!["0/1".into(), "1/2".into(), "1/1".into()]);
        assert_eq!(find_node(&cn, "2/4").unwrap(), 1);
        assert_eq!(find_node(&cn, "1/1").unwrap(), 2);
        assert!(find_node(&cn, "1/3").is_err());
    }

    #[test]
    fn random_networks_are_connected_and_seeded() {
        let a = random_network(12, 4).unwrap();
        assert!(a.is_connected());
        assert_eq!(a.edges(), random_network(12, 4).unwrap().edges());
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
