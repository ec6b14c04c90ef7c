use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use cmc_bootstrap::cmc::{simulate_dataset, EpisodicDataset};
use cmc_bootstrap::env::{resolve_mdp, to_json};
use cmc_bootstrap::harness::{
    compare, emit_report, read_csv, read_reference_csv, run_coverage, write_csv, Entry, ExperimentConfig, GridPoint,
    Method, PolicySpec, ReportFormat, Study,
};
use cmc_bootstrap::rng::SeedSpec;
use cmc_bootstrap::{Error, Result};

#[derive(Parser)]
#[command(name = "cmcboot", version, about = "Model-based bootstrap for controlled Markov chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo coverage studies.
    #[command(subcommand)]
    Coverage(CoverageCommand),
    /// Environment utilities.
    #[command(subcommand)]
    Env(EnvCommand),
    /// Bootstrap utilities.
    #[command(subcommand)]
    Bootstrap(BootstrapCommand),
}

#[derive(Subcommand)]
enum CoverageCommand {
    /// Run a coverage study and write the report.
    Run(RunArgs),
    /// Compare a coverage report against a reference table.
    Table {
        /// Reference CSV (method,ci_type,target,entry,n,T,nominal,coverage).
        #[arg(long)]
        compare: PathBuf,
        /// Coverage report CSV produced by `coverage run`.
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Subcommand)]
enum EnvCommand {
    /// Print an MDP as JSON.
    Dump {
        /// Built-in name or path.
        #[arg(default_value = "riverswim")]
        mdp: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BootstrapCommand {
    /// Intervals from a single dataset.
    Once(OnceArgs),
}

/// Flags shared by commands that take an experiment config.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    mdp: Option<String>,
    #[arg(long, value_parser = PolicySpec::from_str)]
    behavior: Option<PolicySpec>,
    /// Repeatable; replaces the config's targets.
    #[arg(long = "target", value_parser = PolicySpec::from_str)]
    targets: Vec<PolicySpec>,
    /// Repeatable; replaces the config's methods.
    #[arg(long = "method", value_parser = Method::from_str)]
    methods: Vec<Method>,
    /// Repeatable nominal level, e.g. 0.95.
    #[arg(long = "level")]
    levels: Vec<f64>,
    /// Repeatable, e.g. `V(1)` or `Q(6,0)`.
    #[arg(long = "entry", value_parser = Entry::from_str)]
    entries: Vec<Entry>,
    #[arg(long = "B")]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// 0-based start state of data-generating episodes.
    #[arg(long)]
    start_state: Option<usize>,
}

impl Overrides {
    fn apply(self, cfg: &mut ExperimentConfig) {
        if let Some(m) = self.mdp {
            cfg.mdp = m;
        }
        if let Some(b) = self.behavior {
            cfg.behavior = b;
        }
        if !self.targets.is_empty() {
            cfg.targets = self.targets;
        }
        if !self.methods.is_empty() {
            cfg.methods = self.methods;
        }
        if !self.levels.is_empty() {
            cfg.levels = self.levels;
        }
        if !self.entries.is_empty() {
            cfg.entries = self.entries;
        }
        if let Some(b) = self.replicates {
            cfg.replicates = b;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.start_state {
            cfg.start_state = s;
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Repeatable `n:T`; replaces the config's grid.
    #[arg(long = "grid", value_parser = GridPoint::from_str)]
    grid: Vec<GridPoint>,
    #[arg(long)]
    n_reps: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_parser = ReportFormat::from_str, default_value = "csv")]
    format: ReportFormat,
    /// Output file; CSV goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OnceArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Dataset as JSONL, one episode per line; simulated when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Sample size of the simulated dataset.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Episode length of the simulated dataset.
    #[arg(long = "T", default_value_t = 50)]
    episode_len: usize,
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    path.map_or_else(|| Ok(ExperimentConfig::default()), |p| ExperimentConfig::load(p))
}

fn coverage_run(args: RunArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_ref())?;
    args.overrides.apply(&mut cfg);
    if !args.grid.is_empty() {
        cfg.grid = args.grid;
    }
    if let Some(r) = args.n_reps {
        cfg.n_reps = r;
    }
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    let report = run_coverage(&cfg)?;
    if !report.failures.is_empty() {
        eprintln!("{} reps excluded after solver failures", report.failures.len());
    }
    match (&args.out, args.format) {
        (Some(path), format) => emit_report(&report, format, path),
        (None, ReportFormat::Csv) => write_csv(&report.rows, std::io::stdout().lock()),
        (None, ReportFormat::Json) => {
            let mut out = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, &report)?;
            writeln!(out)?;
            Ok(())
        }
    }
}

fn coverage_table(reference: PathBuf, report: PathBuf) -> Result<()> {
    let open = |p: &PathBuf| std::fs::File::open(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())));
    let reference = read_reference_csv(open(&reference)?)?;
    let observed = read_csv(open(&report)?)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "method,ci_type,target,entry,n,T,nominal,reference,observed,diff,se")?;
    for c in compare(&observed, &reference) {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{:.3},{:.3},{:+.3},{:.3}",
            c.method,
            c.ci_type,
            c.target,
            c.entry,
            c.n,
            c.episode_len,
            c.nominal,
            c.reference,
            c.observed,
            c.diff,
            c.se
        )?;
    }
    Ok(())
}

fn env_dump(mdp: &str, out: Option<PathBuf>) -> Result<()> {
    let text = to_json(&resolve_mdp(mdp)?)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => writeln!(std::io::stdout().lock(), "{text}")?,
    }
    Ok(())
}

fn bootstrap_once(args: OnceArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_ref())?;
    args.overrides.apply(&mut cfg);
    cfg.grid = vec![GridPoint::new(args.n, args.episode_len)];
    let study = Study::from_config(&cfg)?;
    let seeds = SeedSpec::new(cfg.seed);
    let dataset = match &args.data {
        Some(path) => EpisodicDataset::load_jsonl(study.mdp().space(), path)?,
        None => {
            let behavior = cfg.behavior.resolve(study.mdp().space())?.expect("validated as fixed");
            simulate_dataset(
                &study.mdp().kernel,
                &behavior,
                cfg.start_state,
                args.n / args.episode_len,
                args.episode_len,
                &seeds,
                0,
            )?
        }
    };
    let analysis = study.analyze(&dataset, 0)?;
    let width = cfg.entries.len();
    let per_target = cfg.levels.len() * cfg.methods.len() * width;
    let rows: Vec<serde_json::Value> = study
        .interval_labels()
        .into_iter()
        .zip(&analysis.intervals)
        .enumerate()
        .map(|(c, (label, ci))| {
            serde_json::json!({
                "method": label.method,
                "ci_type": label.ci_type,
                "target": label.target,
                "entry": label.entry,
                "nominal": label.nominal,
                "estimate": analysis.estimates[(c / per_target) * width + c % width],
                "lower": ci.lower,
                "upper": ci.upper,
                "degenerate": ci.degenerate,
            })
        })
        .collect();
    let summary = serde_json::json!({
        "n": dataset.len(),
        "K": dataset.num_episodes(),
        "T": dataset.episode_len(),
        "repaired": analysis.repaired,
        "intervals": rows,
    });
    writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Coverage(CoverageCommand::Run(args)) => coverage_run(args),
        Command::Coverage(CoverageCommand::Table { compare, report }) => coverage_table(compare, report),
        Command::Env(EnvCommand::Dump { mdp, out }) => env_dump(&mdp, out),
        Command::Bootstrap(BootstrapCommand::Once(args)) => bootstrap_once(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        // a closed pipe (e.g. `| head`) is not an error worth reporting
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(Error::Csv(e)) if matches!(e.kind(), csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            let summary = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{summary}");
            ExitCode::from(2)
        }
    }
}
