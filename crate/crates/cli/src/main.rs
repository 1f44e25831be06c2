use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cellfree::experiment::{records_to_csv, run_drop, sweep, RunMetadata, Scheme};
use cellfree::oracle::{run_validation, validation_config, REFERENCE_SAMPLES};
use cellfree::propagation::{draw_fading, fading_csv};
use cellfree::scenario::{drop_seed, stream_rng, ConfigFile, RngStream};
use cellfree::Error;
use clap::{Args, Parser, Subcommand};

/// Divisor applied to drops and oracle samples by `--quick`.
const QUICK_SCALE: usize = 10;

#[derive(Parser, Debug)]
#[command(name = "cellfree", version, about = "Cell-free massive MIMO spectral efficiency and cost sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration with [scenario], [cost] and [sweep] tables
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the configuration)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of drops (overrides the configuration)
    #[arg(long, global = true)]
    drops: Option<usize>,
    /// Output file; stdout when omitted
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Divide drops and oracle samples by 10
    #[arg(long, global = true)]
    quick: bool,
    /// Worker threads (default: available parallelism)
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sweep antennas per site and cost ratios, writing the result CSV
    Sweep,
    /// Evaluate one drop and print per-user spectral efficiencies
    Drop {
        /// Drop index
        #[arg(long, default_value_t = 0)]
        index: u64,
        /// Antennas per site (overrides the configuration)
        #[arg(long)]
        nt: Option<usize>,
        /// Also write the drop's large-scale fading table here
        #[arg(long)]
        fading: Option<PathBuf>,
    },
    /// Compare every closed-form SINR against link-level simulation
    Validate {
        /// Channel samples per check (default 100000, 10000 with --quick)
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Print the fully resolved configuration
    ShowConfig,
}

enum Failure {
    Usage(String),
    Lib(Error),
    /// Validation ran but some check missed its tolerance.
    Validation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("cellfree: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Validation(msg)) => {
            eprintln!("cellfree: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("cellfree: {}", error_chain(&e));
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn error_chain(e: &Error) -> String {
    let mut out = e.to_string();
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        // Drop errors already print their cause inline.
        if !out.ends_with(&s.to_string()) {
            let _ = write!(out, ": {s}");
        }
        source = s.source();
    }
    out
}

fn run(cli: Cli) -> Result<(), Failure> {
    let common = cli.common;
    let config = resolve_config(&common)?;
    let pool = build_pool(common.jobs)?;
    pool.install(|| match cli.command {
        Command::Sweep => cmd_sweep(&common, config),
        Command::Drop { index, nt, fading } => cmd_drop(&common, config, index, nt, fading.as_deref()),
        Command::Validate { samples } => cmd_validate(&common, &config, samples),
        Command::ShowConfig => emit(common.output.as_deref(), &config.to_toml_string()),
    })
}

fn build_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    if jobs == Some(0) {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Failure::Usage(format!("cannot start worker pool: {e}")))
}

/// Configuration file, then flag overrides, then `--quick`.
fn resolve_config(common: &Common) -> Result<ConfigFile, Failure> {
    let mut config = match &common.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    if let Some(seed) = common.seed {
        config.scenario.master_seed = seed;
    }
    if let Some(drops) = common.drops {
        config.scenario.drops = drops;
    }
    if common.quick {
        config.scenario.drops = (config.scenario.drops / QUICK_SCALE).max(1);
    }
    config.validate()?;
    config.cost = config.cost.resolved()?;
    Ok(config)
}

fn quick_scale(common: &Common) -> usize {
    if common.quick {
        QUICK_SCALE
    } else {
        1
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|source| Failure::Lib(Error::Io { path: path.to_path_buf(), source }))
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(path) => write_file(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_sweep(common: &Common, config: ConfigFile) -> Result<(), Failure> {
    let model = config.cost.to_model()?;
    let cfg = &config.scenario;
    eprintln!(
        "sweep: M = {}, K = {}, {} drops, seed {}, scale 1/{}",
        cfg.total_antennas,
        cfg.num_users,
        cfg.drops,
        cfg.master_seed,
        quick_scale(common)
    );
    let result = sweep(cfg, &model, &config.sweep, &mut |p| {
        eprintln!("  [{}/{}] N_t = {} done", p.completed, p.total, p.n_t);
    })?;
    emit(common.output.as_deref(), &records_to_csv(&result.records))?;
    if let Some(path) = &common.output {
        let meta = RunMetadata::new(config, quick_scale(common), &result);
        write_file(&path.with_extension("meta.json"), &meta.to_json())?;
    }
    Ok(())
}

fn cmd_drop(
    common: &Common,
    config: ConfigFile,
    index: u64,
    nt: Option<usize>,
    fading: Option<&Path>,
) -> Result<(), Failure> {
    let mut cfg = config.scenario;
    if let Some(nt) = nt {
        cfg = cfg.with_antennas_per_ap(nt);
        cfg.validate()?;
    }
    let report = run_drop(&cfg, index)?;
    let mut out = String::from("scheme,user,se\n");
    for scheme in Scheme::ALL {
        for (k, se) in report.report(scheme).per_user_se.iter().enumerate() {
            let _ = writeln!(out, "{scheme},{k},{se:.6}");
        }
    }
    for scheme in Scheme::ALL {
        eprintln!("{scheme}: sum rate {:.4} bit/s/Hz", report.report(scheme).sum_rate);
    }
    emit(common.output.as_deref(), &out)?;
    if let Some(path) = fading {
        let topology = cellfree::experiment::drop_topology(&cfg, index)?;
        let seed = drop_seed(cfg.master_seed, index);
        let profile = draw_fading(&cfg, &topology, &mut stream_rng(seed, RngStream::Shadowing))?;
        write_file(path, &fading_csv(&topology, &profile))?;
    }
    Ok(())
}

fn cmd_validate(common: &Common, config: &ConfigFile, samples: Option<usize>) -> Result<(), Failure> {
    let samples = samples.unwrap_or(REFERENCE_SAMPLES / quick_scale(common));
    if samples == 0 {
        return Err(Failure::Usage("--samples must be at least 1".into()));
    }
    let cfg = validation_config(&config.scenario);
    let report = run_validation(&cfg, samples)?;
    print!("{}", report.to_text());
    if let Some(path) = &common.output {
        write_file(path, &report.to_csv())?;
    }
    let failed: Vec<&str> = report.failures().map(|r| r.check.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(format!("{} check(s) outside tolerance: {}", failed.len(), failed.join(", "))))
    }
}
