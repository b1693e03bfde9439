use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fairrank::config::{parse_override, ExperimentConfig, ReportFormat};
use fairrank::pipeline::{self, Artifacts};
use fairrank::rerank::TieBreak;
use fairrank::verify::{run_battery, VerifyOptions};
use fairrank::Error;

/// Environment variable overriding the output directory (below `--out`).
const OUT_ENV: &str = "FAIRRANK_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "fairrank",
    version,
    about = "Provider-fairness re-ranking experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Split seed (overrides `split.seed`; also seeds `verify`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread bound. Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (overrides the environment and `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report formats, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    format: Vec<String>,
    /// Arbitrary `section.key=value` configuration override; repeatable.
    #[arg(long = "set", global = true)]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write train/valid/test splits and the popularity partition.
    Split,
    /// Export raw score matrices of the configured scorers.
    Score,
    /// Write re-ranked lists for every scorer and grid point.
    Rerank,
    /// Evaluate existing list files against the split.
    Evaluate {
        /// List files to evaluate.
        #[arg(long = "lists", required = true, num_args = 1..)]
        lists: Vec<PathBuf>,
    },
    /// Full pipeline: split, score, re-rank over the λ grid, evaluate, report.
    Run,
    /// Run the oracle-equivalence, monotonicity and metric-bound battery.
    Verify {
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 100)]
        evaluations: usize,
        #[arg(long, hide = true)]
        mutate_tie_break: bool,
    },
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load_config(global: &GlobalArgs) -> Result<ExperimentConfig, Failure> {
    let path = global
        .config
        .as_ref()
        .ok_or_else(|| Failure::Validation("--config is required for this command".into()))?;
    let mut overrides = global
        .overrides
        .iter()
        .map(|raw| parse_override(raw))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(seed) = global.seed {
        overrides.push(("split.seed".into(), toml::Value::Integer(seed as i64)));
    }
    let mut cfg = ExperimentConfig::load(path, &overrides)?;
    if let Some(out) = &global.out {
        cfg.output.dir = out.clone();
    } else if let Some(dir) = std::env::var_os(OUT_ENV) {
        cfg.output.dir = PathBuf::from(dir);
    }
    if !global.format.is_empty() {
        cfg.output.formats = global
            .format
            .iter()
            .map(|f| f.parse::<ReportFormat>())
            .collect::<Result<_, _>>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn publish(cfg: &ExperimentConfig, artifacts: &Artifacts) -> Result<(), Failure> {
    pipeline::commit(&cfg.output.dir, artifacts)?;
    println!(
        "wrote {} files to {}",
        artifacts.files.len(),
        cfg.output.dir.display()
    );
    Ok(())
}

fn verify(
    global: &GlobalArgs,
    instances: usize,
    evaluations: usize,
    mutate: bool,
) -> Result<bool, Failure> {
    let mut opts = VerifyOptions {
        instances,
        evaluations,
        ..VerifyOptions::default()
    };
    if let Some(seed) = global.seed {
        opts.seed = seed;
    }
    if mutate {
        opts.tie_break = TieBreak::LargerIndex;
    }
    let start = std::time::Instant::now();
    let checks = run_battery(&opts)?;
    let mut ok = true;
    for check in &checks {
        let status = if check.passed { "PASS" } else { "FAIL" };
        println!("{status} {} ({} cases)", check.name, check.cases);
        for failure in check.failures.iter().take(5) {
            println!("    {failure}");
        }
        if check.failures.len() > 5 {
            println!("    ... {} more", check.failures.len() - 5);
        }
        ok &= check.passed;
    }
    println!("battery finished in {:.2}s", start.elapsed().as_secs_f64());
    Ok(ok)
}

fn execute(cli: &Cli) -> Result<bool, Failure> {
    let global = &cli.global;
    if let Command::Verify {
        instances,
        evaluations,
        mutate_tie_break,
    } = &cli.command
    {
        return verify(global, *instances, *evaluations, *mutate_tie_break);
    }
    let cfg = load_config(global)?;
    let artifacts = match &cli.command {
        Command::Split => pipeline::cmd_split(&cfg)?,
        Command::Score => pipeline::cmd_score(&cfg)?,
        Command::Rerank => pipeline::cmd_rerank(&cfg)?,
        Command::Evaluate { lists } => pipeline::cmd_evaluate(&cfg, lists)?,
        Command::Run => pipeline::cmd_run(&cfg)?,
        Command::Verify { .. } => unreachable!("handled above"),
    };
    publish(&cfg, &artifacts)?;
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(threads) = cli.global.threads {
        if threads == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        pool = pool.num_threads(threads);
    }
    let pool = match pool.build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    match pool.install(|| execute(&cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
