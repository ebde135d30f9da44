//! Command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use bernoulli_lora::config::ExperimentConfig;
use bernoulli_lora::experiment::{self, Prepared};
use bernoulli_lora::output;
use bernoulli_lora::theory::{self, Theorem, TheoryParams};
use bernoulli_lora::Error;

/// Default output root when neither `--out` nor the config names one.
const OUT_ROOT_VAR: &str = "BLORA_OUT_ROOT";

#[derive(Parser)]
#[command(name = "blora", version, about = "Randomized low-rank projected optimizers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method of a config over all seeds and write traces.
    Run {
        config: PathBuf,
        /// Comma-separated seeds, replacing the config list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        stop_grad_sq: Option<f64>,
    },
    /// Print the summary table of a run directory.
    Summarize { dir: PathBuf },
    /// Check the assumptions behind each configured method.
    CheckAssumptions {
        config: PathBuf,
        #[arg(long, default_value_t = 32)]
        probes: usize,
    },
    /// Theoretical stepsize, e.g. `stepsize page L=1 q=0.5 lambda_max=1`.
    Stepsize {
        theorem: String,
        /// KEY=VALUE constants.
        params: Vec<String>,
    },
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    if e.is_config() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn output_dir(cli_out: Option<PathBuf>, cfg: &ExperimentConfig, config: &Path) -> PathBuf {
    if let Some(o) = cli_out {
        return o;
    }
    let root = std::env::var_os(OUT_ROOT_VAR).map(PathBuf::from);
    match (&cfg.output, root) {
        (Some(o), Some(r)) if Path::new(o).is_relative() => r.join(o),
        (Some(o), _) => PathBuf::from(o),
        (None, r) => {
            let stem = config.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            r.unwrap_or_else(|| PathBuf::from("runs")).join(stem)
        }
    }
}

fn load(config: &Path) -> Result<(ExperimentConfig, Prepared), Error> {
    let cfg = ExperimentConfig::load(config)?;
    let prep = experiment::prepare(&cfg, config.parent(), None)?;
    Ok((cfg, prep))
}

fn run(
    config: PathBuf,
    seeds: Option<Vec<u64>>,
    out: Option<PathBuf>,
    jobs: usize,
    stop: Option<f64>,
) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    if let Some(s) = stop {
        if s.is_nan() || s < 0.0 {
            return Err(Error::config("stop-grad-sq", "must be nonnegative"));
        }
    }
    cfg.validate()?;
    let started = Instant::now();
    let prep = experiment::prepare(&cfg, config.parent(), stop)?;
    let runs = experiment::execute(&prep, &cfg.seeds, jobs)?;
    let dir = output_dir(out, &cfg, &config);
    let probes = cfg.probes.unwrap_or(16);
    let text = experiment::write_outputs(&prep, &runs, &dir, probes, cfg.seeds[0])?;
    print!("{text}");
    eprintln!("wrote {} in {:.2}s", dir.display(), started.elapsed().as_secs_f64());
    Ok(())
}

fn summarize(dir: PathBuf) -> Result<(), Error> {
    let rows = output::summarize_dir(&dir)?;
    if rows.is_empty() {
        eprintln!("warning: no traces found under {}", dir.display());
    }
    print!("{}", output::render_table(&rows));
    Ok(())
}

fn check(config: PathBuf, probes: usize) -> Result<(), Error> {
    let (cfg, prep) = load(&config)?;
    print!("{}", experiment::assumption_block(&prep, probes, cfg.seeds[0]));
    Ok(())
}

fn stepsize(theorem: String, params: Vec<String>) -> Result<(), Error> {
    let th: Theorem = theorem.parse()?;
    let mut p = TheoryParams::default();
    for kv in &params {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::config(kv.as_str(), "expected KEY=VALUE"))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::config(k.trim(), format!("`{v}` is not a number")))?;
        p.set(k.trim(), v)?;
    }
    println!("{}", theory::stepsize(th, &p)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seeds,
            out,
            jobs,
            stop_grad_sq,
        } => run(config, seeds, out, jobs, stop_grad_sq),
        Command::Summarize { dir } => summarize(dir),
        Command::CheckAssumptions { config, probes } => check(config, probes),
        Command::Stepsize { theorem, params } => stepsize(theorem, params),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
