use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use action_baselines::harness::verify::{run_suite, VerifyOptions};
use action_baselines::harness::{
    lambda_sweep, run_experiment, table1_config, table1_markdown, table1_report, ExperimentConfig,
};
use action_baselines::{Error, Result};

#[derive(Parser)]
#[command(name = "adb", version, about = "Action-dependent baseline experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Replace the config's seed list (repeatable).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run only these arms (repeatable).
    #[arg(long = "arm")]
    arms: Vec<String>,
}

impl Overrides {
    fn apply(&self, c: &mut ExperimentConfig) -> Result<()> {
        if !self.seeds.is_empty() {
            c.seeds = self.seeds.clone();
        }
        if let Some(out) = &self.out {
            c.out = out.clone();
        }
        if !self.arms.is_empty() {
            c.select_arms(&self.arms)?;
        }
        c.validate()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train every (arm, seed) pair of a config and write a run directory.
    Run {
        /// JSON config; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Solve-time table from run directories, or run the target matching
    /// comparison first when no directories are given.
    ReportTable1 {
        dirs: Vec<PathBuf>,
        /// Action dimensions to run when no directories are given.
        #[arg(long = "m", default_values_t = [12, 100])]
        ms: Vec<usize>,
        /// Iteration budget per run (default depends on m).
        #[arg(long)]
        iterations: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// One run per GAE λ with shared seeds.
    SweepLambda {
        #[arg(long)]
        config: Option<PathBuf>,
        /// λ values in [0, 1] (repeatable).
        #[arg(long = "lambda", required = true)]
        lambdas: Vec<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the oracle and property suite.
    Verify {
        /// Scratch directory for the determinism and solve-time runs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also run the target matching solve-time comparison.
        #[arg(long)]
        table1: bool,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn default_budget(m: usize) -> usize {
    match m {
        0..=20 => 150,
        21..=150 => 400,
        _ => 1000,
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            config,
            iterations,
            overrides,
        } => {
            let mut c = load_config(config.as_deref())?;
            if let Some(n) = iterations {
                c.iterations = n;
            }
            overrides.apply(&mut c)?;
            let summary = run_experiment(&c)?;
            for a in &summary.arms {
                let solved = a.seeds.iter().filter(|s| s.solve_iteration.is_some()).count();
                println!(
                    "{:>12}  final mean return {:>12.5}  solved {}/{}",
                    a.arm,
                    a.mean_final_return,
                    solved,
                    a.seeds.len()
                );
            }
            println!("wrote {}", c.out.display());
            Ok(true)
        }
        Command::ReportTable1 {
            dirs,
            ms,
            iterations,
            overrides,
        } => {
            let out = overrides.out.clone().unwrap_or_else(|| PathBuf::from("runs/table1"));
            let dirs = if dirs.is_empty() {
                let mut made = Vec::with_capacity(ms.len());
                for &m in &ms {
                    let budget = iterations.unwrap_or_else(|| default_budget(m));
                    let mut c = table1_config(m, budget, &[0, 1, 2, 3, 4], &out.join(format!("m{m}")));
                    overrides.apply(&mut c)?;
                    c.out = out.join(format!("m{m}"));
                    eprintln!("running m = {m} ({budget} iterations, {} seeds)", c.seeds.len());
                    run_experiment(&c)?;
                    made.push(c.out);
                }
                made
            } else {
                dirs
            };
            let rows = table1_report(&dirs)?;
            fs::create_dir_all(&out).map_err(|e| Error::Config(format!("{}: {e}", out.display())))?;
            let md = table1_markdown(&rows);
            fs::write(out.join("table1.md"), &md)
                .and_then(|_| fs::write(out.join("table1.json"), serde_json::to_string_pretty(&rows).unwrap_or_default()))
                .map_err(|e| Error::Config(format!("{}: {e}", out.display())))?;
            print!("{md}");
            Ok(true)
        }
        Command::SweepLambda {
            config,
            lambdas,
            overrides,
        } => {
            let mut c = load_config(config.as_deref())?;
            overrides.apply(&mut c)?;
            for (l, s) in lambda_sweep(&c, &lambdas)? {
                for a in &s.arms {
                    println!("λ = {l:<6} {:>12}  final mean return {:.5}", a.arm, a.mean_final_return);
                }
            }
            Ok(true)
        }
        Command::Verify { out, table1 } => {
            let dir = out.unwrap_or_else(|| std::env::temp_dir().join(format!("adb-verify-{}", std::process::id())));
            let mut opts = VerifyOptions::new(&dir);
            opts.table1 = table1;
            let results = run_suite(&opts);
            for r in &results {
                println!("{r}");
            }
            Ok(results.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("adb: some checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("adb: {e}");
            ExitCode::from(2)
        }
    }
}
