use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ccbi_core::pipeline::{self, SampleRun};
use ccbi_core::scenario::{Problem, ScenarioConfig, ScenarioError};
use clap::{Parser, Subcommand};

/// Chance-constrained Bayesian inversion of the coolant Reynolds number.
#[derive(Debug, Parser)]
#[command(name = "ccbi", version)]
struct Cli {
    /// Scenario JSON file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (default: the scenario's `output.dir`, else `out/model<N>`).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Strip trajectory at the germ means.
    SimulateForward {
        /// Reynolds number (default: the data-generating value).
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Build the constraint surrogate at one Reynolds number and cache it.
    BuildSurrogate {
        #[arg(long)]
        theta: f64,
        #[arg(long, env = "CCBI_CACHE_DIR")]
        cache_dir: Option<PathBuf>,
    },
    /// Scan the feasibility boundary.
    ScanFeasible,
    /// Run the configured sampler.
    Sample,
    /// L2 and Brooks-Gelman series of the chains in the output directory.
    Diagnose,
    /// L2 error and CPU time per sampler and sample count.
    Compare,
    /// All stages end to end.
    Run,
    /// Print the JSON schema of scenario files.
    Schema,
}

fn exit_code(e: &ScenarioError) -> u8 {
    match e {
        ScenarioError::Validation(_) => 2,
        ScenarioError::InfeasibleInit { .. } => 3,
        _ => 1,
    }
}

fn load(cli: &Cli) -> Result<(ScenarioConfig, PathBuf, PathBuf), ScenarioError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| ScenarioError::Validation("--config is required".into()))?;
    let mut cfg = ScenarioConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = cli
        .output
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("out/model{}", cfg.model)));
    Ok((cfg, base, out))
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn execute(cli: &Cli) -> Result<(), ScenarioError> {
    if let Command::Schema = cli.command {
        print_json(&ScenarioConfig::json_schema());
        return Ok(());
    }
    let (cfg, base, out) = load(cli)?;
    if let Command::Run = cli.command {
        let summary = pipeline::run_scenario(cfg, &base, &out)?;
        print_json(&summary);
        return Ok(());
    }
    let problem = Problem::build(cfg, &base)?;
    let cfg = &problem.config;
    std::fs::create_dir_all(&out).map_err(|e| ScenarioError::io(&out, e))?;
    match &cli.command {
        Command::SimulateForward { theta } => {
            let theta = theta.unwrap_or(cfg.data.theta_true);
            let path = out.join("forward.csv");
            pipeline::write_forward(&problem, theta, &path)?;
            println!("{}", path.display());
        }
        Command::BuildSurrogate { theta, cache_dir } => {
            let dir = cache_dir.clone().unwrap_or_else(|| out.join("cache"));
            let path = pipeline::build_surrogate_cached(&problem, *theta, &dir)?;
            println!("{}", path.display());
        }
        Command::ScanFeasible => {
            let scan = problem.scan()?;
            pipeline::write_scan(&scan, &out.join("boundary.csv"))?;
            let set = problem.admissible_set(&scan);
            print_json(&set);
        }
        Command::Sample => {
            let set = problem.admissible_set(&problem.scan()?);
            let run = pipeline::sample(
                &problem,
                &cfg.sampler,
                &set,
                cfg.n_samples.unwrap_or(0),
                cfg.n_chains,
                cfg.seed,
            )?;
            let files = pipeline::write_run(&run, &out, cfg.output.wall_time_in_chain_csv)?;
            if let SampleRun::Chains(chains) = &run {
                pipeline::write_postprocessed(chains, &out, |t| problem.is_feasible(t))?;
            }
            let prov = serde_json::to_string_pretty(&pipeline::provenance(&problem))
                .expect("serializable");
            std::fs::write(out.join("provenance.json"), prov)
                .map_err(|e| ScenarioError::io(&out, e))?;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::Diagnose => {
            let samples = pipeline::read_samples(&problem, &out)?;
            let reference = problem.reference()?;
            reference
                .write_csv(
                    std::fs::File::create(out.join("reference.csv"))
                        .map_err(|e| ScenarioError::io(&out, e))?,
                )
                .map_err(|e| ScenarioError::Runtime(e.to_string()))?;
            let diag = pipeline::diagnose(&problem, cfg.sampler.name(), &samples, &reference)?;
            pipeline::write_diagnostics(&out, &diag, &reference, cfg.output.plots)?;
            if cfg.geometry.is_some() {
                let snaps = pipeline::field_audit(&problem, diag.report.posterior_mean)?;
                pipeline::write_fields(&out, &snaps, cfg.output.plots)?;
            }
            print_json(&diag.report);
        }
        Command::Compare => {
            let set = problem.admissible_set(&problem.scan()?);
            let reference = problem.reference()?;
            let samplers = if cfg.compare.samplers.is_empty() {
                vec![cfg.sampler.clone()]
            } else {
                cfg.compare.samplers.clone()
            };
            let checkpoints = if cfg.compare.checkpoints.is_empty() {
                cfg.checkpoints(cfg.n_samples.unwrap_or(0))
            } else {
                cfg.compare.checkpoints.clone()
            };
            let rows = pipeline::compare(&problem, &samplers, &checkpoints, &set, &reference)?;
            let path = out.join("compare.csv");
            pipeline::write_compare_csv(&path, &rows)?;
            println!("{}", path.display());
        }
        Command::Run | Command::Schema => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!(
                "{}",
                serde_json::json!({"error": e.to_string(), "kind": match code { 2 => "validation", 3 => "infeasible_init", _ => "runtime" }, "exit_code": code})
            );
            ExitCode::from(code)
        }
    }
}
