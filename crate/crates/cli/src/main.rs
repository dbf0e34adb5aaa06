use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use lyosim::baseline::{optimize_cvp, CvpOptions};
use lyosim::config::{apply_overrides, builtin, dump_config, load_config};
use lyosim::controller::{run, Scenario};
use lyosim::export::{write_json, write_outputs, OutputFormat};
use lyosim::Error;

#[derive(Parser)]
#[command(name = "lyosim", version, about = "Optimal primary-drying policies by hybrid simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the policy-switching simulation and export the results.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "both")]
        format: String,
    },
    /// Compare the simulation against the direct-method baseline.
    Benchmark {
        #[command(flatten)]
        run: RunArgs,
        /// Piecewise-constant control intervals of the baseline.
        #[arg(long, default_value_t = 32)]
        intervals: usize,
        /// Simulation budget of the baseline search.
        #[arg(long, default_value_t = 5000)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the effective configuration.
    DumpConfig {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file; takes precedence over --scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in scenario: problem1, problem2 or custom.
    #[arg(long, default_value = "problem1")]
    scenario: String,
    /// Override one key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
    /// Collocation elements per hour of model time.
    #[arg(long)]
    elements_per_hour: Option<f64>,
}

impl RunArgs {
    fn scenario(&self) -> Result<Scenario, Error> {
        let mut sc = match &self.config {
            Some(path) => load_config(path)?,
            None => builtin(&self.scenario)?,
        };
        let mut pairs = Vec::new();
        for item in &self.overrides {
            let (k, v) = item.split_once('=').ok_or_else(|| Error::Config {
                field: item.clone(),
                reason: "expected key=value".into(),
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(r) = self.rtol {
            pairs.push(("rtol".into(), r.to_string()));
        }
        if let Some(a) = self.atol {
            pairs.push(("atol".into(), a.to_string()));
        }
        if let Some(e) = self.elements_per_hour {
            if e.is_nan() || e <= 0.0 {
                return Err(Error::Config {
                    field: "elements-per-hour".into(),
                    reason: "must be positive".into(),
                });
            }
            pairs.push(("element_dt".into(), (3600.0 / e).to_string()));
        }
        apply_overrides(&mut sc, &pairs)?;
        Ok(sc)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Config { .. } | Error::Parse { .. } | Error::Io(_) => 2,
        Error::IncompleteDrying { .. } => 4,
        _ => 3,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err.root() {
        Error::Config { .. } => "config",
        Error::Parse { .. } => "parse",
        Error::Io(_) => "io",
        Error::IncompleteDrying { .. } => "incomplete-drying",
        Error::Chattering { .. } => "chattering",
        Error::Consistency { .. } => "consistency",
        Error::NoFeasiblePoint { .. } => "no-feasible-point",
        _ => "solver",
    }
}

fn simulate(args: &RunArgs, format: &str) -> Result<(), Error> {
    let format: OutputFormat = format.parse()?;
    let sc = args.scenario()?;
    match run(&sc) {
        Ok(sol) => {
            write_outputs(&args.out, &sol, &sc, format)?;
            println!(
                "{}: dried in {:.4} h with {} switch(es); outputs in {}",
                sc.name,
                sol.t_f / 3600.0,
                sol.switch_count(),
                args.out.display()
            );
            Ok(())
        }
        Err(Error::IncompleteDrying { fraction, partial }) => {
            write_outputs(&args.out, &partial, &sc, format)?;
            Err(Error::IncompleteDrying { fraction, partial })
        }
        Err(e) => Err(e),
    }
}

fn benchmark(args: &RunArgs, intervals: usize, budget: usize, seed: u64) -> Result<(), Error> {
    let sc = args.scenario()?;
    let clock = Instant::now();
    let sol = run(&sc)?;
    let sim_wall = clock.elapsed().as_secs_f64();
    let opts = CvpOptions {
        intervals,
        max_evaluations: budget,
        seed,
        ..Default::default()
    };
    let cvp = optimize_cvp(&sc, &opts, Some(&sol))?;
    let report = json!({
        "scenario": sc.name,
        "intervals": intervals,
        "seed": seed,
        "simulation": { "t_f_s": sol.t_f, "wall_s": sim_wall },
        "baseline": {
            "t_f_s": cvp.t_f,
            "wall_s": cvp.wall_time,
            "evaluations": cvp.evaluations,
            "violation": cvp.violation,
            "control": cvp.control,
            "seeds": cvp.seeds,
        },
        "speedup": cvp.wall_time / sim_wall,
        "t_f_ratio": sol.t_f / cvp.t_f,
    });
    std::fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("benchmark.json"), &report)?;
    println!(
        "{}: simulation {:.4} h in {:.3} s, baseline {:.4} h in {:.1} s ({} evaluations), speedup {:.0}x",
        sc.name,
        sol.t_f / 3600.0,
        sim_wall,
        cvp.t_f / 3600.0,
        cvp.wall_time,
        cvp.evaluations,
        cvp.wall_time / sim_wall
    );
    Ok(())
}

fn report_error(err: &Error, out: Option<&Path>) {
    let payload = json!({
        "error": error_kind(err),
        "exit_code": exit_code(err),
        "message": err.to_string(),
    });
    eprintln!("{payload}");
    if let Some(dir) = out {
        if dir.is_dir() {
            let _ = write_json(&dir.join("error.json"), &payload);
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (result, out) = match &cli.command {
        Command::Simulate { run, format } => (simulate(run, format), Some(run.out.as_path())),
        Command::Benchmark {
            run,
            intervals,
            budget,
            seed,
        } => (benchmark(run, *intervals, *budget, *seed), Some(run.out.as_path())),
        Command::DumpConfig { run } => (
            run.scenario().map(|sc| print!("{}", dump_config(&sc))),
            None,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e, out);
            ExitCode::from(exit_code(&e))
        }
    }
}
