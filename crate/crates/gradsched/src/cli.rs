//! Command-line surface: scenario assembly from config/trace files, run
//! orchestration, and the metrics/summary writers.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::load_config;
use crate::model::{validate_graph, BipartiteGraph};
use crate::projection::{project_subproblem, Subproblem, DEFAULT_TOL};
use crate::regret::{offline_optimum, regret_upper_bound, RegretBoundInputs};
use crate::reward::{ArrivalVector, RewardModel};
use crate::simulator::{
    compare_policies, expand_for_multi_arrivals, run_simulation, synthesize_model,
    synthesize_scenario, ArrivalSource, ArrivalsMode, Comparison, MetricsLog, RatioSeries,
    SimConfig,
};
use crate::trace::load_trace;

#[derive(Parser)]
#[command(
    name = "gradsched",
    about = "Online gradient-ascent scheduling simulator for multi-server jobs",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one policy over a scenario and write metrics.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Directory with machines/job_types/arrivals CSV files; replaces
        /// the synthetic scenario.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        /// Policy name; defaults to the first entry of the config's list.
        #[arg(long)]
        policy: Option<String>,
        /// Output directory for metrics.csv and summary.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run several policies over one shared trajectory.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        /// Comma-separated policy names; defaults to the config's list.
        #[arg(long)]
        policies: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve one projection subproblem from a TOML fixture and print the
    /// result.
    Project {
        /// TOML file with `z = [...]`, `caps = [...]`, `capacity = ...`.
        #[arg(long)]
        input: PathBuf,
    },
    /// Print the analytic regret bound pieces for a scenario.
    RegretBound {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compute the best stationary allocation in hindsight.
    OfflineOpt {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        /// Iteration budget for the ascent solver.
        #[arg(long, default_value_t = 50_000)]
        budget: usize,
        /// Movement tolerance for convergence.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Optional output directory for the optimum allocation.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario or trace bundle and print the validation report.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
}

/// Everything a run needs, assembled from config and optional trace files.
struct Scenario {
    config: SimConfig,
    graph: BipartiteGraph,
    model: RewardModel,
    trajectory: Vec<ArrivalVector>,
}

fn build_scenario(config_path: &Path, trace_dir: Option<&Path>) -> anyhow::Result<Scenario> {
    let config = load_config(config_path)?;
    match trace_dir {
        None => {
            if config.arrivals_mode == ArrivalsMode::Trace {
                bail!("config requests trace arrivals but no --trace-dir was given");
            }
            let (graph, model) = synthesize_scenario(&config)?;
            let trajectory = ArrivalSource::from_config(&config)
                .trajectory(config.horizon, graph.num_ports())?;
            Ok(Scenario { config, graph, model, trajectory })
        }
        Some(dir) => {
            let (bundle, report) = load_trace(dir)?;
            for note in &report.dropped {
                eprintln!("note: {note}");
            }
            let graph = BipartiteGraph::from_spec(bundle.graph_spec.clone())?;
            let trajectory = match config.arrivals_mode {
                ArrivalsMode::Bernoulli => ArrivalSource::from_config(&config)
                    .trajectory(config.horizon, graph.num_ports())?,
                ArrivalsMode::Trace => ArrivalSource::Trace { table: bundle.arrivals }
                    .trajectory(config.horizon, graph.num_ports())?,
            };
            // Traces may contain several arrivals per port and slot; those
            // run through the replicated-port transformation.
            let (graph, trajectory) =
                match expand_for_multi_arrivals(&graph, &trajectory)? {
                    Some((expanded, rewritten, _)) => (expanded, rewritten),
                    None => (graph, trajectory),
                };
            let model = synthesize_model(&config, &graph)?;
            Ok(Scenario { config, graph, model, trajectory })
        }
    }
}

#[derive(Serialize)]
struct PolicySummary {
    policy: String,
    cumulative_reward: f64,
    average_reward: f64,
    wall_seconds: f64,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    config: &'a SimConfig,
    policies: Vec<PolicySummary>,
    ratios: &'a [RatioSeries],
    /// Ratio entries with `slot < warmup_slots` are warm-up noise.
    warmup_slots: usize,
}

fn write_outputs(
    out: &Path,
    config: &SimConfig,
    logs: &[MetricsLog],
    ratios: &[RatioSeries],
    warmup_slots: usize,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("cannot create output directory {}", out.display()))?;

    let metrics_path = out.join("metrics.csv");
    std::fs::write(&metrics_path, crate::simulator::metrics_csv(logs))
        .with_context(|| format!("cannot write {}", metrics_path.display()))?;

    let summary = RunSummary {
        config,
        policies: logs
            .iter()
            .map(|log| PolicySummary {
                policy: log.policy.clone(),
                cumulative_reward: log.cumulative_reward(),
                average_reward: log.average_reward(),
                wall_seconds: log.wall_seconds,
            })
            .collect(),
        ratios,
        warmup_slots,
    };
    let summary_path = out.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)
        .with_context(|| format!("cannot write {}", summary_path.display()))?;
    Ok(())
}

#[derive(Deserialize)]
struct SubproblemFile {
    z: Vec<f64>,
    caps: Vec<f64>,
    capacity: f64,
}

fn run_project(input: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(input)
        .with_context(|| format!("cannot read {}", input.display()))?;
    let file: SubproblemFile = toml::from_str(&text)
        .with_context(|| format!("cannot parse {}", input.display()))?;
    let sub = Subproblem::new(file.z, file.caps, file.capacity)?;
    let sol = project_subproblem(&sub, DEFAULT_TOL);
    let values: Vec<String> = sol.y.iter().map(f64::to_string).collect();
    println!("yhat = {}", values.join(" "));
    println!("rho = {}", sol.rho);
    Ok(())
}

fn run_validate(config: Option<&Path>, trace_dir: Option<&Path>) -> anyhow::Result<()> {
    let spec = match (trace_dir, config) {
        (Some(dir), _) => {
            let (bundle, report) = load_trace(dir)?;
            for note in &report.dropped {
                eprintln!("note: {note}");
            }
            bundle.graph_spec
        }
        (None, Some(path)) => {
            let config = load_config(path)?;
            let (graph, _) = synthesize_scenario(&config)?;
            graph.to_spec()
        }
        (None, None) => bail!("validate needs --config or --trace-dir"),
    };
    let report = validate_graph(&spec);
    println!("{report}");
    if report.is_ok() {
        Ok(())
    } else {
        Err(anyhow!("graph failed validation with {} violation(s)", report.violations.len()))
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { config, trace_dir, policy, out } => {
            let scenario = build_scenario(&config, trace_dir.as_deref())?;
            let name = policy
                .or_else(|| scenario.config.policies.first().cloned())
                .ok_or_else(|| anyhow!("no policy named on the command line or in the config"))?;
            let mut policy =
                crate::policies::build_policy(&name, &scenario.graph, scenario.config.schedule())?;
            let log = run_simulation(
                &scenario.graph,
                &scenario.model,
                policy.as_mut(),
                &scenario.trajectory,
            )?;
            println!(
                "{}: cumulative reward {} over {} slots",
                log.policy,
                log.cumulative_reward(),
                log.slots.len()
            );
            write_outputs(&out, &scenario.config, &[log], &[], crate::simulator::WARMUP_SLOTS)
        }
        Command::Compare { config, trace_dir, policies, out } => {
            let scenario = build_scenario(&config, trace_dir.as_deref())?;
            let names: Vec<String> = match policies {
                Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
                None => scenario.config.policies.clone(),
            };
            if names.len() < 2 {
                bail!("compare needs at least two policies");
            }
            let Comparison { logs, ratios, warmup_slots } = compare_policies(
                &scenario.config,
                &scenario.graph,
                &scenario.model,
                &names,
                &scenario.trajectory,
            )?;
            for log in &logs {
                println!("{}: average reward {}", log.policy, log.average_reward());
            }
            write_outputs(&out, &scenario.config, &logs, &ratios, warmup_slots)
        }
        Command::Project { input } => run_project(&input),
        Command::RegretBound { config } => {
            let config = load_config(&config)?;
            let (graph, model) = synthesize_scenario(&config)?;
            let bound =
                regret_upper_bound(&RegretBoundInputs::from_scenario(&graph, &model, config.horizon));
            println!("h_g = {}", bound.h_g);
            println!("diam_bound = {}", bound.diam_bound);
            println!("grad_bound = {}", bound.grad_bound);
            println!("regret_bound = {}", bound.total);
            Ok(())
        }
        Command::OfflineOpt { config, trace_dir, budget, tol, out } => {
            let scenario = build_scenario(&config, trace_dir.as_deref())?;
            let sol = offline_optimum(
                &scenario.trajectory,
                &scenario.model,
                &scenario.graph,
                budget,
                tol,
            )?;
            if !sol.converged {
                eprintln!("warning: budget of {budget} iterations exhausted before tolerance");
            }
            println!("q_star = {}", sol.objective);
            println!("iterations = {}", sol.iterations);
            println!("converged = {}", sol.converged);
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let path = dir.join("offline_optimum.json");
                #[derive(Serialize)]
                struct OptimumFile<'a> {
                    q_star: f64,
                    converged: bool,
                    iterations: usize,
                    values: &'a [f64],
                }
                std::fs::write(
                    &path,
                    serde_json::to_string_pretty(&OptimumFile {
                        q_star: sol.objective,
                        converged: sol.converged,
                        iterations: sol.iterations,
                        values: sol.allocation.values(),
                    })?,
                )
                .with_context(|| format!("cannot write {}", path.display()))?;
                println!("optimum written to {}", path.display());
            }
            Ok(())
        }
        Command::Validate { config, trace_dir } => {
            run_validate(config.as_deref(), trace_dir.as_deref())
        }
    }
}
