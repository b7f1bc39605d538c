use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use trafficgrad_core::harness::baseline::{write_trace, write_trace_to};
use trafficgrad_core::harness::report::compare;
use trafficgrad_core::harness::run_experiment_on;
use trafficgrad_core::netgraph::resolve_scenario;
use trafficgrad_core::{
    compute_baseline, save_scenario, Algorithm, ExperimentConfig, PhaseLayout, Scenario, SimState, TrialSummary,
};

#[derive(Parser)]
#[command(name = "trafficgrad", version, about = "Traffic-signal timing with DDPG and baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArg {
    /// Scenario file, or `network-a` / `network-b`.
    #[arg(value_name = "SCENARIO")]
    positional: Option<String>,
    #[arg(long = "scenario", value_name = "SCENARIO", conflicts_with = "positional")]
    flag: Option<String>,
}

impl ScenarioArg {
    fn get(&self) -> Option<&str> {
        self.positional.as_deref().or(self.flag.as_deref())
    }

    fn load(&self) -> Result<(String, Scenario)> {
        let spec = self.get().context("no scenario given")?;
        let scenario = resolve_scenario(spec).with_context(|| format!("loading scenario {spec}"))?;
        Ok((spec.to_string(), scenario))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory for logs, plots and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for cached baseline traces.
    #[arg(long)]
    baseline_cache: Option<PathBuf>,
    /// Record elapsed seconds in the logs.
    #[arg(long)]
    wall_time: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario and print its size.
    Validate {
        #[command(flatten)]
        scenario: ScenarioArg,
    },
    /// Run the base signal plans and print per-step network totals.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the uncontrolled detector trace for one seed.
    Baseline {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV file to write; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    TrainDdpg(TrainArgs),
    TrainQlearn(TrainArgs),
    RandomBaseline(TrainArgs),
    /// Overlay the aggregate curves of two or more runs.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export a built-in scenario as TOML.
    Generate {
        #[arg(value_parser = ["network-a", "network-b"])]
        network: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Validate { scenario } => validate(&scenario),
        Command::Simulate { scenario, seed } => simulate(&scenario, seed),
        Command::Baseline { scenario, seed, out } => baseline(&scenario, seed, out.as_deref()),
        Command::TrainDdpg(args) => train(Algorithm::Ddpg, &args),
        Command::TrainQlearn(args) => train(Algorithm::Qlearn, &args),
        Command::RandomBaseline(args) => train(Algorithm::Random, &args),
        Command::Compare { runs, out } => {
            let cmp = compare(&runs, out.as_deref())?;
            println!("{:<40} {:>12} {:>16} {:>16}", "run", "best_episode", "best_mean", "vs_first");
            for r in &cmp.rows {
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
                let ep = r.best_episode.map_or("-".to_string(), |e| e.to_string());
                println!("{:<40} {:>12} {:>16} {:>16}", r.run, ep, fmt(r.best_mean_reward), fmt(r.difference_from_first));
            }
            if let Some(out) = out {
                println!("wrote {}", out.join("comparison.svg").display());
            }
            Ok(())
        }
        Command::Generate { network, out } => {
            let scenario = resolve_scenario(&network)?;
            save_scenario(&scenario, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn validate(arg: &ScenarioArg) -> Result<()> {
    let (spec, scenario) = arg.load()?;
    scenario.validate().with_context(|| format!("{spec} is invalid"))?;
    println!("{}: ok", scenario.name);
    println!("  hash           {}", scenario.content_hash());
    println!("  nodes          {}", scenario.nodes.len());
    println!("  sections       {}", scenario.sections.len());
    println!("  intersections  {}", scenario.intersections.len());
    println!("  phases         {}", scenario.n_phases());
    println!("  detectors      {}", scenario.n_detectors());
    println!("  centroids      {}", scenario.centroids.len());
    println!("  demand         {:.0} veh/h", scenario.demand.iter().map(|d| d.vehicles_per_hour).sum::<f64>());
    println!("  episode steps  {}", scenario.timing.episode_steps());
    Ok(())
}

fn simulate(arg: &ScenarioArg, seed: u64) -> Result<()> {
    let (_, scenario) = arg.load()?;
    scenario.validate()?;
    let layout = PhaseLayout::from_scenario(&scenario);
    let mut sim = SimState::new(&scenario, seed);
    println!("step,clock,on_network,entered,exited,queued,detector_count,mean_speed_score");
    for step in 0..scenario.timing.episode_steps() {
        sim.apply_phase_durations(layout.base_durations())?;
        let obs = sim.run_episode_step();
        let count: u32 = obs.detectors.iter().map(|d| d.count).sum();
        let scores = obs.speed_scores();
        let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
        println!(
            "{step},{},{},{},{},{},{count},{mean:.4}",
            obs.clock,
            sim.vehicles_on_network(),
            sim.entered(),
            sim.exited(),
            sim.queued()
        );
    }
    Ok(())
}

fn baseline(arg: &ScenarioArg, seed: u64, out: Option<&Path>) -> Result<()> {
    let (_, scenario) = arg.load()?;
    scenario.validate()?;
    let trace = compute_baseline(&scenario, seed);
    match out {
        Some(path) => {
            write_trace(path, &trace).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {} steps to {}", trace.len(), path.display());
        }
        None => write_trace_to(&mut std::io::stdout().lock(), &trace)?,
    }
    Ok(())
}

fn train(algorithm: Algorithm, args: &TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => {
            let spec = args.scenario.get().context("give a scenario or --config")?;
            ExperimentConfig::new(spec, algorithm, 200)
        }
    };
    if config.algorithm != algorithm {
        bail!(
            "config is for `{}` but this command trains `{}`",
            config.algorithm.name(),
            algorithm.name()
        );
    }
    if let Some(spec) = args.scenario.get() {
        config.scenario = spec.to_string();
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    if let Some(episodes) = args.episodes {
        config.episodes = episodes;
    }
    if let Some(workers) = args.workers {
        config.workers = workers;
    }
    if let Some(out) = &args.out {
        config.out_dir = Some(out.clone());
    }
    if let Some(dir) = &args.baseline_cache {
        config.baseline_cache_dir = Some(dir.clone());
    }
    config.log_wall_time |= args.wall_time;
    config.validate()?;

    let scenario = resolve_scenario(&config.scenario).with_context(|| format!("loading scenario {}", config.scenario))?;
    let summary = run_experiment_on(&scenario, &config)?;
    print_summary(&summary, &config);
    Ok(())
}

fn print_summary(summary: &TrialSummary, config: &ExperimentConfig) {
    println!(
        "{} on {}: {} trials x {} episodes, master seed {}",
        summary.algorithm.name(),
        config.scenario,
        config.trials,
        config.episodes,
        config.master_seed
    );
    for t in &summary.trials {
        let best = t
            .best_episode()
            .map_or("-".to_string(), |(e, r)| format!("episode {e} ({r:.6})"));
        let detail = t.status.detail();
        println!(
            "  trial {}: {}{}  best {best}",
            t.trial,
            t.status.label(),
            if detail.is_empty() { String::new() } else { format!(" [{detail}]") }
        );
    }
    let n = summary.aggregate.len().min(10);
    if n > 0 {
        let tail = &summary.aggregate[summary.aggregate.len() - n..];
        let mean = tail.iter().map(|r| r.mean).sum::<f64>() / n as f64;
        println!("  final {n} episodes, mean across trials: {mean:.6}");
    }
    if let Some(dir) = &config.out_dir {
        println!("  artifacts in {}", dir.display());
    }
}
