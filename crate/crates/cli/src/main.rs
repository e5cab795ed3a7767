use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pollflow::optimizer::{validate_plan, AllocationPlan};
use pollflow::planner::{nightly_instance, nightly_replan, Mode, SystemState};
use pollflow::queueing::{
    default_services, parse_band, simulate_voting_day, ArrivalInput, ReplicationPolicy, DEFAULT_ROBUST_QUANTILE,
};
use pollflow::report::{emit_reports, run_compare, Period};
use pollflow::scenario::{load_inputs, load_inventory, load_observed, LoadedScenario, Overrides};
use pollflow::scoring::WaitBand;
use pollflow::{synthetic, Error, PerResource, ResourceCombination};

/// Polling-resource planning: nightly transfer plans, single-day
/// simulation and fixed-versus-dynamic comparison studies.
#[derive(Parser)]
#[command(name = "pollflow", version)]
struct Cli {
    /// Scenario config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay the scenario with the fixed baseline and with nightly replanning.
    Compare(ScenarioArgs),
    /// One nightly replan from a state; writes plan.json.
    Plan {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        state: StateArgs,
    },
    /// Simulate one location-day under one combination.
    Simulate(SimulateArgs),
    /// Check a plan file against the instance built from a state.
    Validate {
        /// Plan to check.
        #[arg(long)]
        plan: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        state: StateArgs,
    },
    /// Write the synthetic twelve-location county as a scenario bundle.
    Synth {
        /// Share of in-person voters voting early.
        #[arg(long, default_value_t = synthetic::HIGH_EARLY_SHARE)]
        early_share: f64,
        #[arg(long, default_value_t = 100)]
        replications: u32,
    },
}

#[derive(Args, Clone, Default)]
struct ScenarioArgs {
    /// Fixed replications per evaluation, replacing the config's policy.
    #[arg(long)]
    replications: Option<u32>,
    #[arg(long)]
    early_share: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Utilization band, `lo:hi` or `lo:hi,lo:hi,lo:hi` per machine type.
    #[arg(long)]
    band: Option<String>,
}

#[derive(Args, Clone, Default)]
struct StateArgs {
    /// Observed hourly arrivals (location,day,hour,count) of the elapsed days.
    #[arg(long)]
    observed: Option<PathBuf>,
    /// Machines on hand (site,pollpads,bmds,scanners), warehouse included.
    #[arg(long)]
    inventory: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Expected voters per hour, comma separated.
    #[arg(long, conflicts_with = "counts", required_unless_present = "counts")]
    rates: Option<String>,
    /// Fixed voters per hour, comma separated.
    #[arg(long)]
    counts: Option<String>,
    /// Pollpads, BMDs and scanners, e.g. `2,6,1`.
    #[arg(long)]
    combo: ResourceCombination,
    #[arg(long, default_value_t = 100)]
    replications: u32,
    #[arg(long, default_value_t = DEFAULT_ROBUST_QUANTILE)]
    quantile: f64,
}

#[derive(Serialize)]
struct SimulationSummary {
    combo: String,
    replications: u32,
    voters: u64,
    mean_wait_min: f64,
    robust_wait_min: f64,
    band: &'static str,
    utilization: PerResource<f64>,
    scheduled_utilization: PerResource<f64>,
    mean_stage_wait_min: PerResource<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for bad input, 3 for an infeasible instance, 4 for I/O trouble.
fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Infeasible(_) => 3,
        Error::Io { .. } => 4,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    match &cli.command {
        Command::Compare(args) => {
            let loaded = load(&cli, args)?;
            let seed = loaded.config.seed;
            let cmp = run_compare(&loaded.scenario, seed)?;
            emit_reports(&cmp.report, &cmp.fixed, &cmp.dynamic, &out)?;
            for mode in Mode::ALL {
                for period in Period::ALL {
                    if let Some(f) = cmp.report.fraction(mode, period, WaitBand::Under30) {
                        println!("{mode:<8} {period:<13} under 30 min: {:5.1}%", 100.0 * f);
                    }
                }
                println!(
                    "{mode:<8} machine-days: {}  cost: {:.2}",
                    cmp.report.total_machine_days(mode),
                    if mode == Mode::Fixed { cmp.fixed.total_cost() } else { cmp.dynamic.total_cost() }
                );
            }
            println!("reports written to {}", out.display());
        }
        Command::Plan { scenario, state } => {
            let loaded = load(&cli, scenario)?;
            let st = load_state(&loaded, state)?;
            let plan = nightly_replan(&st, &loaded.scenario.inputs)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let path = out.join("plan.json");
            fs::write(&path, plan.to_json()).map_err(|e| Error::io(&path, e))?;
            println!("night {}: {plan}", st.day + 1);
            println!("plan written to {}", path.display());
        }
        Command::Simulate(args) => simulate(&cli, args)?,
        Command::Validate { plan, scenario, state } => {
            let loaded = load(&cli, scenario)?;
            let st = load_state(&loaded, state)?;
            let text = fs::read_to_string(plan).map_err(|e| Error::io(plan, e))?;
            let parsed: AllocationPlan = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: plan.clone(),
                line: e.line() as u64,
                message: e.to_string(),
            })?;
            let inst = nightly_instance(&st, &loaded.scenario.inputs)?;
            let problems = validate_plan(&parsed, &inst);
            if !problems.is_empty() {
                for p in &problems {
                    println!("{p}");
                }
                return Err(Error::invalid(format!("{} plan violations", problems.len())));
            }
            println!("plan is valid");
        }
        Command::Synth { early_share, replications } => {
            let cfg = synthetic::config(*early_share, *replications, cli.seed.unwrap_or(0));
            cfg.validate()?;
            synthetic::write_bundle(&out, &cfg)?;
            println!("scenario bundle written to {}", out.display());
        }
    }
    Ok(())
}

fn load(cli: &Cli, args: &ScenarioArgs) -> Result<LoadedScenario, Error> {
    let config = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::invalid("--config is required"))?;
    let overrides = Overrides {
        seed: cli.seed,
        replications: args.replications,
        early_share: args.early_share,
        epsilon: args.epsilon,
        band: args.band.as_deref().map(parse_band).transpose()?,
    };
    load_inputs(config, &overrides)
}

/// The dynamic starting state, optionally replaced by observed days and an inventory file.
fn load_state(loaded: &LoadedScenario, args: &StateArgs) -> Result<SystemState, Error> {
    let inputs = &loaded.scenario.inputs;
    let mut state = loaded.scenario.initial_state(Mode::Dynamic)?;
    if let Some(path) = &args.observed {
        let ids: BTreeSet<String> = inputs.polling().map(|s| s.id.clone()).collect();
        state.observed = load_observed(path, inputs.profiles.default.hours(), &ids)?;
        state.day = state.observed.elapsed();
    }
    if let Some(path) = &args.inventory {
        let (held, warehouse) = load_inventory(path, &inputs.sites)?;
        state.inventories = held;
        state.warehouse = warehouse;
    }
    Ok(state)
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<(), Error> {
    let services = match &cli.config {
        Some(path) => pollflow::scenario::load_config(path)?.services,
        None => default_services(),
    };
    let input = match (&args.rates, &args.counts) {
        (Some(r), _) => ArrivalInput::Rates(parse_list(r)?),
        (None, Some(c)) => ArrivalInput::Counts(parse_list(c)?),
        (None, None) => return Err(Error::invalid("either --rates or --counts is required")),
    };
    let res = simulate_voting_day(
        &input,
        args.combo,
        &services,
        ReplicationPolicy::Fixed(args.replications),
        cli.seed.unwrap_or(0),
    )?;
    let robust = res.robust_wait(args.quantile);
    let summary = SimulationSummary {
        combo: args.combo.to_string(),
        replications: res.replications,
        voters: res.total_voters,
        mean_wait_min: res.mean_wait(),
        robust_wait_min: robust,
        band: WaitBand::of(robust).label(),
        utilization: res.utilization,
        scheduled_utilization: res.scheduled_utilization,
        mean_stage_wait_min: res.mean_stage_wait,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    if let Some(out) = &cli.out {
        write_file(&out.join("simulation.json"), &(json.clone() + "\n"))?;
    }
    println!("{json}");
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, Error> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("cannot parse `{x}` in `{s}`")))
        })
        .collect()
}
