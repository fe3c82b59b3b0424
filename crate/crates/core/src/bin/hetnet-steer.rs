//! `hetnet-steer` command-line driver.
//!
//! ```text
//! hetnet-steer run     --policy slb --episodes 1000 --seed 7 --out results/slb
//! hetnet-steer eval    --load-weights w.snap --episodes 1000 --out results/eval
//! hetnet-steer compare --episodes 30000 --seed 7 --out results/table
//! ```
//!
//! Log verbosity follows `HETNET_STEER_LOG` (`error`, `warn`, `info`, ...).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::json;

use hetnet_steer::engine::{write_episode_csv_file, WindowStats};
use hetnet_steer::learning::{LearningOverrides, RewardScale};
use hetnet_steer::{
    run_experiment, Agent, Error, Experiment, PolicyKind, QNetwork, SarsaParams, ScenarioConfig,
    Simulation,
};

/// Episodes needed before the reference ε schedule has fully decayed.
const UNTRAINED_BELOW: usize = 10_000;

#[derive(Parser, Debug)]
#[command(
    name = "hetnet-steer",
    version,
    about = "Traffic steering in LTE-A/NR heterogeneous networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one policy and write per-episode CSV plus a summary.
    Run(RunArgs),
    /// Run RLLB greedily with frozen weights from a snapshot.
    Eval(EvalArgs),
    /// Run CLB, SLB and RLLB on the same seed and print a comparison table.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario TOML file; the built-in reference scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Allow writing into an existing output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug, Default)]
struct Hyper {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long = "epsilon-dec")]
    epsilon_dec: Option<f64>,
    /// `normalized` (default) or `satisfaction`.
    #[arg(long)]
    reward: Option<String>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    policy: String,
    /// Start RLLB training from this snapshot instead of fresh weights.
    #[arg(long = "load-weights")]
    load_weights: Option<PathBuf>,
    #[arg(long = "save-weights")]
    save_weights: Option<PathBuf>,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long = "load-weights")]
    load_weights: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long = "save-weights")]
    save_weights: Option<PathBuf>,
    #[command(flatten)]
    hyper: Hyper,
}

/// Failure with the process exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Domain(_) | Error::Shape(_) | Error::Snapshot(_) => 2,
            Error::Divergence(_) => 3,
            _ => 1,
        };
        Failure {
            code,
            error: e.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        match error.downcast::<Error>() {
            Ok(e) => e.into(),
            Err(error) => Failure { code: 1, error },
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HETNET_STEER_LOG", "info"))
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_scenario(path: Option<&Path>) -> Result<ScenarioConfig, Error> {
    match path {
        Some(p) => ScenarioConfig::load(p),
        None => Ok(ScenarioConfig::reference()),
    }
}

fn sarsa_params(config: &ScenarioConfig, hyper: &Hyper) -> Result<SarsaParams, Error> {
    let reward = hyper
        .reward
        .as_deref()
        .map(str::parse::<RewardScale>)
        .transpose()?;
    let cli = LearningOverrides {
        alpha: hyper.alpha,
        gamma: hyper.gamma,
        epsilon: hyper.epsilon,
        epsilon_dec: hyper.epsilon_dec,
        reward,
    };
    config
        .learning
        .clone()
        .unwrap_or_default()
        .merged(&cli)
        .apply(SarsaParams::reference())
}

fn has_overrides(hyper: &Hyper) -> bool {
    hyper.alpha.is_some()
        || hyper.gamma.is_some()
        || hyper.epsilon.is_some()
        || hyper.epsilon_dec.is_some()
        || hyper.reward.is_some()
}

fn prepare_out_dir(dir: &Path, force: bool) -> CmdResult {
    if dir.exists() && !force {
        return Err(Error::Config(format!(
            "output directory {} already exists (pass --force to overwrite)",
            dir.display()
        ))
        .into());
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn check_episodes(episodes: usize) -> CmdResult {
    if episodes == 0 {
        return Err(Error::Config("--episodes must be at least 1".into()).into());
    }
    Ok(())
}

/// Writes `<name>.csv` and `<name>.json`; returns the experiment failure, if any.
fn write_outputs(out: &Path, name: &str, exp: &Experiment, extra: serde_json::Value) -> CmdResult {
    write_episode_csv_file(&out.join(format!("{name}.csv")), &exp.stats, exp.seed)?;
    let mut doc = serde_json::to_value(&exp.summary).context("serializing summary")?;
    doc["error"] = exp
        .failure
        .as_ref()
        .map_or(serde_json::Value::Null, |e| json!(e.to_string()));
    if let (Some(map), serde_json::Value::Object(extra)) = (doc.as_object_mut(), extra) {
        map.extend(extra);
    }
    let text = serde_json::to_string_pretty(&doc).context("serializing summary")?;
    fs::write(out.join(format!("{name}.json")), text + "\n").context("writing summary")?;
    Ok(())
}

fn params_json(params: &SarsaParams) -> serde_json::Value {
    json!({
        "alpha": params.alpha,
        "gamma": params.gamma,
        "epsilon": params.epsilon,
        "epsilon_dec": params.epsilon_dec,
        "reward": params.reward,
    })
}

fn save_agent(exp: &Experiment, path: Option<&Path>) -> CmdResult {
    if let (Some(path), Some(agent)) = (path, exp.agent.as_ref()) {
        agent.qnet.save_weights(path)?;
        info!("weights saved to {}", path.display());
    }
    Ok(())
}

fn finish(exp: Experiment) -> CmdResult {
    match exp.failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn cmd_run(args: RunArgs) -> CmdResult {
    let policy: PolicyKind = args.policy.parse()?;
    check_episodes(args.common.episodes)?;
    let config = load_scenario(args.common.scenario.as_deref())?;
    let params = sarsa_params(&config, &args.hyper)?;
    if policy != PolicyKind::Rllb
        && (args.load_weights.is_some()
            || args.save_weights.is_some()
            || has_overrides(&args.hyper))
    {
        return Err(Error::Config(format!(
            "weights and learning flags only apply to rllb, not {policy}"
        ))
        .into());
    }
    let sim = Simulation::new(config)?;
    let agent = match policy {
        PolicyKind::Rllb => {
            let qnet = match &args.load_weights {
                Some(path) => QNetwork::load_weights(path)?,
                None => QNetwork::init_weights(args.common.seed),
            };
            Some(Agent::training(qnet, params))
        }
        _ => None,
    };
    prepare_out_dir(&args.common.out, args.common.force)?;
    let exp = run_experiment(&sim, policy, args.common.episodes, args.common.seed, agent)?;
    let extra = match policy {
        PolicyKind::Rllb => json!({ "learning": params_json(&params) }),
        _ => json!({}),
    };
    write_outputs(&args.common.out, "episodes", &exp, extra)?;
    save_agent(&exp, args.save_weights.as_deref())?;
    print!("{}", table(&[&exp]));
    finish(exp)
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    check_episodes(args.common.episodes)?;
    let config = load_scenario(args.common.scenario.as_deref())?;
    let params = sarsa_params(&config, &Hyper::default())?;
    let qnet = QNetwork::load_weights(&args.load_weights)?;
    let sim = Simulation::new(config)?;
    prepare_out_dir(&args.common.out, args.common.force)?;
    let agent = Agent::frozen(qnet, params);
    let exp = run_experiment(
        &sim,
        PolicyKind::Rllb,
        args.common.episodes,
        args.common.seed,
        Some(agent),
    )?;
    let extra = json!({ "weights": args.load_weights.display().to_string(), "frozen": true });
    write_outputs(&args.common.out, "episodes", &exp, extra)?;
    print!("{}", table(&[&exp]));
    finish(exp)
}

fn cmd_compare(args: CompareArgs) -> CmdResult {
    let episodes = args.common.episodes;
    check_episodes(episodes)?;
    let config = load_scenario(args.common.scenario.as_deref())?;
    let params = sarsa_params(&config, &args.hyper)?;
    let sim = Simulation::new(config)?;
    prepare_out_dir(&args.common.out, args.common.force)?;
    if episodes < UNTRAINED_BELOW {
        warn!("only {episodes} episodes: RLLB is still exploring and effectively untrained");
    }

    let seed = args.common.seed;
    let mut runs = Vec::with_capacity(PolicyKind::ALL.len());
    for policy in PolicyKind::ALL {
        let agent = (policy == PolicyKind::Rllb)
            .then(|| Agent::training(QNetwork::init_weights(seed), params));
        info!("running {policy} for {episodes} episodes");
        let exp = run_experiment(&sim, policy, episodes, seed, agent)?;
        let extra = match policy {
            PolicyKind::Rllb => json!({ "learning": params_json(&params) }),
            _ => json!({}),
        };
        write_outputs(&args.common.out, policy.name(), &exp, extra)?;
        let failed = exp.failure.is_some();
        runs.push(exp);
        if failed {
            break;
        }
    }

    let refs: Vec<&Experiment> = runs.iter().collect();
    let rendered = table(&refs);
    fs::write(args.common.out.join("table.txt"), &rendered).context("writing table")?;
    print!("{rendered}");
    if let Some(rllb) = runs.iter().find(|e| e.policy == PolicyKind::Rllb) {
        save_agent(rllb, args.save_weights.as_deref())?;
    }
    match runs.into_iter().find(|e| e.failure.is_some()) {
        Some(exp) => finish(exp),
        None => Ok(()),
    }
}

/// Methods as columns, statistics as rows.
fn table(runs: &[&Experiment]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<8}", "");
    for exp in runs {
        let _ = write!(out, "{:>12}", exp.policy.name().to_uppercase());
    }
    out.push('\n');
    type Row = (&'static str, fn(&WindowStats) -> f64, usize);
    let rows: [Row; 4] = [
        ("S_av", |w| w.s_av, 3),
        ("sigma_S", |w| w.sigma_s, 3),
        ("N_av", |w| w.n_av, 2),
        ("sigma_N", |w| w.sigma_n, 2),
    ];
    for (label, value, digits) in rows {
        let _ = write!(out, "{label:<8}");
        for exp in runs {
            let _ = write!(out, "{:>12.digits$}", value(&exp.summary.all));
        }
        out.push('\n');
    }
    out
}
