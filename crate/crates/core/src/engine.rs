//! Episode protocol and experiment driver.
//!
//! Each episode drops a fresh user population, draws LOS states, shuffles
//! the handling order and then visits every user once, letting the steering
//! policy pick a serving cell against a fresh PRB ledger. The episode stops
//! early once every cell has run out of PRBs.

use std::io::Write;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{link_state, CqiTable, LinkState};
use crate::error::{Error, Result};
use crate::learning::{decay_epsilon, sarsa_step, SarsaParams, Transition};
use crate::ledger::PrbLedger;
use crate::network::QNetwork;
use crate::policies::{
    build_context, clb_select, rllb_select, slb_select_with, Decision, Observation, PolicyKind,
};
use crate::scenario::{build_topology, sample_users, Cell, ScenarioConfig, User};
use crate::seeds::{substream, Stream};

/// Size of the trailing window reported next to the all-episode statistics.
pub const SUMMARY_WINDOW: usize = 1000;

/// `min(1, delivered / demand)`.
pub fn compute_satisfaction(demand_bps: f64, delivered_bps: f64) -> Result<f64> {
    if !(demand_bps > 0.0) {
        return Err(Error::domain(format!(
            "demand must be positive, got {demand_bps}"
        )));
    }
    if !(delivered_bps >= 0.0) {
        return Err(Error::domain(format!(
            "delivered rate must be non-negative, got {delivered_bps}"
        )));
    }
    Ok((delivered_bps / demand_bps).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UserStatus {
    Unprocessed,
    Served {
        cell: usize,
        prbs: u32,
        satisfaction: f64,
    },
    NotHandled,
}

impl UserStatus {
    pub fn satisfaction(&self) -> f64 {
        match self {
            UserStatus::Served { satisfaction, .. } => *satisfaction,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub ledger: PrbLedger,
    pub statuses: Vec<UserStatus>,
    pub remaining_users_estimate: Vec<u32>,
}

impl EpisodeState {
    fn new(cells: &[Cell], users: usize, estimates: Vec<u32>) -> Self {
        EpisodeState {
            ledger: PrbLedger::new(cells.iter().map(|c| c.prb_budget).collect()),
            statuses: vec![UserStatus::Unprocessed; users],
            remaining_users_estimate: estimates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeStats {
    pub episode: u64,
    pub policy: PolicyKind,
    /// Mean satisfaction over users with satisfaction > 0.
    pub mus: f64,
    /// Users ending with satisfaction 0.
    pub nhu: usize,
    pub mean_abs_td_error: Option<f64>,
    pub epsilon: Option<f64>,
    pub users: usize,
}

/// Everything random about one episode, shared by all policies.
#[derive(Debug, Clone)]
pub struct EpisodeInputs {
    pub users: Vec<User>,
    /// `links[user][cell]`.
    pub links: Vec<Vec<LinkState>>,
    pub order: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub stats: EpisodeStats,
    pub state: EpisodeState,
    pub inputs: EpisodeInputs,
}

/// Network plus learning state for RLLB.
#[derive(Debug, Clone)]
pub struct Agent {
    pub qnet: QNetwork,
    pub params: SarsaParams,
    /// When false the network is frozen and ε is ignored (greedy).
    pub learn: bool,
}

impl Agent {
    pub fn training(qnet: QNetwork, params: SarsaParams) -> Self {
        Agent {
            qnet,
            params,
            learn: true,
        }
    }

    pub fn frozen(qnet: QNetwork, params: SarsaParams) -> Self {
        Agent {
            qnet,
            params: params.greedy(),
            learn: false,
        }
    }
}

/// Validated scenario with resolved topology and CQI table.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub config: ScenarioConfig,
    pub cells: Vec<Cell>,
    pub cqi_table: CqiTable,
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        let cells = build_topology(&config)?;
        let cqi_table = match &config.radio.cqi_table {
            Some(path) => CqiTable::load(path)?,
            None => CqiTable::standard_64qam(),
        };
        Ok(Simulation {
            config,
            cells,
            cqi_table,
        })
    }

    pub fn with_cqi_table(config: ScenarioConfig, cqi_table: CqiTable) -> Result<Self> {
        let cells = build_topology(&config)?;
        Ok(Simulation {
            config,
            cells,
            cqi_table,
        })
    }

    pub fn reference() -> Self {
        Self::new(ScenarioConfig::reference()).expect("reference scenario is valid")
    }

    pub fn episode_inputs(&self, master_seed: u64, episode: u64) -> Result<EpisodeInputs> {
        let users = sample_users(
            &self.config,
            &mut substream(master_seed, Stream::Drop, episode),
        );
        let mut los_rng = substream(master_seed, Stream::Los, episode);
        let links = users
            .iter()
            .map(|u| {
                self.cells
                    .iter()
                    .map(|c| link_state(u, c, &self.config.radio, &self.cqi_table, &mut los_rng))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..users.len()).collect();
        order.shuffle(&mut substream(master_seed, Stream::Order, episode));
        Ok(EpisodeInputs {
            users,
            links,
            order,
        })
    }

    /// Runs one episode. `agent` must be present iff `policy` is RLLB.
    pub fn run_episode(
        &self,
        policy: PolicyKind,
        agent: Option<&mut Agent>,
        master_seed: u64,
        episode: u64,
    ) -> Result<EpisodeOutcome> {
        let inputs = self.episode_inputs(master_seed, episode)?;
        self.run_episode_with(policy, agent, inputs, master_seed, episode)
    }

    pub fn run_episode_with(
        &self,
        policy: PolicyKind,
        mut agent: Option<&mut Agent>,
        inputs: EpisodeInputs,
        master_seed: u64,
        episode: u64,
    ) -> Result<EpisodeOutcome> {
        if (policy == PolicyKind::Rllb) != agent.is_some() {
            return Err(Error::config(
                "an agent is required for rllb and only for rllb",
            ));
        }
        let estimates = estimate_remaining_users(&self.cells, &inputs)?;
        let mut state = EpisodeState::new(&self.cells, inputs.users.len(), estimates);
        let mut explore_rng = substream(master_seed, Stream::Explore, episode);
        let total_users = inputs.users.len();

        let mut pending: Option<(Observation, usize, f64)> = None;
        let mut td_errors: Vec<f64> = Vec::new();
        let epsilon = agent.as_ref().map(|a| a.params.epsilon);

        for (position, &u) in inputs.order.iter().enumerate() {
            if state.ledger.all_exhausted() {
                for &rest in &inputs.order[position..] {
                    state.statuses[rest] = UserStatus::NotHandled;
                }
                break;
            }
            let user = &inputs.users[u];
            let ctx = build_context(
                user,
                &self.cells,
                &state.ledger,
                &inputs.links[u],
                &state.remaining_users_estimate,
            )?;
            let (decision, observed) = match policy {
                PolicyKind::Clb => (clb_select(&ctx), None),
                PolicyKind::Slb => (
                    slb_select_with(&ctx, self.config.steering.slb_service),
                    None,
                ),
                PolicyKind::Rllb => {
                    let agent = agent.as_deref_mut().expect("checked above");
                    let obs = Observation::from_context(&ctx, total_users);
                    let choice = rllb_select(
                        &ctx,
                        &obs,
                        &agent.qnet,
                        agent.params.epsilon,
                        &mut explore_rng,
                    )?;
                    match choice.chosen {
                        Some(action) => {
                            if agent.learn {
                                if let Some((prev_obs, prev_action, reward)) = pending.take() {
                                    let t = Transition {
                                        obs_t: &prev_obs,
                                        action_t: prev_action,
                                        reward,
                                        next: Some((&obs, action)),
                                    };
                                    td_errors.push(sarsa_step(&mut agent.qnet, &t, &agent.params)?);
                                }
                            }
                            (choice.decision, Some((obs, action)))
                        }
                        None => (choice.decision, None),
                    }
                }
            };

            match decision {
                Decision::Serve { cell_id, prbs } => {
                    state.ledger.allocate(cell_id, prbs)?;
                    let delivered = f64::from(prbs) * inputs.links[u][cell_id].per_prb_rate_bps;
                    let satisfaction = compute_satisfaction(user.demand_bps, delivered)?;
                    state.statuses[u] = UserStatus::Served {
                        cell: cell_id,
                        prbs,
                        satisfaction,
                    };
                    let est = &mut state.remaining_users_estimate[cell_id];
                    *est = est.saturating_sub(1);
                    if let (Some((obs, action)), Some(agent)) = (observed, agent.as_deref()) {
                        pending = Some((obs, action, agent.params.reward_for(satisfaction)));
                    }
                }
                Decision::NotHandled => state.statuses[u] = UserStatus::NotHandled,
            }
        }

        if let (Some(agent), Some((obs, action, reward))) = (agent, pending.take()) {
            if agent.learn {
                let t = Transition {
                    obs_t: &obs,
                    action_t: action,
                    reward,
                    next: None,
                };
                td_errors.push(sarsa_step(&mut agent.qnet, &t, &agent.params)?);
            }
        }

        state.ledger.check()?;
        if state
            .statuses
            .iter()
            .any(|s| matches!(s, UserStatus::Unprocessed))
        {
            return Err(Error::invariant("user left unprocessed at episode end"));
        }

        let served: Vec<f64> = state
            .statuses
            .iter()
            .map(UserStatus::satisfaction)
            .filter(|&s| s > 0.0)
            .collect();
        let mus = if served.is_empty() {
            1.0
        } else {
            served.iter().sum::<f64>() / served.len() as f64
        };
        let nhu = total_users - served.len();
        let mean_abs_td_error = (!td_errors.is_empty())
            .then(|| td_errors.iter().map(|d| d.abs()).sum::<f64>() / td_errors.len() as f64);

        let stats = EpisodeStats {
            episode,
            policy,
            mus,
            nhu,
            mean_abs_td_error,
            epsilon: if policy == PolicyKind::Rllb {
                epsilon
            } else {
                None
            },
            users: total_users,
        };
        Ok(EpisodeOutcome {
            stats,
            state,
            inputs,
        })
    }
}

/// Per-cell handled-user counts from a CLB pass over the same users, links
/// and handling order, on a scratch ledger.
pub fn estimate_remaining_users(cells: &[Cell], inputs: &EpisodeInputs) -> Result<Vec<u32>> {
    let mut ledger = PrbLedger::new(cells.iter().map(|c| c.prb_budget).collect());
    let mut counts = vec![0u32; cells.len()];
    let zeros = vec![0u32; cells.len()];
    for &u in &inputs.order {
        if ledger.all_exhausted() {
            break;
        }
        let ctx = build_context(&inputs.users[u], cells, &ledger, &inputs.links[u], &zeros)?;
        if let Decision::Serve { cell_id, prbs } = clb_select(&ctx) {
            ledger.allocate(cell_id, prbs)?;
            counts[cell_id] += 1;
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowStats {
    pub episodes: usize,
    pub s_av: f64,
    pub sigma_s: f64,
    pub n_av: f64,
    pub sigma_n: f64,
}

impl WindowStats {
    /// Means and population standard deviations.
    pub fn from_stats(stats: &[EpisodeStats]) -> Self {
        let mus: Vec<f64> = stats.iter().map(|s| s.mus).collect();
        let nhu: Vec<f64> = stats.iter().map(|s| s.nhu as f64).collect();
        let (s_av, sigma_s) = mean_std(&mus);
        let (n_av, sigma_n) = mean_std(&nhu);
        WindowStats {
            episodes: stats.len(),
            s_av,
            sigma_s,
            n_av,
            sigma_n,
        }
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub policy: PolicyKind,
    pub seed: u64,
    pub episodes: usize,
    pub all: WindowStats,
    pub last_1000: WindowStats,
}

impl RunSummary {
    pub fn from_stats(policy: PolicyKind, seed: u64, stats: &[EpisodeStats]) -> Self {
        let tail = &stats[stats.len().saturating_sub(SUMMARY_WINDOW)..];
        RunSummary {
            policy,
            seed,
            episodes: stats.len(),
            all: WindowStats::from_stats(stats),
            last_1000: WindowStats::from_stats(tail),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

#[derive(Debug)]
pub struct Experiment {
    pub policy: PolicyKind,
    pub seed: u64,
    pub stats: Vec<EpisodeStats>,
    pub summary: RunSummary,
    pub agent: Option<Agent>,
    /// Set when the run stopped early; `stats` then holds the completed prefix.
    pub failure: Option<Error>,
}

/// Runs `episodes` episodes. Training runs are sequential; CLB, SLB and
/// frozen-agent runs fan out over worker threads and are collected in
/// episode order, so the output does not depend on scheduling.
pub fn run_experiment(
    sim: &Simulation,
    policy: PolicyKind,
    episodes: usize,
    seed: u64,
    mut agent: Option<Agent>,
) -> Result<Experiment> {
    if episodes == 0 {
        return Err(Error::config("episode count must be at least 1"));
    }
    if (policy == PolicyKind::Rllb) != agent.is_some() {
        return Err(Error::config(
            "an agent is required for rllb and only for rllb",
        ));
    }
    let mut failure = None;
    let stats = match agent.as_mut() {
        Some(agent) if agent.learn => {
            let mut stats = Vec::with_capacity(episodes);
            for ep in 0..episodes as u64 {
                match sim.run_episode(policy, Some(agent), seed, ep) {
                    Ok(outcome) => stats.push(outcome.stats),
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                }
                decay_epsilon(&mut agent.params);
                if (ep + 1) % 1000 == 0 {
                    let window = &stats[stats.len().saturating_sub(1000)..];
                    let w = WindowStats::from_stats(window);
                    info!(
                        "{policy} episode {}: mus {:.4} nhu {:.2} epsilon {:.5}",
                        ep + 1,
                        w.s_av,
                        w.n_av,
                        agent.params.epsilon
                    );
                }
            }
            stats
        }
        _ => {
            let frozen = agent.as_ref();
            let results: Vec<Result<EpisodeStats>> = (0..episodes as u64)
                .into_par_iter()
                .map(|ep| {
                    let mut local = frozen.cloned();
                    sim.run_episode(policy, local.as_mut(), seed, ep)
                        .map(|o| o.stats)
                })
                .collect();
            let mut stats = Vec::with_capacity(episodes);
            for r in results {
                match r {
                    Ok(s) => stats.push(s),
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                }
            }
            stats
        }
    };
    debug!("{policy}: {} episodes completed", stats.len());
    let summary = RunSummary::from_stats(policy, seed, &stats);
    Ok(Experiment {
        policy,
        seed,
        stats,
        summary,
        agent,
        failure,
    })
}

#[derive(Serialize)]
struct CsvRow {
    episode: u64,
    policy: &'static str,
    mus: f64,
    nhu: usize,
    epsilon: Option<f64>,
    mean_abs_td_error: Option<f64>,
    seed: u64,
}

/// Columns: episode, policy, mus, nhu, epsilon, mean_abs_td_error, seed.
/// Fields that do not apply to the policy are left empty.
pub fn write_episode_csv<W: Write>(out: W, stats: &[EpisodeStats], seed: u64) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for s in stats {
        writer.serialize(CsvRow {
            episode: s.episode,
            policy: s.policy.name(),
            mus: s.mus,
            nhu: s.nhu,
            epsilon: s.epsilon,
            mean_abs_td_error: s.mean_abs_td_error,
            seed,
        })?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_episode_csv_file(path: &Path, stats: &[EpisodeStats], seed: u64) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_episode_csv(file, stats, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn satisfaction_examples() {
        assert_eq!(compute_satisfaction(96e3, 999.8e3).unwrap(), 1.0);
        assert_eq!(compute_satisfaction(96e3, 0.0).unwrap(), 0.0);
        assert_eq!(compute_satisfaction(24e6, 12e6).unwrap(), 0.5);
        assert!(matches!(
            compute_satisfaction(0.0, 1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn window_stats_single_sample_has_zero_sigma() {
        let s = EpisodeStats {
            episode: 0,
            policy: PolicyKind::Clb,
            mus: 0.9,
            nhu: 12,
            mean_abs_td_error: None,
            epsilon: None,
            users: 540,
        };
        let w = WindowStats::from_stats(&[s]);
        assert_eq!(
            (w.s_av, w.sigma_s, w.n_av, w.sigma_n),
            (0.9, 0.0, 12.0, 0.0)
        );
    }

    #[test]
    fn zero_users_episode() {
        let mut config = ScenarioConfig::reference();
        config.drop.users_per_macro = 0;
        config.drop.users_per_micro = 0;
        let sim = Simulation::new(config).unwrap();
        let out = sim.run_episode(PolicyKind::Slb, None, 1, 0).unwrap();
        assert_eq!(out.stats.mus, 1.0);
        assert_eq!(out.stats.nhu, 0);
    }

    #[test]
    fn agent_presence_must_match_policy() {
        let sim = Simulation::reference();
        assert!(sim.run_episode(PolicyKind::Rllb, None, 1, 0).is_err());
        let mut agent = Agent::training(QNetwork::init_weights(1), SarsaParams::reference());
        assert!(sim
            .run_episode(PolicyKind::Clb, Some(&mut agent), 1, 0)
            .is_err());
        assert!(run_experiment(&sim, PolicyKind::Clb, 0, 1, None).is_err());
    }

    #[test]
    fn estimates_decrement_to_floor() {
        let sim = Simulation::reference();
        let out = sim.run_episode(PolicyKind::Clb, None, 5, 0).unwrap();
        let initial = estimate_remaining_users(&sim.cells, &out.inputs).unwrap();
        // the live CLB pass replays the dry run exactly
        assert!(out.state.remaining_users_estimate.iter().all(|&e| e == 0));
        let served_per_cell: Vec<u32> = (0..sim.cells.len())
            .map(|c| {
                out.state
                    .statuses
                    .iter()
                    .filter(|s| matches!(s, UserStatus::Served { cell, .. } if *cell == c))
                    .count() as u32
            })
            .collect();
        assert_eq!(initial, served_per_cell);
    }
}
