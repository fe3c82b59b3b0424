use std::path::PathBuf;

use hetnet_steer::channel::CqiTable;
use hetnet_steer::engine::{write_episode_csv, UserStatus};
use hetnet_steer::learning::RewardScale;
use hetnet_steer::policies::SlbService;
use hetnet_steer::{
    run_experiment, Agent, Error, PolicyKind, QNetwork, SarsaParams, ScenarioConfig, Simulation,
};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

fn with_budget(budget: u32) -> Simulation {
    let mut config = ScenarioConfig::reference();
    for cell in &mut config.cells {
        cell.prb_budget = Some(budget);
    }
    Simulation::new(config).unwrap()
}

fn agent_for(policy: PolicyKind, seed: u64) -> Option<Agent> {
    (policy == PolicyKind::Rllb)
        .then(|| Agent::training(QNetwork::init_weights(seed), SarsaParams::reference()))
}

#[test]
fn shipped_data_files_match_builtins() {
    let loaded = ScenarioConfig::load(&data("reference.toml")).unwrap();
    let reference = ScenarioConfig::reference();
    assert_eq!(loaded.cells, reference.cells);
    assert_eq!(loaded.profiles, reference.profiles);
    assert_eq!(loaded.drop, reference.drop);
    assert_eq!(loaded.steering.slb_service, SlbService::Full);
    let params = loaded
        .learning
        .clone()
        .unwrap()
        .apply(SarsaParams::reference())
        .unwrap();
    assert_eq!(params, SarsaParams::reference());
    assert_eq!(params.reward, RewardScale::Normalized);

    let sim = Simulation::new(loaded).unwrap();
    assert_eq!(sim.cqi_table, CqiTable::standard_64qam());
    let budgets: Vec<u32> = sim.cells.iter().map(|c| c.prb_budget).collect();
    assert_eq!(budgets, vec![100, 100, 100, 51, 51]);
}

#[test]
fn one_prb_per_cell_serves_at_most_five_users() {
    let sim = with_budget(1);
    for policy in PolicyKind::ALL {
        let mut agent = agent_for(policy, 3);
        for ep in 0..5 {
            let out = sim.run_episode(policy, agent.as_mut(), 11, ep).unwrap();
            assert!(out.stats.nhu >= 535, "{policy}: nhu {}", out.stats.nhu);
            let served = out
                .state
                .statuses
                .iter()
                .filter(|s| matches!(s, UserStatus::Served { .. }))
                .count();
            assert!(served <= 5);
            assert!(out.state.ledger.all_exhausted());
        }
    }
}

#[test]
fn unlimited_budgets_satisfy_every_covered_user() {
    // heavy extra loss pushes part of the population out of coverage
    for gain in [0.0, -70.0] {
        let mut config = ScenarioConfig::reference();
        config.radio.macro_gain_db = gain;
        config.radio.micro_gain_db = gain;
        for cell in &mut config.cells {
            cell.prb_budget = Some(1_000_000);
        }
        let sim = Simulation::new(config).unwrap();
        for policy in PolicyKind::ALL {
            let mut agent = agent_for(policy, 5);
            for ep in 0..3 {
                let out = sim.run_episode(policy, agent.as_mut(), 21, ep).unwrap();
                let uncovered = out
                    .inputs
                    .links
                    .iter()
                    .filter(|l| l.iter().all(|s| s.cqi == 0))
                    .count();
                if gain < 0.0 {
                    assert!(uncovered > 0 && uncovered < out.inputs.users.len());
                }
                assert_eq!(out.stats.nhu, uncovered, "{policy} gain {gain}");
                for (u, status) in out.state.statuses.iter().enumerate() {
                    let covered = out.inputs.links[u].iter().any(|s| s.cqi > 0);
                    match status {
                        UserStatus::Served { satisfaction, .. } => {
                            assert!(covered);
                            assert_eq!(*satisfaction, 1.0);
                        }
                        UserStatus::NotHandled => assert!(!covered),
                        UserStatus::Unprocessed => panic!("unprocessed user"),
                    }
                }
                assert_eq!(out.stats.mus, 1.0);
            }
        }
    }
}

#[test]
fn policies_see_identical_populations() {
    let sim = Simulation::reference();
    let mut agent = agent_for(PolicyKind::Rllb, 1);
    let clb = sim.run_episode(PolicyKind::Clb, None, 4, 17).unwrap();
    let slb = sim.run_episode(PolicyKind::Slb, None, 4, 17).unwrap();
    let rllb = sim
        .run_episode(PolicyKind::Rllb, agent.as_mut(), 4, 17)
        .unwrap();
    for other in [&slb, &rllb] {
        assert_eq!(clb.inputs.users, other.inputs.users);
        assert_eq!(clb.inputs.order, other.inputs.order);
        assert_eq!(clb.inputs.links, other.inputs.links);
    }
    assert_ne!(
        clb.inputs.users,
        sim.run_episode(PolicyKind::Clb, None, 4, 18)
            .unwrap()
            .inputs
            .users
    );
}

#[test]
fn partial_slb_can_serve_below_full_satisfaction() {
    let mut config = ScenarioConfig::reference();
    config.steering.slb_service = SlbService::Partial;
    let partial = Simulation::new(config).unwrap();
    let full = Simulation::reference();
    let p = run_experiment(&partial, PolicyKind::Slb, 50, 8, None).unwrap();
    let f = run_experiment(&full, PolicyKind::Slb, 50, 8, None).unwrap();
    assert_eq!(f.summary.all.s_av, 1.0);
    assert!(p.summary.all.s_av < 1.0);
}

#[test]
fn frozen_agent_is_greedy_and_leaves_weights_alone() {
    let sim = Simulation::reference();
    let net = QNetwork::init_weights(12);
    let run = || {
        let agent = Agent::frozen(net.clone(), SarsaParams::reference());
        run_experiment(&sim, PolicyKind::Rllb, 40, 6, Some(agent)).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.stats, b.stats);
    assert_eq!(a.agent.as_ref().unwrap().qnet.to_flat(), net.to_flat());
    assert!(a
        .stats
        .iter()
        .all(|s| s.epsilon == Some(0.0) && s.mean_abs_td_error.is_none()));
}

#[test]
fn training_run_is_reproducible() {
    let sim = Simulation::reference();
    let run = || {
        run_experiment(
            &sim,
            PolicyKind::Rllb,
            30,
            77,
            agent_for(PolicyKind::Rllb, 77),
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    let mut csv_a = Vec::new();
    let mut csv_b = Vec::new();
    write_episode_csv(&mut csv_a, &a.stats, 77).unwrap();
    write_episode_csv(&mut csv_b, &b.stats, 77).unwrap();
    assert_eq!(csv_a, csv_b);
    assert_eq!(
        a.agent.unwrap().qnet.to_flat(),
        b.agent.unwrap().qnet.to_flat()
    );
}

#[test]
fn divergence_stops_the_run_and_keeps_the_prefix() {
    let sim = Simulation::reference();
    let mut net = QNetwork::init_weights(0);
    let huge: Vec<f64> = (0..net.parameter_count())
        .map(|i| if i % 2 == 0 { 1e300 } else { -1e300 })
        .collect();
    net.set_flat(&huge).unwrap();
    let exp = run_experiment(
        &sim,
        PolicyKind::Rllb,
        10,
        1,
        Some(Agent::training(net, SarsaParams::reference())),
    )
    .unwrap();
    assert!(
        matches!(exp.failure, Some(Error::Divergence(_))),
        "{:?}",
        exp.failure
    );
    assert!(exp.stats.len() < 10);
}

#[test]
fn evaluation_fan_out_matches_sequential_episodes() {
    let sim = Simulation::reference();
    let exp = run_experiment(&sim, PolicyKind::Clb, 16, 9, None).unwrap();
    for (ep, stats) in exp.stats.iter().enumerate() {
        let single = sim
            .run_episode(PolicyKind::Clb, None, 9, ep as u64)
            .unwrap();
        assert_eq!(&single.stats, stats);
    }
}
