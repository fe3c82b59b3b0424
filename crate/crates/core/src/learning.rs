//! Semi-gradient SARSA over the value network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::QNetwork;
use crate::policies::Observation;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SarsaParams {
    pub alpha: f64,
    pub gamma: f64,
    /// Current exploration probability.
    pub epsilon: f64,
    pub epsilon_dec: f64,
    pub reward: RewardScale,
    initial_epsilon: f64,
    decays: u64,
}

impl SarsaParams {
    pub fn new(alpha: f64, gamma: f64, epsilon: f64, epsilon_dec: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::config(format!("alpha {alpha} outside (0, 1]")));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::config(format!("gamma {gamma} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::config(format!("epsilon {epsilon} outside [0, 1]")));
        }
        if !(epsilon_dec >= 0.0) || !epsilon_dec.is_finite() {
            return Err(Error::config(format!(
                "epsilon decrement {epsilon_dec} must be non-negative"
            )));
        }
        Ok(SarsaParams {
            alpha,
            gamma,
            epsilon,
            epsilon_dec,
            reward: RewardScale::default(),
            initial_epsilon: epsilon,
            decays: 0,
        })
    }

    pub fn with_reward(mut self, reward: RewardScale) -> Self {
        self.reward = reward;
        self
    }

    /// Reward fed to SARSA for a served user.
    pub fn reward_for(&self, satisfaction: f64) -> f64 {
        match self.reward {
            RewardScale::Satisfaction => satisfaction,
            RewardScale::Normalized => (1.0 - self.gamma) * satisfaction,
        }
    }

    /// α = 0.15, γ = 0.95, ε = 0.1, ε_dec = 1e-5.
    pub fn reference() -> Self {
        Self::new(0.15, 0.95, 0.1, 1e-5).expect("reference hyperparameters are valid")
    }

    /// Copy with exploration disabled, for frozen-weight evaluation.
    pub fn greedy(&self) -> Self {
        SarsaParams {
            epsilon: 0.0,
            initial_epsilon: 0.0,
            ..*self
        }
    }

    pub fn decays(&self) -> u64 {
        self.decays
    }

    /// Builder-only escape hatch for tests that need α = 0.
    #[doc(hidden)]
    pub fn with_alpha_unchecked(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

/// How a served user's satisfaction becomes the SARSA reward.
///
/// The network output is a sigmoid, so Q lives in (0, 1). With raw
/// satisfaction rewards the discounted return reaches `1 / (1 − γ)` and the
/// targets sit outside the representable range; scaling by `1 − γ` keeps
/// every return in [0, 1] without changing which action is preferred.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardScale {
    /// `r = satisfaction`.
    Satisfaction,
    /// `r = (1 − γ) · satisfaction`.
    #[default]
    Normalized,
}

impl std::str::FromStr for RewardScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "satisfaction" => Ok(RewardScale::Satisfaction),
            "normalized" => Ok(RewardScale::Normalized),
            other => Err(Error::config(format!(
                "unknown reward scale `{other}` (expected satisfaction or normalized)"
            ))),
        }
    }
}

/// Applies one per-episode decrement: ε_k = max(0, ε_0 − k·ε_dec).
///
/// The value is recomputed from the initial ε and the decay count, so it is
/// exactly the closed form rather than an accumulation of rounding errors.
pub fn decay_epsilon(params: &mut SarsaParams) {
    params.decays += 1;
    params.epsilon = (params.initial_epsilon - params.epsilon_dec * params.decays as f64).max(0.0);
}

/// Optional hyperparameter overrides from a scenario file or CLI flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_dec: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardScale>,
}

impl LearningOverrides {
    pub fn apply(&self, base: SarsaParams) -> Result<SarsaParams> {
        SarsaParams::new(
            self.alpha.unwrap_or(base.alpha),
            self.gamma.unwrap_or(base.gamma),
            self.epsilon.unwrap_or(base.initial_epsilon),
            self.epsilon_dec.unwrap_or(base.epsilon_dec),
        )
        .map(|p| p.with_reward(self.reward.unwrap_or(base.reward)))
    }

    /// Fields set in `other` win.
    pub fn merged(&self, other: &LearningOverrides) -> LearningOverrides {
        LearningOverrides {
            alpha: other.alpha.or(self.alpha),
            gamma: other.gamma.or(self.gamma),
            epsilon: other.epsilon.or(self.epsilon),
            epsilon_dec: other.epsilon_dec.or(self.epsilon_dec),
            reward: other.reward.or(self.reward),
        }
    }
}

/// One SARSA transition. `next` is `None` at the end of an episode.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub obs_t: &'a Observation,
    pub action_t: usize,
    pub reward: f64,
    pub next: Option<(&'a Observation, usize)>,
}

/// `(1 − α)·q_t + α·(r + γ·q_{t+1})`, with `q_{t+1} = 0` at terminal.
pub fn td_target(q_t: f64, reward: f64, q_t1: Option<f64>, params: &SarsaParams) -> f64 {
    let bootstrap = q_t1.unwrap_or(0.0);
    (1.0 - params.alpha) * q_t + params.alpha * (reward + params.gamma * bootstrap)
}

/// Computes δ = r + γ·q(s', a') − q(s, a) and applies w ← w + α·δ·∇q(s, a).
/// The bootstrap value is a constant; no gradient flows through `s'`.
pub fn sarsa_step(
    qnet: &mut QNetwork,
    transition: &Transition<'_>,
    params: &SarsaParams,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&transition.reward) {
        return Err(Error::domain(format!(
            "reward {} outside [0, 1]",
            transition.reward
        )));
    }
    let (q, cache) = qnet.forward(transition.obs_t)?;
    let q_t = *q
        .get(transition.action_t)
        .ok_or_else(|| Error::Shape(format!("action {} out of range", transition.action_t)))?;
    let q_t1 = match transition.next {
        Some((obs, action)) => {
            let (q_next, _) = qnet.forward(obs)?;
            Some(
                *q_next
                    .get(action)
                    .ok_or_else(|| Error::Shape(format!("next action {action} out of range")))?,
            )
        }
        None => None,
    };
    let delta = transition.reward + params.gamma * q_t1.unwrap_or(0.0) - q_t;
    if !delta.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite TD error (q_t = {q_t})"
        )));
    }
    if params.alpha != 0.0 && delta != 0.0 {
        let grad = qnet.grad_wrt_params(&cache, transition.action_t)?;
        qnet.apply_update(&grad, params.alpha * delta)?;
    }
    Ok(delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(col: [f64; 3]) -> Observation {
        Observation::from_columns(&[col], vec![true])
    }

    #[test]
    fn td_target_fixtures() {
        let p = SarsaParams::reference();
        assert!((td_target(0.5, 1.0, Some(0.8), &p) - 0.689).abs() < 1e-12);
        assert!((td_target(0.4, 1.0, None, &p) - 0.49).abs() < 1e-12);
        let frozen = p.with_alpha_unchecked(0.0);
        assert_eq!(td_target(0.37, 1.0, Some(0.9), &frozen), 0.37);
    }

    #[test]
    fn td_target_is_affine_in_bootstrap() {
        let p = SarsaParams::reference();
        let a = td_target(0.3, 0.7, Some(0.1), &p);
        let b = td_target(0.3, 0.7, Some(0.6), &p);
        assert!(((b - a) / 0.5 - p.alpha * p.gamma).abs() < 1e-12);
    }

    #[test]
    fn epsilon_schedule() {
        let mut p = SarsaParams::reference();
        decay_epsilon(&mut p);
        assert!((p.epsilon - 0.09999).abs() < 1e-15);
        for _ in 1..10_000 {
            decay_epsilon(&mut p);
        }
        assert_eq!(p.epsilon, 0.0);
        decay_epsilon(&mut p);
        assert_eq!(p.epsilon, 0.0);

        let mut zero = SarsaParams::new(0.15, 0.95, 0.0, 1e-5).unwrap();
        decay_epsilon(&mut zero);
        assert_eq!(zero.epsilon, 0.0);
    }

    #[test]
    fn params_are_validated() {
        assert!(SarsaParams::new(0.0, 0.95, 0.1, 1e-5).is_err());
        assert!(SarsaParams::new(0.15, 1.5, 0.1, 1e-5).is_err());
        assert!(SarsaParams::new(0.15, 0.95, -0.1, 1e-5).is_err());
        assert!(SarsaParams::new(0.15, 0.95, 0.1, -1.0).is_err());
        let o = LearningOverrides {
            alpha: Some(0.5),
            ..Default::default()
        };
        assert_eq!(o.apply(SarsaParams::reference()).unwrap().alpha, 0.5);
    }

    #[test]
    fn zero_delta_or_zero_alpha_leaves_weights() {
        let obs = single([0.2, 0.3, 0.4]);
        let mut net = QNetwork::init_weights(8);
        let (q, _) = net.forward(&obs).unwrap();
        let before = net.to_flat();
        // terminal with reward equal to q gives δ = 0
        let t = Transition {
            obs_t: &obs,
            action_t: 0,
            reward: q[0],
            next: None,
        };
        let delta = sarsa_step(&mut net, &t, &SarsaParams::reference()).unwrap();
        assert_eq!(delta, 0.0);
        assert_eq!(net.to_flat(), before);

        let frozen = SarsaParams::reference().with_alpha_unchecked(0.0);
        let t = Transition {
            obs_t: &obs,
            action_t: 0,
            reward: 1.0,
            next: Some((&obs, 0)),
        };
        sarsa_step(&mut net, &t, &frozen).unwrap();
        assert_eq!(net.to_flat(), before);
    }

    #[test]
    fn one_step_moves_toward_target() {
        let obs = single([0.6, 0.1, 0.3]);
        let next = single([0.7, 0.2, 0.3]);
        let mut net = QNetwork::init_weights(13);
        let p = SarsaParams::reference();
        let (q0, _) = net.forward(&obs).unwrap();
        let (qn, _) = net.forward(&next).unwrap();
        let target = 0.4 + p.gamma * qn[0];
        let t = Transition {
            obs_t: &obs,
            action_t: 0,
            reward: 0.4,
            next: Some((&next, 0)),
        };
        let delta = sarsa_step(&mut net, &t, &p).unwrap();
        assert!((delta - (target - q0[0])).abs() < 1e-12);
        let (q1, _) = net.forward(&obs).unwrap();
        assert!((q1[0] - target).abs() < (q0[0] - target).abs());
    }

    #[test]
    fn repeated_terminal_steps_converge_to_reward() {
        let obs = single([0.5, 0.5, 0.5]);
        let mut net = QNetwork::init_weights(17);
        let p = SarsaParams::reference();
        let t = Transition {
            obs_t: &obs,
            action_t: 0,
            reward: 1.0,
            next: None,
        };
        let mut iterations = 0;
        loop {
            sarsa_step(&mut net, &t, &p).unwrap();
            iterations += 1;
            let (q, _) = net.forward(&obs).unwrap();
            if (q[0] - 1.0).abs() < 1e-2 || iterations >= 10_000 {
                assert!((q[0] - 1.0).abs() < 1e-2, "q = {} after {iterations}", q[0]);
                break;
            }
        }
    }

    #[test]
    fn reward_scaling() {
        let p = SarsaParams::reference();
        assert!((p.reward_for(1.0) - 0.05).abs() < 1e-15);
        let raw = p.with_reward(RewardScale::Satisfaction);
        assert_eq!(raw.reward_for(0.4), 0.4);
        let o = LearningOverrides {
            reward: Some(RewardScale::Satisfaction),
            ..Default::default()
        };
        assert_eq!(o.apply(p).unwrap().reward, RewardScale::Satisfaction);
        assert!("bogus".parse::<RewardScale>().is_err());
    }

    #[test]
    fn out_of_range_reward_rejected() {
        let obs = single([0.5, 0.5, 0.5]);
        let mut net = QNetwork::init_weights(1);
        let t = Transition {
            obs_t: &obs,
            action_t: 0,
            reward: 1.5,
            next: None,
        };
        assert!(sarsa_step(&mut net, &t, &SarsaParams::reference()).is_err());
    }
}
