//! Downlink traffic steering in a heterogeneous LTE-A/NR network.
//!
//! Three steering policies are provided: classic load balancing (least
//! loaded cell), satisfaction-based load balancing (best achievable user
//! satisfaction) and a SARSA-trained convolutional value network. The
//! [`engine`] runs episodes over a freshly dropped user population and
//! reports mean user satisfaction and not-handled-user counts.

pub mod channel;
pub mod engine;
pub mod error;
pub mod learning;
pub mod ledger;
pub mod network;
pub mod policies;
pub mod scenario;
pub mod seeds;

pub use engine::{run_experiment, Agent, EpisodeStats, Experiment, RunSummary, Simulation};
pub use error::{Error, Result};
pub use learning::SarsaParams;
pub use network::QNetwork;
pub use policies::PolicyKind;
pub use scenario::ScenarioConfig;
