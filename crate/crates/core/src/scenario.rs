//! Network topology and per-episode user population.
//!
//! A scenario file is TOML with four sections:
//!
//! ```toml
//! [[cells]]            # one table per base station
//! id = 0
//! rat = "lte-a"        # "lte-a" | "nr"
//! tier = "macro"       # "macro" | "micro"
//! position = [0.0, 0.0]
//! tx_power_dbm = 43.0
//! carrier_freq_ghz = 2.1
//! bandwidth_hz = 20e6
//! subcarrier_spacing_hz = 15e3
//! antenna_height_m = 25.0
//! # prb_budget = 100   # optional, otherwise resolved from the bandwidth tables
//!
//! [[profiles]]
//! name = "voice"
//! probability = 0.75
//! demand_bps = 96e3
//!
//! [drop]
//! users_per_macro = 300
//! users_per_micro = 60
//! macro_radius_m = 250.0
//! micro_radius_m = 80.0
//!
//! [radio]
//! ue_height_m = 1.5
//! noise_floor_dbm = -110.0
//! macro_gain_db = 0.0
//! micro_gain_db = 0.0
//! shadow_fading = false
//! # cqi_table = "cqi.txt"
//! ```
//!
//! An optional `[learning]` section carries SARSA hyperparameters
//! (`alpha`, `gamma`, `epsilon`, `epsilon_dec`, `reward`), and an optional
//! `[steering]` section selects `slb_service = "full" | "partial"`. Unknown
//! keys anywhere are rejected.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::LearningOverrides;
use crate::policies::SlbService;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rat {
    #[serde(rename = "lte-a")]
    LteA,
    #[serde(rename = "nr")]
    Nr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Macro,
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub id: usize,
    pub rat: Rat,
    pub tier: Tier,
    pub position: [f64; 2],
    pub tx_power_dbm: f64,
    pub carrier_freq_ghz: f64,
    pub bandwidth_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub antenna_height_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prb_budget: Option<u32>,
}

/// A base station with its PRB budget resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: usize,
    pub rat: Rat,
    pub tier: Tier,
    pub position: [f64; 2],
    pub tx_power_dbm: f64,
    pub carrier_freq_ghz: f64,
    pub bandwidth_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub antenna_height_m: f64,
    pub prb_budget: u32,
}

impl Cell {
    /// Bandwidth of one PRB (12 subcarriers).
    pub fn prb_bandwidth_hz(&self) -> f64 {
        12.0 * self.subcarrier_spacing_hz
    }

    pub fn distance_2d(&self, p: [f64; 2]) -> f64 {
        distance(self.position, p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserProfile {
    pub name: String,
    pub probability: f64,
    pub demand_bps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct User {
    pub id: usize,
    pub position: [f64; 2],
    /// Index into `ScenarioConfig::profiles`.
    pub profile: usize,
    pub demand_bps: f64,
    pub home_cell: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropConfig {
    pub users_per_macro: usize,
    pub users_per_micro: usize,
    pub macro_radius_m: f64,
    pub micro_radius_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioConfig {
    pub ue_height_m: f64,
    pub noise_floor_dbm: f64,
    #[serde(default)]
    pub macro_gain_db: f64,
    #[serde(default)]
    pub micro_gain_db: f64,
    #[serde(default)]
    pub shadow_fading: bool,
    /// CQI table file, relative paths resolved against the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cqi_table: Option<PathBuf>,
}

impl RadioConfig {
    pub fn gain_db(&self, tier: Tier) -> f64 {
        match tier {
            Tier::Macro => self.macro_gain_db,
            Tier::Micro => self.micro_gain_db,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub cells: Vec<CellConfig>,
    pub profiles: Vec<UserProfile>,
    pub drop: DropConfig,
    pub radio: RadioConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning: Option<LearningOverrides>,
    #[serde(default)]
    pub steering: SteeringConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteeringConfig {
    #[serde(default)]
    pub slb_service: SlbService,
}

const LTE_SCS_HZ: f64 = 15e3;
const NR_SCS_HZ: f64 = 30e3;

impl ScenarioConfig {
    /// One LTE-A macro at the origin with two LTE-A and two NR micros on
    /// the axes, 160 m out.
    pub fn reference() -> Self {
        let macro_cell = CellConfig {
            id: 0,
            rat: Rat::LteA,
            tier: Tier::Macro,
            position: [0.0, 0.0],
            tx_power_dbm: 43.0,
            carrier_freq_ghz: 2.1,
            bandwidth_hz: 20e6,
            subcarrier_spacing_hz: LTE_SCS_HZ,
            antenna_height_m: 25.0,
            prb_budget: None,
        };
        let micro = |id, rat, position| {
            let (tx_power_dbm, carrier_freq_ghz, subcarrier_spacing_hz) = match rat {
                Rat::LteA => (32.0, 2.1, LTE_SCS_HZ),
                Rat::Nr => (34.0, 3.5, NR_SCS_HZ),
            };
            CellConfig {
                id,
                rat,
                tier: Tier::Micro,
                position,
                tx_power_dbm,
                carrier_freq_ghz,
                bandwidth_hz: 20e6,
                subcarrier_spacing_hz,
                antenna_height_m: 10.0,
                prb_budget: None,
            }
        };
        ScenarioConfig {
            cells: vec![
                macro_cell,
                micro(1, Rat::LteA, [160.0, 0.0]),
                micro(2, Rat::LteA, [-160.0, 0.0]),
                micro(3, Rat::Nr, [0.0, 160.0]),
                micro(4, Rat::Nr, [0.0, -160.0]),
            ],
            profiles: vec![
                UserProfile {
                    name: "voice".into(),
                    probability: 0.75,
                    demand_bps: 96e3,
                },
                UserProfile {
                    name: "data-mid".into(),
                    probability: 0.20,
                    demand_bps: 5e6,
                },
                UserProfile {
                    name: "data-high".into(),
                    probability: 0.05,
                    demand_bps: 24e6,
                },
            ],
            drop: DropConfig {
                users_per_macro: 300,
                users_per_micro: 60,
                macro_radius_m: 250.0,
                micro_radius_m: 80.0,
            },
            radio: RadioConfig {
                ue_height_m: 1.5,
                noise_floor_dbm: -110.0,
                macro_gain_db: 0.0,
                micro_gain_db: 0.0,
                shadow_fading: false,
                cqi_table: None,
            },
            learning: None,
            steering: SteeringConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("scenario file: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads and validates a scenario file. A relative `cqi_table` path is
    /// rewritten relative to the scenario file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("reading scenario {}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)?;
        if let Some(table) = config.radio.cqi_table.as_mut() {
            if table.is_relative() {
                if let Some(dir) = path.parent() {
                    *table = dir.join(&*table);
                }
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config is always representable as TOML")
    }

    pub fn drop_radius(&self, tier: Tier) -> f64 {
        match tier {
            Tier::Macro => self.drop.macro_radius_m,
            Tier::Micro => self.drop.micro_radius_m,
        }
    }

    pub fn users_per_cell(&self, tier: Tier) -> usize {
        match tier {
            Tier::Macro => self.drop.users_per_macro,
            Tier::Micro => self.drop.users_per_micro,
        }
    }

    pub fn total_users(&self) -> usize {
        self.cells.iter().map(|c| self.users_per_cell(c.tier)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::config("no cells defined"));
        }
        for (i, cell) in self.cells.iter().enumerate() {
            if cell.id != i {
                return Err(Error::config(format!(
                    "cell ids must be 0..n in order, found id {} at position {i}",
                    cell.id
                )));
            }
            let expected_scs = match cell.rat {
                Rat::LteA => LTE_SCS_HZ,
                Rat::Nr => NR_SCS_HZ,
            };
            if cell.subcarrier_spacing_hz != expected_scs {
                return Err(Error::config(format!(
                    "cell {i}: {:?} requires {} Hz subcarrier spacing, got {}",
                    cell.rat, expected_scs, cell.subcarrier_spacing_hz
                )));
            }
            if !(0.5..=100.0).contains(&cell.carrier_freq_ghz) {
                return Err(Error::config(format!(
                    "cell {i}: carrier {} GHz outside [0.5, 100]",
                    cell.carrier_freq_ghz
                )));
            }
            let h_ut = self.radio.ue_height_m;
            if cell.antenna_height_m <= h_ut {
                return Err(Error::config(format!(
                    "cell {i}: antenna height {} m must exceed UE height {h_ut} m",
                    cell.antenna_height_m
                )));
            }
            if cell.prb_budget == Some(0) {
                return Err(Error::config(format!("cell {i}: zero PRB budget")));
            }
            if !cell.position.iter().all(|v| v.is_finite()) || !cell.tx_power_dbm.is_finite() {
                return Err(Error::config(format!("cell {i}: non-finite parameter")));
            }
        }

        let macros: Vec<&CellConfig> = self
            .cells
            .iter()
            .filter(|c| c.tier == Tier::Macro)
            .collect();
        if macros.is_empty() {
            return Err(Error::config("at least one macro cell is required"));
        }
        for cell in self.cells.iter().filter(|c| c.tier == Tier::Micro) {
            let inside = macros.iter().any(|m| {
                distance(m.position, cell.position) + self.drop.micro_radius_m
                    <= self.drop.macro_radius_m
            });
            if !inside {
                return Err(Error::config(format!(
                    "drop disc of micro cell {} is not inside any macro drop radius",
                    cell.id
                )));
            }
        }

        if self.profiles.is_empty() {
            return Err(Error::config("no user profiles defined"));
        }
        let mut total = 0.0;
        for p in &self.profiles {
            if !(0.0..=1.0).contains(&p.probability) {
                return Err(Error::config(format!(
                    "profile {}: probability out of [0,1]",
                    p.name
                )));
            }
            if !(p.demand_bps > 0.0) || !p.demand_bps.is_finite() {
                return Err(Error::config(format!(
                    "profile {}: demand must be positive",
                    p.name
                )));
            }
            total += p.probability;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "profile probabilities sum to {total}, not 1"
            )));
        }

        if !(self.drop.macro_radius_m > 0.0) || !(self.drop.micro_radius_m > 0.0) {
            return Err(Error::config("drop radii must be positive"));
        }
        if !self.radio.noise_floor_dbm.is_finite() {
            return Err(Error::config("noise floor must be finite"));
        }
        if let Some(learning) = &self.learning {
            learning.apply(crate::learning::SarsaParams::reference())?;
        }
        Ok(())
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Transmission-bandwidth configuration tables: (channel MHz, PRBs).
const LTE_PRBS: &[(f64, u32)] = &[
    (1.4, 6),
    (3.0, 15),
    (5.0, 25),
    (10.0, 50),
    (15.0, 75),
    (20.0, 100),
];
const NR_PRBS_15KHZ: &[(f64, u32)] = &[
    (5.0, 25),
    (10.0, 52),
    (15.0, 79),
    (20.0, 106),
    (25.0, 133),
    (30.0, 160),
    (40.0, 216),
    (50.0, 270),
];
const NR_PRBS_30KHZ: &[(f64, u32)] = &[
    (5.0, 11),
    (10.0, 24),
    (15.0, 38),
    (20.0, 51),
    (25.0, 65),
    (30.0, 78),
    (40.0, 106),
    (50.0, 133),
    (60.0, 162),
    (70.0, 189),
    (80.0, 217),
    (90.0, 245),
    (100.0, 273),
];

/// Looks up the maximum PRB count for a channel bandwidth and numerology.
pub fn prb_budget_for(rat: Rat, bandwidth_hz: f64, subcarrier_spacing_hz: f64) -> Result<u32> {
    let table = match (rat, subcarrier_spacing_hz) {
        (Rat::LteA, s) if s == LTE_SCS_HZ => LTE_PRBS,
        (Rat::Nr, s) if s == 15e3 => NR_PRBS_15KHZ,
        (Rat::Nr, s) if s == NR_SCS_HZ => NR_PRBS_30KHZ,
        _ => {
            return Err(Error::config(format!(
                "no bandwidth table for {rat:?} at {subcarrier_spacing_hz} Hz spacing"
            )))
        }
    };
    let mhz = bandwidth_hz / 1e6;
    table
        .iter()
        .find(|(bw, _)| (bw - mhz).abs() < 1e-6)
        .map(|&(_, prbs)| prbs)
        .ok_or_else(|| Error::config(format!("{rat:?}: unsupported channel bandwidth {mhz} MHz")))
}

pub fn build_topology(config: &ScenarioConfig) -> Result<Vec<Cell>> {
    config.validate()?;
    config
        .cells
        .iter()
        .map(|c| {
            let prb_budget = match c.prb_budget {
                Some(b) => b,
                None => prb_budget_for(c.rat, c.bandwidth_hz, c.subcarrier_spacing_hz)?,
            };
            Ok(Cell {
                id: c.id,
                rat: c.rat,
                tier: c.tier,
                position: c.position,
                tx_power_dbm: c.tx_power_dbm,
                carrier_freq_ghz: c.carrier_freq_ghz,
                bandwidth_hz: c.bandwidth_hz,
                subcarrier_spacing_hz: c.subcarrier_spacing_hz,
                antenna_height_m: c.antenna_height_m,
                prb_budget,
            })
        })
        .collect()
}

/// Drops `users_per_<tier>` users uniformly over each cell's disc and draws
/// an i.i.d. profile for each one.
pub fn sample_users<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Vec<User> {
    let mut users = Vec::with_capacity(config.total_users());
    for cell in &config.cells {
        let radius = config.drop_radius(cell.tier);
        for _ in 0..config.users_per_cell(cell.tier) {
            let r = radius * rng.random::<f64>().sqrt();
            let theta = 2.0 * PI * rng.random::<f64>();
            let position = [
                cell.position[0] + r * theta.cos(),
                cell.position[1] + r * theta.sin(),
            ];
            let profile = pick_profile(&config.profiles, rng.random::<f64>());
            users.push(User {
                id: users.len(),
                position,
                profile,
                demand_bps: config.profiles[profile].demand_bps,
                home_cell: cell.id,
            });
        }
    }
    users
}

fn pick_profile(profiles: &[UserProfile], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in profiles.iter().enumerate() {
        acc += p.probability;
        if u < acc {
            return i;
        }
    }
    profiles.len() - 1
}
