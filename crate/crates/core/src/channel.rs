//! Link budget for one user-cell pair: LOS probability and pathloss from the
//! 3GPP TR 38.901 UMa/UMi models, received power against a fixed noise floor,
//! and the SNR-to-CQI lookup that yields spectral efficiency.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scenario::{Cell, RadioConfig, Tier, User};

/// Speed of light, m/s.
const C: f64 = 3.0e8;
/// Effective environment height for the breakpoint distance.
const H_E: f64 = 1.0;
/// Smallest 2D distance the model is defined for.
pub const MIN_D2D_M: f64 = 10.0;

pub fn los_probability(tier: Tier, d2d: f64, h_ut: f64) -> Result<f64> {
    if !(d2d >= 0.0) {
        return Err(Error::domain(format!("negative 2D distance {d2d}")));
    }
    if d2d <= 18.0 {
        return Ok(1.0);
    }
    let p = match tier {
        Tier::Macro => {
            let c = if h_ut <= 13.0 {
                0.0
            } else {
                ((h_ut - 13.0) / 10.0).powf(1.5)
            };
            let base = 18.0 / d2d + (-d2d / 63.0).exp() * (1.0 - 18.0 / d2d);
            base * (1.0 + c * 1.25 * (d2d / 100.0).powi(3) * (-d2d / 150.0).exp())
        }
        Tier::Micro => 18.0 / d2d + (-d2d / 36.0).exp() * (1.0 - 18.0 / d2d),
    };
    Ok(p.clamp(0.0, 1.0))
}

fn breakpoint_distance(h_bs: f64, h_ut: f64, fc_ghz: f64) -> f64 {
    4.0 * (h_bs - H_E) * (h_ut - H_E) * fc_ghz * 1e9 / C
}

fn los_pathloss(tier: Tier, d2d: f64, d3d: f64, fc: f64, h_bs: f64, h_ut: f64) -> f64 {
    let d_bp = breakpoint_distance(h_bs, h_ut, fc);
    let dh2 = (h_bs - h_ut).powi(2);
    match tier {
        Tier::Macro => {
            if d2d <= d_bp {
                28.0 + 22.0 * d3d.log10() + 20.0 * fc.log10()
            } else {
                28.0 + 40.0 * d3d.log10() + 20.0 * fc.log10() - 9.0 * (d_bp * d_bp + dh2).log10()
            }
        }
        Tier::Micro => {
            if d2d <= d_bp {
                32.4 + 21.0 * d3d.log10() + 20.0 * fc.log10()
            } else {
                32.4 + 40.0 * d3d.log10() + 20.0 * fc.log10() - 9.5 * (d_bp * d_bp + dh2).log10()
            }
        }
    }
}

/// UMa/UMi pathloss in dB. Distances below the model minimum are evaluated
/// at `MIN_D2D_M`. NLOS returns `max(PL_NLOS', PL_LOS)`.
pub fn pathloss_db(
    tier: Tier,
    los: bool,
    d2d: f64,
    fc_ghz: f64,
    h_bs: f64,
    h_ut: f64,
) -> Result<f64> {
    if !(0.5..=100.0).contains(&fc_ghz) {
        return Err(Error::domain(format!(
            "carrier {fc_ghz} GHz outside [0.5, 100]"
        )));
    }
    if !(d2d >= 0.0) {
        return Err(Error::domain(format!("negative 2D distance {d2d}")));
    }
    if !(h_bs > h_ut && h_ut > H_E) {
        return Err(Error::domain(format!(
            "invalid antenna heights bs={h_bs} ut={h_ut}"
        )));
    }
    let d2d = d2d.max(MIN_D2D_M);
    let d3d = d2d.hypot(h_bs - h_ut);
    let pl_los = los_pathloss(tier, d2d, d3d, fc_ghz, h_bs, h_ut);
    if los {
        return Ok(pl_los);
    }
    let pl_nlos = match tier {
        Tier::Macro => 13.54 + 39.08 * d3d.log10() + 20.0 * fc_ghz.log10() - 0.6 * (h_ut - 1.5),
        Tier::Micro => 22.4 + 35.3 * d3d.log10() + 21.3 * fc_ghz.log10() - 0.3 * (h_ut - 1.5),
    };
    Ok(pl_nlos.max(pl_los))
}

/// Shadow-fading standard deviation (dB) for the optional log-normal term.
pub fn shadow_sigma_db(tier: Tier, los: bool) -> f64 {
    match (tier, los) {
        (Tier::Macro, true) => 4.0,
        (Tier::Macro, false) => 6.0,
        (Tier::Micro, true) => 4.0,
        (Tier::Micro, false) => 7.82,
    }
}

pub fn rx_power_dbm(tx_power_dbm: f64, pathloss_db: f64, gains_db: f64) -> f64 {
    tx_power_dbm - pathloss_db + gains_db
}

pub fn snr_db(rx_power_dbm: f64, noise_floor_dbm: f64) -> f64 {
    rx_power_dbm - noise_floor_dbm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqiEntry {
    pub cqi: u8,
    pub min_snr_db: f64,
    pub efficiency: f64,
}

/// Ordered SNR thresholds for CQI 1..=n. CQI 0 (out of range) is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct CqiTable {
    entries: Vec<CqiEntry>,
}

/// 4-bit 64QAM CQI table efficiencies with common 10% BLER SNR targets.
const STANDARD_64QAM: [(f64, f64); 15] = [
    (-6.7, 0.1523),
    (-4.7, 0.2344),
    (-2.3, 0.3770),
    (0.2, 0.6016),
    (2.4, 0.8770),
    (4.3, 1.1758),
    (5.9, 1.4766),
    (8.1, 1.9141),
    (10.3, 2.4063),
    (11.7, 2.7305),
    (14.1, 3.3223),
    (16.3, 3.9023),
    (18.7, 4.5234),
    (21.0, 5.1152),
    (22.7, 5.5547),
];

impl CqiTable {
    pub fn new(entries: Vec<CqiEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::config("empty CQI table"));
        }
        for (i, e) in entries.iter().enumerate() {
            if usize::from(e.cqi) != i + 1 {
                return Err(Error::config(format!(
                    "CQI rows must be numbered 1..n in order, found {} at row {}",
                    e.cqi,
                    i + 1
                )));
            }
            if !e.min_snr_db.is_finite() || !(e.efficiency > 0.0) || !e.efficiency.is_finite() {
                return Err(Error::config(format!(
                    "CQI {}: invalid threshold or efficiency",
                    e.cqi
                )));
            }
        }
        for w in entries.windows(2) {
            if w[1].min_snr_db <= w[0].min_snr_db || w[1].efficiency <= w[0].efficiency {
                return Err(Error::config(format!(
                    "CQI {}: thresholds and efficiencies must strictly increase",
                    w[1].cqi
                )));
            }
        }
        Ok(CqiTable { entries })
    }

    pub fn standard_64qam() -> Self {
        let entries = STANDARD_64QAM
            .iter()
            .enumerate()
            .map(|(i, &(min_snr_db, efficiency))| CqiEntry {
                cqi: (i + 1) as u8,
                min_snr_db,
                efficiency,
            })
            .collect();
        CqiTable::new(entries).expect("built-in table is valid")
    }

    /// Parses `cqi  min_snr_db  efficiency` rows. Blank lines and `#`
    /// comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || {
                Error::config(format!(
                    "CQI table line {}: expected `cqi snr eff`",
                    lineno + 1
                ))
            };
            if fields.len() != 3 {
                return Err(bad());
            }
            entries.push(CqiEntry {
                cqi: fields[0].parse().map_err(|_| bad())?,
                min_snr_db: fields[1].parse().map_err(|_| bad())?,
                efficiency: fields[2].parse().map_err(|_| bad())?,
            });
        }
        if entries.len() != 15 {
            return Err(Error::config(format!(
                "CQI table needs 15 rows, found {}",
                entries.len()
            )));
        }
        CqiTable::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("reading CQI table {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# cqi  min_snr_db  efficiency\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{:<4} {:>7} {}\n",
                e.cqi, e.min_snr_db, e.efficiency
            ));
        }
        out
    }

    pub fn entries(&self) -> &[CqiEntry] {
        &self.entries
    }

    pub fn max_cqi(&self) -> u8 {
        self.entries.len() as u8
    }

    /// Spectral efficiency in bit/s/Hz; 0 for CQI 0.
    pub fn efficiency(&self, cqi: u8) -> f64 {
        match cqi {
            0 => 0.0,
            n => self.entries[usize::from(n) - 1].efficiency,
        }
    }
}

/// Largest CQI whose threshold is at or below `snr`, 0 when below all.
pub fn snr_to_cqi(snr: f64, table: &CqiTable) -> u8 {
    table
        .entries
        .iter()
        .rev()
        .find(|e| snr >= e.min_snr_db)
        .map_or(0, |e| e.cqi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    pub user_id: usize,
    pub cell_id: usize,
    pub los: bool,
    pub pathloss_db: f64,
    pub rx_power_dbm: f64,
    pub snr_db: f64,
    pub cqi: u8,
    pub spectral_efficiency: f64,
    pub per_prb_rate_bps: f64,
}

impl LinkState {
    pub fn in_coverage(&self) -> bool {
        self.cqi > 0
    }
}

/// Draws the LOS state (and shadowing, if enabled) from `rng` and composes
/// the link budget down to the per-PRB bit rate.
pub fn link_state<R: Rng + ?Sized>(
    user: &User,
    cell: &Cell,
    radio: &RadioConfig,
    table: &CqiTable,
    rng: &mut R,
) -> Result<LinkState> {
    let d2d = cell.distance_2d(user.position);
    let p_los = los_probability(cell.tier, d2d, radio.ue_height_m)?;
    let los = rng.random::<f64>() < p_los;
    let mut pathloss = pathloss_db(
        cell.tier,
        los,
        d2d,
        cell.carrier_freq_ghz,
        cell.antenna_height_m,
        radio.ue_height_m,
    )?;
    if radio.shadow_fading {
        let sigma = shadow_sigma_db(cell.tier, los);
        pathloss += Normal::new(0.0, sigma).expect("positive sigma").sample(rng);
    }
    let rx = rx_power_dbm(cell.tx_power_dbm, pathloss, radio.gain_db(cell.tier));
    let snr = snr_db(rx, radio.noise_floor_dbm);
    let cqi = snr_to_cqi(snr, table);
    let spectral_efficiency = table.efficiency(cqi);
    Ok(LinkState {
        user_id: user.id,
        cell_id: cell.id,
        los,
        pathloss_db: pathloss,
        rx_power_dbm: rx,
        snr_db: snr,
        cqi,
        spectral_efficiency,
        per_prb_rate_bps: spectral_efficiency * cell.prb_bandwidth_hz(),
    })
}
