//! Steering policies: each maps one user's per-cell decision context to a
//! serving cell or a not-handled outcome.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::channel::LinkState;
use crate::error::{Error, Result};
use crate::ledger::PrbLedger;
use crate::network::QNetwork;
use crate::scenario::{Cell, User};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    /// Least-loaded eligible cell.
    Clb,
    /// Best achievable satisfaction.
    Slb,
    /// SARSA-trained value network.
    Rllb,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Clb, PolicyKind::Slb, PolicyKind::Rllb];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Clb => "clb",
            PolicyKind::Slb => "slb",
            PolicyKind::Rllb => "rllb",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl serde::Serialize for PolicyKind {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clb" => Ok(PolicyKind::Clb),
            "slb" => Ok(PolicyKind::Slb),
            "rllb" => Ok(PolicyKind::Rllb),
            other => Err(Error::config(format!(
                "unknown policy `{other}` (expected clb, slb or rllb)"
            ))),
        }
    }
}

/// PRBs needed to carry `demand_bps` in full, `None` when the link carries
/// nothing.
pub fn prbs_needed(demand_bps: f64, per_prb_rate_bps: f64) -> Option<u32> {
    if per_prb_rate_bps > 0.0 {
        let n = (demand_bps / per_prb_rate_bps).ceil();
        Some(if n >= f64::from(u32::MAX) {
            u32::MAX
        } else {
            n.max(1.0) as u32
        })
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellEntry {
    pub cell_id: usize,
    pub prb_budget: u32,
    pub current_load: f64,
    pub prbs_remaining: u32,
    pub link: LinkState,
    pub prbs_needed: Option<u32>,
    pub remaining_users_estimate: u32,
}

impl CellEntry {
    pub fn eligible(&self) -> bool {
        self.link.cqi >= 1 && self.prbs_remaining >= 1
    }

    /// PRBs the user would receive here: `min(needed, remaining)`.
    pub fn allocatable(&self) -> u32 {
        self.prbs_needed.map_or(0, |n| n.min(self.prbs_remaining))
    }

    pub fn achievable_satisfaction(&self, demand_bps: f64) -> f64 {
        let delivered = f64::from(self.allocatable()) * self.link.per_prb_rate_bps;
        (delivered / demand_bps).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionContext {
    pub user_id: usize,
    pub demand_bps: f64,
    pub entries: Vec<CellEntry>,
}

impl DecisionContext {
    pub fn eligible_indices(&self) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].eligible())
            .collect()
    }

    pub fn any_eligible(&self) -> bool {
        self.entries.iter().any(CellEntry::eligible)
    }

    /// Serve on entry `index`, or `NotHandled` if it is not eligible.
    pub fn serve(&self, index: usize) -> Decision {
        let entry = &self.entries[index];
        if entry.eligible() {
            Decision::Serve {
                cell_id: entry.cell_id,
                prbs: entry.allocatable(),
            }
        } else {
            Decision::NotHandled
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Serve { cell_id: usize, prbs: u32 },
    NotHandled,
}

/// Per-cell feature matrix (3 rows × N cells) plus eligibility mask.
///
/// Rows: current load; PRBs needed over PRBs remaining, clamped to 1;
/// remaining-user estimate over the episode's user count.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    rows: Vec<Vec<f64>>,
    mask: Vec<bool>,
}

impl Observation {
    pub fn from_rows(rows: Vec<Vec<f64>>, mask: Vec<bool>) -> Self {
        Observation { rows, mask }
    }

    pub fn from_columns(columns: &[[f64; 3]], mask: Vec<bool>) -> Self {
        let rows = (0..3)
            .map(|r| columns.iter().map(|c| c[r]).collect())
            .collect();
        Observation { rows, mask }
    }

    pub fn from_context(ctx: &DecisionContext, total_users: usize) -> Self {
        let total = total_users.max(1) as f64;
        let mut rows = vec![Vec::new(); 3];
        let mut mask = Vec::with_capacity(ctx.entries.len());
        for e in &ctx.entries {
            let fraction = match e.prbs_needed {
                Some(n) => (f64::from(n) / f64::from(e.prbs_remaining.max(1))).min(1.0),
                None => 1.0,
            };
            rows[0].push(e.current_load.clamp(0.0, 1.0));
            rows[1].push(fraction);
            rows[2].push((f64::from(e.remaining_users_estimate) / total).min(1.0));
            mask.push(e.eligible());
        }
        Observation { rows, mask }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn cells(&self) -> usize {
        self.mask.len()
    }

    /// Column `i` of the result is column `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Observation {
            rows: self
                .rows
                .iter()
                .map(|r| perm.iter().map(|&p| r[p]).collect())
                .collect(),
            mask: perm.iter().map(|&p| self.mask[p]).collect(),
        }
    }
}

pub fn build_context(
    user: &User,
    cells: &[Cell],
    ledger: &PrbLedger,
    links: &[LinkState],
    estimates: &[u32],
) -> Result<DecisionContext> {
    if ledger.cells() != cells.len() || links.len() != cells.len() || estimates.len() != cells.len()
    {
        return Err(Error::invariant("context inputs disagree on cell count"));
    }
    ledger.check()?;
    let entries = cells
        .iter()
        .zip(links)
        .zip(estimates)
        .map(|((cell, link), &estimate)| {
            if ledger.budget(cell.id) != cell.prb_budget {
                return Err(Error::invariant(format!(
                    "cell {}: ledger budget mismatch",
                    cell.id
                )));
            }
            Ok(CellEntry {
                cell_id: cell.id,
                prb_budget: cell.prb_budget,
                current_load: ledger.load(cell.id),
                prbs_remaining: ledger.remaining(cell.id),
                link: link.clone(),
                prbs_needed: prbs_needed(user.demand_bps, link.per_prb_rate_bps),
                remaining_users_estimate: estimate,
            })
        })
        .collect::<Result<_>>()?;
    Ok(DecisionContext {
        user_id: user.id,
        demand_bps: user.demand_bps,
        entries,
    })
}

/// Least-loaded eligible cell, ties to the lowest cell id.
pub fn clb_select(ctx: &DecisionContext) -> Decision {
    let best = ctx
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.eligible())
        .min_by(|(_, a), (_, b)| {
            a.current_load
                .total_cmp(&b.current_load)
                .then(a.cell_id.cmp(&b.cell_id))
        });
    best.map_or(Decision::NotHandled, |(i, _)| ctx.serve(i))
}

/// Whether SLB may hand out a cell that cannot carry the full demand.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlbService {
    /// Only cells that can satisfy the demand in full are candidates; a user
    /// with none is left not handled.
    #[default]
    Full,
    /// Any eligible cell is a candidate, so the best one may serve partially.
    Partial,
}

/// Highest achievable satisfaction over all eligible cells; ties to fewer
/// PRBs, then lowest id.
pub fn slb_select(ctx: &DecisionContext) -> Decision {
    slb_select_with(ctx, SlbService::Partial)
}

pub fn slb_select_with(ctx: &DecisionContext, service: SlbService) -> Decision {
    let demand = ctx.demand_bps;
    let best = ctx
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.eligible())
        .filter(|(_, e)| match service {
            SlbService::Partial => true,
            SlbService::Full => e.prbs_needed.is_some_and(|n| n <= e.prbs_remaining),
        })
        .min_by(|(_, a), (_, b)| {
            b.achievable_satisfaction(demand)
                .total_cmp(&a.achievable_satisfaction(demand))
                .then(a.allocatable().cmp(&b.allocatable()))
                .then(a.cell_id.cmp(&b.cell_id))
        });
    best.map_or(Decision::NotHandled, |(i, _)| ctx.serve(i))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RllbChoice {
    pub decision: Decision,
    /// Index into the observation columns.
    pub chosen: Option<usize>,
    /// Raw network outputs; absent for exploratory or impossible decisions.
    pub q_values: Option<Vec<f64>>,
    pub explored: bool,
}

/// Index of the largest value over masked-in entries, ties to the lowest.
pub fn masked_argmax(values: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &ok)) in values.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// ε-greedy over eligible cells. One uniform draw decides exploration; an
/// exploratory step then draws the cell uniformly from the eligible set.
pub fn rllb_select<R: Rng + ?Sized>(
    ctx: &DecisionContext,
    obs: &Observation,
    qnet: &QNetwork,
    epsilon: f64,
    rng: &mut R,
) -> Result<RllbChoice> {
    let eligible: Vec<usize> = (0..obs.cells()).filter(|&i| obs.mask()[i]).collect();
    if eligible.is_empty() {
        return Ok(RllbChoice {
            decision: Decision::NotHandled,
            chosen: None,
            q_values: None,
            explored: false,
        });
    }
    if rng.random::<f64>() < epsilon {
        let pick = eligible[rng.random_range(0..eligible.len())];
        return Ok(RllbChoice {
            decision: ctx.serve(pick),
            chosen: Some(pick),
            q_values: None,
            explored: true,
        });
    }
    let (q, _) = qnet.forward(obs)?;
    let pick = masked_argmax(&q, obs.mask()).expect("eligible set is non-empty");
    Ok(RllbChoice {
        decision: ctx.serve(pick),
        chosen: Some(pick),
        q_values: Some(q),
        explored: false,
    })
}
