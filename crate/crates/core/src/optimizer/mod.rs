//! Two-stage lexicographic allocation: minimum total cost first, then the
//! highest total score within a relaxed cost budget.
//!
//! Days are numbered from 1. Night `d` is the transfer window right before
//! voting day `d`. A (location, day) slot is active when the candidate set has
//! an entry for it; on inactive days a location must hold no machines.

mod bnb;
mod model;
mod solve;
mod transport;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cost::{build_cost_matrix, transfer_order_cost, CostMatrix, CostParameters, SiteRecord};
use crate::error::{Error, InfeasibilityReport, Result};
use crate::queueing::EvaluatedCombination;
use crate::resource::{PerResource, Resource, ResourceCombination};
use crate::scoring::{score_of_wait, IndifferenceZoneSpec};

pub use solve::{solve_lexicographic, solve_stage_one, solve_stage_two, tighten_fairness};

/// Scores selectable for any location-day lie in `[lower, upper]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessBounds {
    pub lower: f64,
    pub upper: f64,
}

impl FairnessBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lower && self.lower <= self.upper && self.upper <= 1.0) {
            return Err(Error::invalid(format!(
                "fairness bounds [{}, {}] must satisfy 0 <= L <= U <= 1",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    pub fn contains(&self, score: f64) -> bool {
        self.lower - 1e-12 <= score && score <= self.upper + 1e-12
    }
}

impl Default for FairnessBounds {
    fn default() -> Self {
        Self { lower: 0.0, upper: 1.0 }
    }
}

/// One selectable combination for a location-day.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub combo: ResourceCombination,
    pub robust_wait: f64,
    pub score: f64,
}

/// Candidates per (location id, day). An empty list makes the slot infeasible.
pub type CandidateSet = BTreeMap<(String, usize), Vec<Candidate>>;

/// Keeps the combinations that passed the utilization filter and scores them.
pub fn score_candidates(evaluated: &[EvaluatedCombination], zones: &IndifferenceZoneSpec) -> Vec<Candidate> {
    evaluated
        .iter()
        .filter(|e| e.passed)
        .map(|e| Candidate {
            combo: e.combo,
            robust_wait: e.robust_wait,
            score: score_of_wait(e.robust_wait, zones),
        })
        .collect()
}

/// Size thresholds separating the exact search from the heuristic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverLimits {
    /// Joint choices per day for one block of locations solved by dynamic programming.
    pub max_states: usize,
    /// State pairs visited across all nights of one block.
    pub max_pairs: u64,
    /// Branch-and-bound is attempted on instances with at most this many active slots.
    pub bnb_max_slots: usize,
    pub bnb_max_nodes: u64,
    /// Search nodes for one overnight rebalancing subproblem.
    pub transport_max_nodes: u64,
}

impl Default for SolverLimits {
    fn default() -> Self {
        Self {
            max_states: 20_000,
            max_pairs: 4_000_000,
            bnb_max_slots: 12,
            bnb_max_nodes: 2_000_000,
            transport_max_nodes: 200_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationInstance {
    pub sites: Vec<SiteRecord>,
    pub matrix: CostMatrix,
    pub params: CostParameters,
    pub first_day: usize,
    pub last_day: usize,
    pub candidates: CandidateSet,
    /// Machines on hand at each polling location before night `first_day`; absent means none.
    pub initial: BTreeMap<String, PerResource<u32>>,
    pub warehouse_stock: PerResource<u32>,
    pub bounds: FairnessBounds,
    pub epsilon: f64,
    /// Per-district split of the warehouse stock; `None` shares it county-wide.
    pub warehouse_partition: Option<BTreeMap<u32, PerResource<u32>>>,
    pub limits: SolverLimits,
}

impl OptimizationInstance {
    /// Builds the cost matrix and fills bounds, ε and limits with defaults.
    pub fn new(
        sites: Vec<SiteRecord>,
        params: CostParameters,
        days: (usize, usize),
        candidates: CandidateSet,
        initial: BTreeMap<String, PerResource<u32>>,
        warehouse_stock: PerResource<u32>,
    ) -> Result<Self> {
        let matrix = build_cost_matrix(&sites, &params)?;
        let inst = Self {
            sites,
            matrix,
            params,
            first_day: days.0,
            last_day: days.1,
            candidates,
            initial,
            warehouse_stock,
            bounds: FairnessBounds::default(),
            epsilon: 0.05,
            warehouse_partition: None,
            limits: SolverLimits::default(),
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn with_bounds(mut self, bounds: FairnessBounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.bounds.validate()?;
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("relaxation ε must be finite and >= 0"));
        }
        if self.first_day == 0 || self.first_day > self.last_day {
            return Err(Error::invalid(format!(
                "day range {}..={} must be non-empty and start at 1 or later",
                self.first_day, self.last_day
            )));
        }
        let polling: BTreeMap<&str, &SiteRecord> = self
            .sites
            .iter()
            .filter(|s| !s.is_warehouse())
            .map(|s| (s.id.as_str(), s))
            .collect();
        for ((loc, day), list) in &self.candidates {
            if !polling.contains_key(loc.as_str()) {
                return Err(Error::invalid(format!("candidates for unknown polling location {loc}")));
            }
            if !(self.first_day..=self.last_day).contains(day) {
                return Err(Error::invalid(format!("candidates for {loc} on day {day} outside the horizon")));
            }
            if list.iter().any(|c| !(0.0..=1.0).contains(&c.score) || !(c.robust_wait >= 0.0)) {
                return Err(Error::invalid(format!("candidate for {loc} on day {day} has an invalid score or wait")));
            }
        }
        for loc in self.initial.keys() {
            if !polling.contains_key(loc.as_str()) {
                return Err(Error::invalid(format!("initial inventory for unknown polling location {loc}")));
            }
        }
        if let Some(part) = &self.warehouse_partition {
            let districts: BTreeSet<u32> = polling.values().map(|s| s.district).collect();
            if part.keys().any(|d| !districts.contains(d)) {
                return Err(Error::invalid("warehouse partition names an unknown district"));
            }
            for r in Resource::ALL {
                let total: u64 = part.values().map(|p| p[r] as u64).sum();
                if total != self.warehouse_stock[r] as u64 {
                    return Err(Error::invalid(format!("warehouse partition of {r} does not add up to the stock")));
                }
            }
        }
        Ok(())
    }

    fn site(&self, id: &str) -> Option<&SiteRecord> {
        self.matrix.index_of(id).map(|i| &self.sites[i])
    }

    fn initial_of(&self, loc: &str) -> PerResource<u32> {
        self.initial.get(loc).copied().unwrap_or_default()
    }

    /// Machines of each type in the system.
    pub fn fleet(&self) -> PerResource<u64> {
        PerResource::from_fn(|r| {
            self.initial.values().map(|p| p[r] as u64).sum::<u64>() + self.warehouse_stock[r] as u64
        })
    }
}

/// Machines moved on the night before `night`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferOrder {
    pub night: usize,
    pub from: String,
    pub to: String,
    pub resource: Resource,
    pub qty: u32,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub location: String,
    pub day: usize,
    #[serde(flatten)]
    pub combo: ResourceCombination,
    #[serde(rename = "robust_wait_min")]
    pub robust_wait: Option<f64>,
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    /// Sorted by location id, then day.
    pub assignments: Vec<Assignment>,
    pub transfers: Vec<TransferOrder>,
    pub total_cost: f64,
    pub total_score: f64,
    /// False when a size limit forced the heuristic path.
    pub exact: bool,
}

impl AllocationPlan {
    pub fn assignment(&self, location: &str, day: usize) -> Option<&Assignment> {
        self.assignments
            .iter()
            .find(|a| a.location == location && a.day == day)
    }

    pub fn transfers_on(&self, night: usize) -> impl Iterator<Item = &TransferOrder> {
        self.transfers.iter().filter(move |t| t.night == night)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }
}

impl fmt::Display for AllocationPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} assignments, {} transfers, cost {:.2}, score {:.2}{}",
            self.assignments.len(),
            self.transfers.len(),
            self.total_cost,
            self.total_score,
            if self.exact { "" } else { " (heuristic)" }
        )
    }
}

/// Transfer money plus deployment money, recomputed from the plan's orders and assignments.
pub fn total_cost(plan: &AllocationPlan, inst: &OptimizationInstance) -> Result<f64> {
    let mut total = 0.0;
    for t in &plan.transfers {
        let leg = inst
            .matrix
            .leg(&t.from, &t.to)
            .ok_or_else(|| Error::invalid(format!("transfer {} -> {} names an unknown site", t.from, t.to)))?;
        total += transfer_order_cost(t.qty, leg, &inst.params).map_err(|_| Error::LocalityViolation {
            from: t.from.clone(),
            to: t.to.clone(),
        })?;
    }
    for a in &plan.assignments {
        total += deployment_cost(a.combo, &inst.params);
    }
    Ok(total)
}

pub(crate) fn deployment_cost(combo: ResourceCombination, params: &CostParameters) -> f64 {
    Resource::ALL
        .iter()
        .map(|&r| combo.get(r) as f64 * params.deployment_cost[r])
        .sum()
}

/// Every broken plan invariant as a human-readable line; empty when valid.
pub fn validate_plan(plan: &AllocationPlan, inst: &OptimizationInstance) -> Vec<String> {
    let mut out = Vec::new();
    let days = inst.first_day..=inst.last_day;

    let mut seen = BTreeSet::new();
    let mut score_sum = 0.0;
    for a in &plan.assignments {
        if !seen.insert((a.location.clone(), a.day)) {
            out.push(format!("duplicate assignment for {} on day {}", a.location, a.day));
            continue;
        }
        let Some(list) = inst.candidates.get(&(a.location.clone(), a.day)) else {
            out.push(format!("unexpected assignment for {} on day {}", a.location, a.day));
            continue;
        };
        match list.iter().find(|c| c.combo == a.combo) {
            None => out.push(format!(
                "combination {} at {} on day {} is not a candidate",
                a.combo, a.location, a.day
            )),
            Some(c) => {
                score_sum += c.score;
                if !inst.bounds.contains(c.score) {
                    out.push(format!(
                        "score {} at {} on day {} outside [{}, {}]",
                        c.score, a.location, a.day, inst.bounds.lower, inst.bounds.upper
                    ));
                }
            }
        }
    }
    for (loc, day) in inst.candidates.keys() {
        if !seen.contains(&(loc.clone(), *day)) {
            out.push(format!("missing assignment for {loc} on day {day}"));
        }
    }

    let mut locality_ok = true;
    for t in &plan.transfers {
        if t.qty == 0 {
            out.push(format!("zero-quantity order {} -> {} on night {}", t.from, t.to, t.night));
        }
        if !days.contains(&t.night) {
            out.push(format!("order on night {} outside the horizon", t.night));
        }
        match inst.matrix.leg(&t.from, &t.to) {
            None => {
                locality_ok = false;
                out.push(format!("order names an unknown site: {} -> {}", t.from, t.to));
            }
            Some(leg) if !leg.is_finite() => {
                locality_ok = false;
                out.push(format!("locality violation: {} -> {}", t.from, t.to));
            }
            Some(_) => {}
        }
        if t.from == t.to {
            out.push(format!("order from {} to itself", t.from));
        }
    }
    if locality_ok {
        out.extend(simulate_inventory(plan, inst));
        match total_cost(plan, inst) {
            Ok(c) if (c - plan.total_cost).abs() > 1e-6 * c.abs().max(1.0) => out.push("cost mismatch".into()),
            Err(e) => out.push(e.to_string()),
            _ => {}
        }
    }
    if (score_sum - plan.total_score).abs() > 1e-6 * score_sum.abs().max(1.0) {
        out.push("score mismatch".into());
    }
    out
}

/// Replays the orders night by night: inbound warehouse orders first, then the rest.
fn simulate_inventory(plan: &AllocationPlan, inst: &OptimizationInstance) -> Vec<String> {
    let mut out = Vec::new();
    let warehouse = inst.matrix.warehouse_id().to_string();
    let mut stock: BTreeMap<String, PerResource<i64>> = inst
        .sites
        .iter()
        .filter(|s| !s.is_warehouse())
        .map(|s| (s.id.clone(), inst.initial_of(&s.id).map(|&v| v as i64)))
        .collect();
    // Warehouse accounts keyed by district; one shared account under key `None`.
    let mut accounts: BTreeMap<Option<u32>, PerResource<i64>> = match &inst.warehouse_partition {
        Some(part) => part.iter().map(|(&d, p)| (Some(d), p.map(|&v| v as i64))).collect(),
        None => BTreeMap::from([(None, inst.warehouse_stock.map(|&v| v as i64))]),
    };
    let account_of = |site: &str| -> Option<u32> {
        inst.warehouse_partition
            .as_ref()
            .and_then(|_| inst.site(site).map(|s| s.district))
    };

    for night in inst.first_day..=inst.last_day {
        let orders: Vec<&TransferOrder> = plan.transfers_on(night).collect();
        let (inbound, rest): (Vec<&TransferOrder>, Vec<&TransferOrder>) =
            orders.into_iter().partition(|t| t.to == warehouse);
        let mut warehouse_negative = false;
        for t in inbound.into_iter().chain(rest) {
            let q = t.qty as i64;
            if t.from == warehouse {
                let acc = accounts.entry(account_of(&t.to)).or_default();
                acc[t.resource] -= q;
                if acc[t.resource] < 0 {
                    warehouse_negative = true;
                }
            } else if let Some(s) = stock.get_mut(&t.from) {
                s[t.resource] -= q;
                if s[t.resource] < 0 {
                    out.push(format!("stock underflow at {} on night {night}", t.from));
                }
            }
            if t.to == warehouse {
                accounts.entry(account_of(&t.from)).or_default()[t.resource] += q;
            } else if let Some(s) = stock.get_mut(&t.to) {
                s[t.resource] += q;
            }
        }
        if warehouse_negative {
            out.push(format!("warehouse stock negative on night {night}"));
        }
        for (loc, held) in &stock {
            let want = plan
                .assignment(loc, night)
                .map(|a| a.combo.counts())
                .unwrap_or_default();
            if Resource::ALL.iter().any(|&r| held[r] != want[r] as i64) {
                out.push(format!("inventory mismatch at {loc} on day {night}"));
            }
        }
    }
    out
}

/// Shorthand used by solvers and tests when infeasibility is found.
pub(crate) fn infeasible(report: InfeasibilityReport) -> Error {
    Error::Infeasible(report)
}
