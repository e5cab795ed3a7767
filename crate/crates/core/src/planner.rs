//! Rolling-horizon replay of a voting period.
//!
//! Each night the planner forecasts the remaining days from what has been
//! observed, evaluates every layout-feasible combination, solves the
//! lexicographic allocation problem and executes that night's transfers.
//! The fixed baseline keeps a population-proportional allocation throughout.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cost::{build_cost_matrix, transfer_order_cost, CostMatrix, CostParameters, SiteRecord};
use crate::demand::{build_forecast_with, realize_arrivals, HistoricalTurnout, ObservedArrivals, ProfileSet, ScalingBounds};
use crate::error::{Error, Result, ResultExt};
use crate::optimizer::{
    deployment_cost, score_candidates, solve_lexicographic, tighten_fairness, AllocationPlan, Assignment, CandidateSet,
    FairnessBounds, OptimizationInstance, SolverLimits, TransferOrder,
};
use crate::queueing::{evaluate_location_day, simulate_voting_day, ArrivalInput, EvaluationSettings};
use crate::resource::{PerResource, Resource, ResourceCombination};
use crate::scoring::IndifferenceZoneSpec;
use crate::seed::{derive, Stream};

/// How the score bounds of each nightly instance are chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fairness {
    Fixed(FairnessBounds),
    /// Raise the lower bound as far as the instance stays feasible.
    AutoTighten,
}

/// Everything the nightly pipeline needs besides the current state.
#[derive(Clone, Debug)]
pub struct PlannerInputs {
    pub sites: Vec<SiteRecord>,
    pub params: CostParameters,
    pub historical: HistoricalTurnout,
    pub profiles: ProfileSet,
    pub scaling: ScalingBounds,
    pub evaluation: EvaluationSettings,
    pub zones: IndifferenceZoneSpec,
    pub fairness: Fairness,
    pub epsilon: f64,
    pub limits: SolverLimits,
    /// Locations open on early days; every other location opens on the last day only.
    pub early_eligible: BTreeSet<String>,
    pub seed: u64,
}

impl PlannerInputs {
    /// Voting days in the horizon, the last one being election day.
    pub fn horizon(&self) -> usize {
        self.historical.days()
    }

    pub fn is_active(&self, location: &str, day: usize) -> bool {
        day == self.horizon() || self.early_eligible.contains(location)
    }

    pub fn polling(&self) -> impl Iterator<Item = &SiteRecord> {
        self.sites.iter().filter(|s| !s.is_warehouse())
    }

    pub fn cost_matrix(&self) -> Result<CostMatrix> {
        build_cost_matrix(&self.sites, &self.params)
    }

    pub fn validate(&self) -> Result<()> {
        self.cost_matrix()?;
        if self.horizon() < 2 {
            return Err(Error::invalid("horizon must span at least one early day and election day"));
        }
        let polling: BTreeSet<&str> = self.polling().map(|s| s.id.as_str()).collect();
        let hist: BTreeSet<&str> = self.historical.locations().collect();
        if polling != hist {
            let diff: Vec<&str> = polling.symmetric_difference(&hist).copied().collect();
            return Err(Error::InconsistentLocations(diff.join(", ")));
        }
        if let Some(unknown) = self.early_eligible.iter().find(|l| !polling.contains(l.as_str())) {
            return Err(Error::invalid(format!("early-eligible location {unknown} is not a polling location")));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::invalid("epsilon must be >= 0"));
        }
        if let Fairness::Fixed(b) = self.fairness {
            b.validate()?;
        }
        Ok(())
    }
}

/// Inventories and observations after the allocation for `day` is in place.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    /// Last day whose night has been executed; 0 before the first night.
    pub day: usize,
    pub inventories: BTreeMap<String, PerResource<u32>>,
    pub warehouse: PerResource<u32>,
    pub observed: ObservedArrivals,
    pub cost: f64,
}

impl SystemState {
    pub fn new(inventories: BTreeMap<String, PerResource<u32>>, warehouse: PerResource<u32>, hours: usize) -> Self {
        Self {
            day: 0,
            inventories,
            warehouse,
            observed: ObservedArrivals::empty(hours),
            cost: 0.0,
        }
    }

    /// Machines per resource across locations and the warehouse.
    pub fn totals(&self) -> PerResource<u64> {
        PerResource::from_fn(|r| {
            self.warehouse[r] as u64 + self.inventories.values().map(|v| v[r] as u64).sum::<u64>()
        })
    }

    pub fn holding(&self, location: &str) -> PerResource<u32> {
        self.inventories.get(location).copied().unwrap_or_default()
    }
}

/// Plan for nights `state.day + 1 ..= horizon` from the observations so far.
pub fn nightly_replan(state: &SystemState, inputs: &PlannerInputs) -> Result<AllocationPlan> {
    let inst = nightly_instance(state, inputs)?;
    let inst = match inputs.fairness {
        Fairness::Fixed(b) => inst.with_bounds(b),
        Fairness::AutoTighten => {
            let b = tighten_fairness(&inst)?;
            inst.with_bounds(b)
        }
    };
    let (_, _, plan) = solve_lexicographic(&inst)?;
    Ok(plan)
}

/// Forecast, simulate and score the remaining horizon into an optimization instance.
pub fn nightly_instance(state: &SystemState, inputs: &PlannerInputs) -> Result<OptimizationInstance> {
    let horizon = inputs.horizon();
    if state.day >= horizon {
        return Err(Error::invalid("no voting days remain"));
    }
    if state.observed.elapsed() != state.day {
        return Err(Error::invalid(format!(
            "state is at day {} but {} days were observed",
            state.day,
            state.observed.elapsed()
        )));
    }
    let night = state.day + 1;
    let forecast = build_forecast_with(&inputs.historical, &state.observed, &inputs.profiles, inputs.scaling)?;

    let mut candidates = CandidateSet::new();
    for (idx, site) in inputs.polling().enumerate() {
        for day in night..=horizon {
            if !inputs.is_active(&site.id, day) {
                continue;
            }
            let rates = forecast.rates(&site.id, day).expect("forecast covers every polling location");
            let seed = derive(inputs.seed, Stream::Plan, &[night as u64, idx as u64, day as u64]);
            let evaluated = evaluate_location_day(&ArrivalInput::Rates(rates.to_vec()), site.caps, &inputs.evaluation, seed)
                .context(|| format!("evaluating {} on day {day}", site.id))?;
            candidates.insert((site.id.clone(), day), score_candidates(&evaluated, &inputs.zones));
        }
    }

    let mut inst = OptimizationInstance::new(
        inputs.sites.clone(),
        inputs.params.clone(),
        (night, horizon),
        candidates,
        state.inventories.clone(),
        state.warehouse,
    )?
    .with_epsilon(inputs.epsilon);
    inst.limits = inputs.limits;
    Ok(inst)
}

/// Executes the orders of `night` (warehouse inbound first), then accrues
/// transfer money and the deployment money of day `night`.
pub fn apply_night_transfers(
    state: &SystemState,
    plan: &AllocationPlan,
    night: usize,
    inputs: &PlannerInputs,
) -> Result<SystemState> {
    if night != state.day + 1 {
        return Err(Error::invalid(format!("night {night} does not follow day {}", state.day)));
    }
    let matrix = inputs.cost_matrix()?;
    let warehouse = matrix.warehouse_id().to_string();
    let mut next = state.clone();
    let (inbound, rest): (Vec<&TransferOrder>, Vec<&TransferOrder>) =
        plan.transfers_on(night).partition(|t| t.to == warehouse);
    for t in inbound.into_iter().chain(rest) {
        let leg = matrix
            .leg(&t.from, &t.to)
            .ok_or_else(|| Error::invalid(format!("transfer {} -> {} names an unknown site", t.from, t.to)))?;
        next.cost += transfer_order_cost(t.qty, leg, &inputs.params).map_err(|_| Error::LocalityViolation {
            from: t.from.clone(),
            to: t.to.clone(),
        })?;
        let source = if t.from == warehouse {
            &mut next.warehouse
        } else {
            next.inventories.entry(t.from.clone()).or_default()
        };
        source[t.resource] = source[t.resource]
            .checked_sub(t.qty)
            .ok_or_else(|| Error::StockUnderflow(t.from.clone()))?;
        let sink = if t.to == warehouse {
            &mut next.warehouse
        } else {
            next.inventories.entry(t.to.clone()).or_default()
        };
        sink[t.resource] += t.qty;
    }
    for site in inputs.polling() {
        if inputs.is_active(&site.id, night) {
            next.cost += deployment_cost(combo_of(next.holding(&site.id)), &inputs.params);
        }
    }
    next.day = night;
    Ok(next)
}

fn combo_of(p: PerResource<u32>) -> ResourceCombination {
    ResourceCombination::new(p.pollpads, p.bmds, p.scanners)
}

/// Splits `fleet` over `sites` in proportion to registered voters, at least
/// one machine each, by largest remainders.
pub fn baseline_allocation(sites: &[SiteRecord], fleet: PerResource<u32>) -> Result<BTreeMap<String, PerResource<u32>>> {
    let polling: Vec<&SiteRecord> = sites.iter().filter(|s| !s.is_warehouse()).collect();
    let mut out: BTreeMap<String, PerResource<u32>> =
        polling.iter().map(|s| (s.id.clone(), PerResource::default())).collect();
    if polling.is_empty() {
        return Ok(out);
    }
    for r in Resource::ALL {
        let counts = largest_remainder(&polling, fleet[r])?;
        for (s, c) in polling.iter().zip(counts) {
            out.get_mut(&s.id).expect("listed")[r] = c;
        }
    }
    Ok(out)
}

fn largest_remainder(sites: &[&SiteRecord], fleet: u32) -> Result<Vec<u32>> {
    let n = sites.len();
    if (fleet as usize) < n {
        return Err(Error::FleetTooSmall);
    }
    let weight = |i: usize| -> f64 {
        if sites.iter().all(|s| s.registered == 0) {
            1.0
        } else {
            sites[i].registered as f64
        }
    };
    // Locations whose proportional share falls below one are pinned at one,
    // and the rest of the fleet is re-shared among the others.
    let mut pinned = vec![false; n];
    let quotas = loop {
        let free: Vec<usize> = (0..n).filter(|&i| !pinned[i]).collect();
        let left = fleet as f64 - pinned.iter().filter(|&&p| p).count() as f64;
        let total: f64 = free.iter().map(|&i| weight(i)).sum();
        let mut quotas = vec![1.0; n];
        let mut changed = false;
        for &i in &free {
            quotas[i] = if total > 0.0 { left * weight(i) / total } else { 0.0 };
            if quotas[i] < 1.0 {
                pinned[i] = true;
                changed = true;
            }
        }
        if !changed {
            break quotas;
        }
    };
    let mut counts: Vec<u32> = quotas.iter().map(|q| q.floor() as u32).collect();
    let short = fleet - counts.iter().sum::<u32>();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra)
            .then(sites[b].registered.cmp(&sites[a].registered))
            .then(a.cmp(&b))
    });
    for &i in order.iter().take(short as usize) {
        counts[i] += 1;
    }
    Ok(counts)
}

/// The fixed population-based plan: the baseline allocation on every active
/// slot of `inst`, no transfers.
pub fn generate_fixed_baseline(inst: &OptimizationInstance, fleet: PerResource<u32>) -> Result<AllocationPlan> {
    let alloc = baseline_allocation(&inst.sites, fleet)?;
    let mut assignments = Vec::new();
    let mut total_cost = 0.0;
    for day in inst.first_day..=inst.last_day {
        for (loc, counts) in &alloc {
            if !inst.candidates.contains_key(&(loc.clone(), day)) {
                continue;
            }
            let combo = combo_of(*counts);
            total_cost += deployment_cost(combo, &inst.params);
            assignments.push(Assignment {
                location: loc.clone(),
                day,
                combo,
                robust_wait: None,
                score: None,
            });
        }
    }
    Ok(AllocationPlan {
        assignments,
        transfers: Vec::new(),
        total_cost,
        total_score: 0.0,
        exact: true,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fixed,
    Dynamic,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Fixed, Mode::Dynamic];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Fixed => "fixed",
            Mode::Dynamic => "dynamic",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A voting period to replay: planner inputs plus the demand that really happens.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub inputs: PlannerInputs,
    /// Expected arrivals per hour for each polling location, days `1..=D`.
    pub truth: BTreeMap<String, Vec<Vec<f64>>>,
    /// Machines per resource allocated by the baseline.
    pub fleet: PerResource<u32>,
    /// Extra machines held in the warehouse in both modes.
    pub reserve: PerResource<u32>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.inputs.validate()?;
        let hours = self.inputs.profiles.default.hours();
        for site in self.inputs.polling() {
            let days = self
                .truth
                .get(&site.id)
                .ok_or_else(|| Error::invalid(format!("no demand for {}", site.id)))?;
            if days.len() != self.inputs.horizon() || days.iter().any(|d| d.len() != hours) {
                return Err(Error::invalid(format!(
                    "demand for {} must cover {} days of {hours} hours",
                    site.id,
                    self.inputs.horizon()
                )));
            }
        }
        Ok(())
    }

    /// Starting state for `mode`: the baseline everywhere in fixed mode; in
    /// dynamic mode locations closed on day one start empty and their share
    /// waits in the warehouse.
    pub fn initial_state(&self, mode: Mode) -> Result<SystemState> {
        let mut alloc = baseline_allocation(&self.inputs.sites, self.fleet)?;
        let mut warehouse = self.reserve;
        if mode == Mode::Dynamic {
            for (loc, counts) in alloc.iter_mut() {
                if !self.inputs.is_active(loc, 1) {
                    for r in Resource::ALL {
                        warehouse[r] += counts[r];
                    }
                    *counts = PerResource::default();
                }
            }
        }
        Ok(SystemState::new(alloc, warehouse, self.inputs.profiles.default.hours()))
    }
}

/// Realized outcome of one open location on one day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub day: usize,
    pub location: String,
    pub pollpads: u32,
    pub bmds: u32,
    pub scanners: u32,
    pub arrivals: u64,
    pub robust_wait_min: f64,
    pub util_pollpads: f64,
    pub util_bmds: f64,
    pub util_scanners: f64,
    pub transfers_in: u32,
    pub transfers_out: u32,
    pub cost_accrued: f64,
}

impl LedgerRow {
    pub fn combo(&self) -> ResourceCombination {
        ResourceCombination::new(self.pollpads, self.bmds, self.scanners)
    }

    pub fn utilization(&self) -> PerResource<f64> {
        PerResource::new(self.util_pollpads, self.util_bmds, self.util_scanners)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DayRecord {
    pub day: usize,
    /// Realized hourly arrivals of every polling location.
    pub arrivals: BTreeMap<String, Vec<u64>>,
    /// Assignments in force for the day.
    pub assignments: Vec<Assignment>,
    pub transfers: Vec<TransferOrder>,
    pub rows: Vec<LedgerRow>,
    /// Money spent on the preceding night and this day.
    pub cost: f64,
    pub cumulative_cost: f64,
    /// Machines per resource in locations plus warehouse after the night.
    pub totals: PerResource<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HorizonLedger {
    pub mode: Mode,
    pub days: Vec<DayRecord>,
    /// Machines per resource before the first night.
    pub initial_totals: PerResource<u64>,
    /// The allocation and transfers actually executed.
    pub executed: AllocationPlan,
}

impl HorizonLedger {
    pub fn rows(&self) -> impl Iterator<Item = &LedgerRow> {
        self.days.iter().flat_map(|d| d.rows.iter())
    }

    pub fn total_cost(&self) -> f64 {
        self.days.last().map_or(0.0, |d| d.cumulative_cost)
    }

    /// One JSON object per line, days then locations in order.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for row in self.rows() {
            out.push_str(&serde_json::to_string(row).expect("row serializes"));
            out.push('\n');
        }
        out
    }
}

/// Replays the whole horizon in `mode`. Realized arrivals depend only on the
/// seed, day and location, so both modes see identical demand.
pub fn run_horizon(scenario: &Scenario, mode: Mode, seed: u64) -> Result<HorizonLedger> {
    scenario.validate()?;
    let mut inputs = scenario.inputs.clone();
    inputs.seed = seed;
    let horizon = inputs.horizon();
    let polling: Vec<SiteRecord> = inputs.polling().cloned().collect();

    let mut state = scenario.initial_state(mode)?;
    let initial_totals = state.totals();
    let fixed_plan = AllocationPlan {
        assignments: Vec::new(),
        transfers: Vec::new(),
        total_cost: 0.0,
        total_score: 0.0,
        exact: true,
    };
    let mut executed = fixed_plan.clone();
    let mut days = Vec::with_capacity(horizon);

    for day in 1..=horizon {
        let before = state.cost;
        let (plan, assignments) = match mode {
            Mode::Fixed => {
                let slice = polling
                    .iter()
                    .filter(|s| inputs.is_active(&s.id, day))
                    .map(|s| Assignment {
                        location: s.id.clone(),
                        day,
                        combo: combo_of(state.holding(&s.id)),
                        robust_wait: None,
                        score: None,
                    })
                    .collect();
                (fixed_plan.clone(), slice)
            }
            Mode::Dynamic => {
                let plan = nightly_replan(&state, &inputs).context(|| format!("{mode} mode, night {day}"))?;
                executed.exact &= plan.exact;
                let slice: Vec<Assignment> = plan.assignments.iter().filter(|a| a.day == day).cloned().collect();
                (plan, slice)
            }
        };
        state = apply_night_transfers(&state, &plan, day, &inputs).context(|| format!("{mode} mode, night {day}"))?;
        let transfers: Vec<TransferOrder> = plan.transfers_on(day).cloned().collect();
        for a in &assignments {
            if combo_of(state.holding(&a.location)) != a.combo {
                return Err(Error::invalid(format!("inventory mismatch at {} on day {day}", a.location)));
            }
        }

        let mut arrivals = BTreeMap::new();
        let mut rows = Vec::new();
        for (idx, site) in polling.iter().enumerate() {
            let hours = inputs.profiles.default.hours();
            if !inputs.is_active(&site.id, day) {
                arrivals.insert(site.id.clone(), vec![0; hours]);
                continue;
            }
            let rates = &scenario.truth[&site.id][day - 1];
            let counts = realize_arrivals(rates, derive(seed, Stream::Realize, &[day as u64, idx as u64]));
            let combo = combo_of(state.holding(&site.id));
            let replay = simulate_voting_day(
                &ArrivalInput::Counts(counts.clone()),
                combo,
                &inputs.evaluation.services,
                inputs.evaluation.policy,
                derive(seed, Stream::Replay, &[day as u64, idx as u64]),
            )
            .context(|| format!("{mode} mode, replaying {} on day {day}", site.id))?;

            let (mut t_in, mut t_out, mut moved) = (0, 0, 0.0);
            for t in &transfers {
                if t.to == site.id || t.from == site.id {
                    if t.to == site.id {
                        t_in += t.qty;
                    } else {
                        t_out += t.qty;
                    }
                    // Peer orders are charged to the receiving end.
                    let charged_here = t.to == site.id || !polling.iter().any(|s| s.id == t.to);
                    if charged_here {
                        moved += t.cost;
                    }
                }
            }
            let util = replay.scheduled_utilization;
            rows.push(LedgerRow {
                day,
                location: site.id.clone(),
                pollpads: combo.pollpads,
                bmds: combo.bmds,
                scanners: combo.scanners,
                arrivals: counts.iter().sum(),
                robust_wait_min: replay.robust_wait(inputs.evaluation.quantile),
                util_pollpads: util.pollpads,
                util_bmds: util.bmds,
                util_scanners: util.scanners,
                transfers_in: t_in,
                transfers_out: t_out,
                cost_accrued: moved + deployment_cost(combo, &inputs.params),
            });
            arrivals.insert(site.id.clone(), counts);
        }
        state.observed.push_day(arrivals.clone())?;

        executed.assignments.extend(assignments.iter().cloned());
        executed.transfers.extend(transfers.iter().cloned());
        executed.total_score += assignments.iter().filter_map(|a| a.score).sum::<f64>();
        days.push(DayRecord {
            day,
            arrivals,
            assignments,
            transfers,
            rows,
            cost: state.cost - before,
            cumulative_cost: state.cost,
            totals: state.totals(),
        });
    }
    executed.total_cost = state.cost;
    Ok(HorizonLedger {
        mode,
        days,
        initial_totals,
        executed,
    })
}
