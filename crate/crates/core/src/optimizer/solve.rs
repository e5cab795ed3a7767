//! Stage one (minimum cost), stage two (maximum score within budget) and
//! fairness tightening.
//!
//! Locations are grouped into blocks whose joint daily choices are small
//! enough to enumerate. Transfer cost only couples locations of the same
//! district, so a block is either one district or the whole county. Each block
//! is solved by dynamic programming over days.

use std::collections::BTreeMap;

use super::bnb::{branch_and_bound, Objective};
use super::model::{score_key, Choices, Model, Req};
use super::transport::{better, TransportCache};
use super::{infeasible, AllocationPlan, Assignment, FairnessBounds, OptimizationInstance, TransferOrder};
use crate::cost::order_cost_unchecked;
use crate::error::{Error, InfeasibilityReport, Result};
use crate::resource::Resource;

/// Per-slot state cap used once a block is too large for exact enumeration.
const HEURISTIC_STATES: usize = 256;
const LAGRANGE_ROUNDS: usize = 40;

struct Group {
    locs: Vec<usize>,
    districts: Vec<usize>,
    fleet: Option<[u64; 3]>,
}

/// Enumerated joint choices of a block for one day.
struct DayStates {
    n: usize,
    /// Option index per block location, `n × locs` flattened.
    choice: Vec<u16>,
    deploy: Vec<f64>,
    score: Vec<i64>,
    /// District sub-state index per block district, `n × districts` flattened.
    sub: Vec<u32>,
}

struct GroupDp {
    width: usize,
    nd: usize,
    days: Vec<DayStates>,
    nsub: Vec<Vec<usize>>,
    /// `tables[k][t]`: cost from sub-state on day t-1 (initial holding when t = 0) to day t.
    tables: Vec<Vec<Vec<(f64, u32)>>>,
    /// Minimum (cost, orders) from a day-t state to the end, including its deployment.
    v: Vec<Vec<(f64, u32)>>,
    root: (f64, u32),
}

fn radices(model: &Model, locs: &[usize], t: usize) -> Vec<usize> {
    locs.iter().map(|&l| model.opts[l][t].len()).collect()
}

fn product(r: &[usize]) -> u128 {
    r.iter().map(|&x| x as u128).product()
}

/// Rough count of enumerated states and state pairs for a block.
fn block_size(model: &Model, g: &Group) -> (u128, u128) {
    let mut max_states = 0u128;
    let mut pairs = 0u128;
    let mut prev_n = 1u128;
    let mut prev_sub: Vec<u128> = vec![1; g.districts.len()];
    for t in 0..model.days {
        let n = product(&radices(model, &g.locs, t));
        max_states = max_states.max(n);
        pairs += prev_n * n;
        for (i, &k) in g.districts.iter().enumerate() {
            let s = product(&radices(model, &model.districts[k].members, t));
            pairs += prev_sub[i] * s;
            prev_sub[i] = s;
        }
        prev_n = n;
    }
    (max_states, pairs)
}

fn fits(model: &Model, g: &Group) -> bool {
    let (states, pairs) = block_size(model, g);
    let lim = &model.inst.limits;
    states <= lim.max_states as u128 && pairs <= lim.max_pairs as u128
}

/// Splits the model into blocks; the flag says whether the county-wide fleet
/// still has to be checked across blocks.
fn make_groups(model: &Model) -> (Vec<Group>, bool) {
    let per_district = |fleet: bool| -> Vec<Group> {
        model
            .districts
            .iter()
            .enumerate()
            .map(|(k, d)| Group {
                locs: d.members.clone(),
                districts: vec![k],
                fleet: fleet.then_some(d.fleet),
            })
            .collect()
    };
    if model.partitioned {
        return (per_district(true), false);
    }
    let joint = Group {
        locs: (0..model.locs.len()).collect(),
        districts: (0..model.districts.len()).collect(),
        fleet: Some(model.fleet),
    };
    if model.districts.len() == 1 || fits(model, &joint) {
        return (vec![joint], false);
    }
    (per_district(false), true)
}

impl GroupDp {
    fn build(model: &Model, g: &Group, cache: &mut TransportCache) -> Self {
        let width = g.locs.len();
        let nd = g.districts.len();
        // Position of each district member inside the block's location list.
        let member_pos: Vec<Vec<usize>> = g
            .districts
            .iter()
            .map(|&k| {
                model.districts[k]
                    .members
                    .iter()
                    .map(|m| g.locs.iter().position(|l| l == m).expect("district inside block"))
                    .collect()
            })
            .collect();

        let mut days = Vec::with_capacity(model.days);
        let mut nsub = vec![Vec::with_capacity(model.days); nd];
        for t in 0..model.days {
            let rad = radices(model, &g.locs, t);
            let total = product(&rad) as usize;
            let sub_rad: Vec<Vec<usize>> = member_pos.iter().map(|pos| pos.iter().map(|&p| rad[p]).collect()).collect();
            for (k, r) in sub_rad.iter().enumerate() {
                nsub[k].push(product(r) as usize);
            }
            let mut st = DayStates {
                n: 0,
                choice: Vec::new(),
                deploy: Vec::new(),
                score: Vec::new(),
                sub: Vec::new(),
            };
            let mut digits = vec![0usize; width];
            for idx in 0..total {
                let mut rem = idx;
                for p in (0..width).rev() {
                    digits[p] = rem % rad[p];
                    rem /= rad[p];
                }
                if let Some(fleet) = g.fleet {
                    let mut sum = [0u64; 3];
                    for (p, &l) in g.locs.iter().enumerate() {
                        let req = model.opts[l][t][digits[p]].req;
                        for r in 0..3 {
                            sum[r] += req[r] as u64;
                        }
                    }
                    if (0..3).any(|r| sum[r] > fleet[r]) {
                        continue;
                    }
                }
                let mut deploy = 0.0;
                let mut score = 0;
                for (p, &l) in g.locs.iter().enumerate() {
                    let o = &model.opts[l][t][digits[p]];
                    deploy += o.deploy;
                    score += o.score;
                }
                st.n += 1;
                st.choice.extend(digits.iter().map(|&d| d as u16));
                st.deploy.push(deploy);
                st.score.push(score);
                for (k, pos) in member_pos.iter().enumerate() {
                    let mut s = 0usize;
                    for (j, &p) in pos.iter().enumerate() {
                        s = s * sub_rad[k][j] + digits[p];
                    }
                    st.sub.push(s as u32);
                }
            }
            days.push(st);
        }

        let mut tables = vec![Vec::with_capacity(model.days); nd];
        for (i, &k) in g.districts.iter().enumerate() {
            let members = &model.districts[k].members;
            let decode = |t: usize, s: usize| -> Vec<Req> {
                let rad: Vec<usize> = members.iter().map(|&l| model.opts[l][t].len()).collect();
                let mut digits = vec![0; members.len()];
                let mut rem = s;
                for j in (0..members.len()).rev() {
                    digits[j] = rem % rad[j];
                    rem /= rad[j];
                }
                members.iter().zip(digits).map(|(&l, d)| model.opts[l][t][d].req).collect()
            };
            for t in 0..model.days {
                let prev: Vec<Vec<Req>> = if t == 0 {
                    vec![members.iter().map(|&l| model.locs[l].initial).collect()]
                } else {
                    (0..nsub[i][t - 1]).map(|s| decode(t - 1, s)).collect()
                };
                let cur: Vec<Vec<Req>> = (0..nsub[i][t]).map(|s| decode(t, s)).collect();
                let mut table = Vec::with_capacity(prev.len() * cur.len());
                for p in &prev {
                    for c in &cur {
                        table.push(model.district_night(cache, k, p, c));
                    }
                }
                tables[i].push(table);
            }
        }

        let mut dp = GroupDp {
            width,
            nd,
            days,
            nsub,
            tables,
            v: Vec::new(),
            root: (f64::INFINITY, u32::MAX),
        };
        dp.backward();
        dp
    }

    /// Night-t transfer cost between state `a` on day t-1 (ignored when t = 0) and `b` on day t.
    fn transition(&self, t: usize, a: usize, b: usize) -> (f64, u32) {
        let mut cost = 0.0;
        let mut orders = 0;
        for k in 0..self.nd {
            let sb = self.days[t].sub[b * self.nd + k] as usize;
            let sa = if t == 0 { 0 } else { self.days[t - 1].sub[a * self.nd + k] as usize };
            let (c, o) = self.tables[k][t][sa * self.nsub[k][t] + sb];
            cost += c;
            orders += o;
        }
        (cost, orders)
    }

    fn backward(&mut self) {
        let last = self.days.len() - 1;
        let mut v: Vec<Vec<(f64, u32)>> = vec![Vec::new(); self.days.len()];
        v[last] = self.days[last].deploy.iter().map(|&d| (d, 0)).collect();
        for t in (0..last).rev() {
            let mut out = Vec::with_capacity(self.days[t].n);
            for a in 0..self.days[t].n {
                let mut best = (f64::INFINITY, u32::MAX);
                for b in 0..self.days[t + 1].n {
                    let (c, o) = self.transition(t + 1, a, b);
                    let cand = (c + v[t + 1][b].0, o + v[t + 1][b].1);
                    if better(cand.0, cand.1, best.0, best.1) {
                        best = cand;
                    }
                }
                out.push((self.days[t].deploy[a] + best.0, best.1));
            }
            v[t] = out;
        }
        let mut root = (f64::INFINITY, u32::MAX);
        for b in 0..self.days[0].n {
            let (c, o) = self.transition(0, 0, b);
            let cand = (c + v[0][b].0, o + v[0][b].1);
            if better(cand.0, cand.1, root.0, root.1) {
                root = cand;
            }
        }
        self.v = v;
        self.root = root;
    }

    fn feasible(&self) -> bool {
        self.root.0.is_finite()
    }

    /// Minimum-cost path, first in day-major order among ties.
    fn min_cost_path(&self) -> Vec<usize> {
        let mut path = Vec::with_capacity(self.days.len());
        let mut prev = 0;
        for t in 0..self.days.len() {
            let mut best = (f64::INFINITY, u32::MAX, 0);
            for b in 0..self.days[t].n {
                let (c, o) = self.transition(t, prev, b);
                let cand = (c + self.v[t][b].0, o + self.v[t][b].1);
                if better(cand.0, cand.1, best.0, best.1) {
                    best = (cand.0, cand.1, b);
                }
            }
            path.push(best.2);
            prev = best.2;
        }
        path
    }

    fn write_path(&self, model: &Model, g: &Group, path: &[usize], out: &mut Choices) {
        for (t, &s) in path.iter().enumerate() {
            for (p, &l) in g.locs.iter().enumerate() {
                let o = self.days[t].choice[s * self.width + p] as usize;
                out[l][t] = model.opts[l][t][o].cand;
            }
        }
    }

    /// Pareto frontier of (score, cost) over complete paths whose cost stays within `budget`.
    fn frontier(&self, budget: f64) -> Vec<FrontierPoint> {
        let tol = 1e-9 * budget.abs().max(1.0);
        let mut labels: Vec<Vec<Vec<Label>>> = Vec::with_capacity(self.days.len());
        for t in 0..self.days.len() {
            let mut day = Vec::with_capacity(self.days[t].n);
            for b in 0..self.days[t].n {
                let to_go = self.v[t][b].0 - self.days[t].deploy[b];
                let mut best: BTreeMap<std::cmp::Reverse<i64>, Label> = BTreeMap::new();
                let mut offer = |l: Label| {
                    if l.cost + to_go > budget + tol {
                        return;
                    }
                    match best.get_mut(&std::cmp::Reverse(l.score)) {
                        Some(cur) if !better(l.cost, l.orders, cur.cost, cur.orders) => {}
                        Some(cur) => *cur = l,
                        None => {
                            best.insert(std::cmp::Reverse(l.score), l);
                        }
                    }
                };
                if t == 0 {
                    let (c, o) = self.transition(0, 0, b);
                    offer(Label {
                        score: self.days[0].score[b],
                        cost: c + self.days[0].deploy[b],
                        orders: o,
                        prev: 0,
                        prev_label: 0,
                    });
                } else {
                    for (a, prev_labels) in labels[t - 1].iter().enumerate() {
                        if prev_labels.is_empty() {
                            continue;
                        }
                        let (c, o) = self.transition(t, a, b);
                        for (li, l) in prev_labels.iter().enumerate() {
                            offer(Label {
                                score: l.score + self.days[t].score[b],
                                cost: l.cost + c + self.days[t].deploy[b],
                                orders: l.orders + o,
                                prev: a as u32,
                                prev_label: li as u32,
                            });
                        }
                    }
                }
                day.push(pareto(best.into_values().collect()));
            }
            labels.push(day);
        }

        let last = self.days.len() - 1;
        let mut best: BTreeMap<std::cmp::Reverse<i64>, (Label, usize, usize)> = BTreeMap::new();
        for (s, ls) in labels[last].iter().enumerate() {
            for (li, l) in ls.iter().enumerate() {
                match best.get_mut(&std::cmp::Reverse(l.score)) {
                    Some(cur) if !better(l.cost, l.orders, cur.0.cost, cur.0.orders) => {}
                    Some(cur) => *cur = (*l, s, li),
                    None => {
                        best.insert(std::cmp::Reverse(l.score), (*l, s, li));
                    }
                }
            }
        }
        let mut out = Vec::new();
        let mut min_cost = f64::INFINITY;
        for (l, s, li) in best.into_values() {
            if !strictly_cheaper(l.cost, min_cost) {
                continue;
            }
            min_cost = l.cost;
            // Walk back-pointers to recover the state path.
            let mut path = vec![0; self.days.len()];
            let (mut state, mut label) = (s, li);
            for t in (0..=last).rev() {
                path[t] = state;
                let lab = labels[t][state][label];
                state = lab.prev as usize;
                label = lab.prev_label as usize;
            }
            out.push(FrontierPoint {
                score: l.score,
                cost: l.cost,
                orders: l.orders,
                path,
            });
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
struct Label {
    score: i64,
    cost: f64,
    orders: u32,
    prev: u32,
    prev_label: u32,
}

/// Drops labels whose cost is not below that of some higher-score label; input sorted by score descending.
/// `cost` beats `min` by more than the relative tolerance; anything finite beats infinity.
fn strictly_cheaper(cost: f64, min: f64) -> bool {
    !min.is_finite() || cost < min - 1e-9 * min.abs().max(1.0)
}

fn pareto(sorted: Vec<Label>) -> Vec<Label> {
    let mut out: Vec<Label> = Vec::with_capacity(sorted.len());
    let mut min_cost = f64::INFINITY;
    for l in sorted {
        if strictly_cheaper(l.cost, min_cost) {
            min_cost = l.cost;
            out.push(l);
        }
    }
    out
}

struct FrontierPoint {
    score: i64,
    cost: f64,
    orders: u32,
    path: Vec<usize>,
}

fn usage(model: &Model, choices: &Choices, t: usize) -> [u64; 3] {
    let mut sum = [0u64; 3];
    for (l, per_day) in choices.iter().enumerate() {
        if let Some(c) = per_day[t] {
            let combo = model.inst.candidates[&(model.locs[l].id.clone(), model.day_number(t))][c].combo;
            for (r, s) in sum.iter_mut().enumerate() {
                *s += combo.servers()[r] as u64;
            }
        }
    }
    sum
}

fn fleet_ok(model: &Model, choices: &Choices) -> bool {
    (0..model.days).all(|t| {
        let u = usage(model, choices, t);
        (0..3).all(|r| u[r] <= model.fleet[r])
    })
}

fn empty_choices(model: &Model) -> Choices {
    vec![vec![None; model.days]; model.locs.len()]
}

fn witness_choices(model: &Model, witness: &[Vec<usize>]) -> Choices {
    (0..model.locs.len())
        .map(|l| (0..model.days).map(|t| model.opts[l][t][witness[l][t]].cand).collect())
        .collect()
}

/// Cost, order count and score key of a complete choice matrix.
pub(crate) fn evaluate_choices(model: &Model, cache: &mut TransportCache, choices: &Choices) -> (f64, u32, i64) {
    let reqs = requirement_table(model, choices);
    let mut cost = 0.0;
    let mut orders = 0;
    let mut score = 0;
    for t in 0..model.days {
        for (k, d) in model.districts.iter().enumerate() {
            let prev: Vec<Req> = d
                .members
                .iter()
                .map(|&l| if t == 0 { model.locs[l].initial } else { reqs[l][t - 1] })
                .collect();
            let cur: Vec<Req> = d.members.iter().map(|&l| reqs[l][t]).collect();
            let (c, o) = model.district_night(cache, k, &prev, &cur);
            cost += c;
            orders += o;
        }
        for (l, per_day) in choices.iter().enumerate() {
            if let Some(c) = per_day[t] {
                let cand = &model.inst.candidates[&(model.locs[l].id.clone(), model.day_number(t))][c];
                cost += super::deployment_cost(cand.combo, &model.inst.params);
                score += score_key(cand.score);
            }
        }
    }
    (cost, orders, score)
}

pub(crate) fn requirement_table(model: &Model, choices: &Choices) -> Vec<Vec<Req>> {
    choices
        .iter()
        .enumerate()
        .map(|(l, per_day)| {
            per_day
                .iter()
                .enumerate()
                .map(|(t, c)| match c {
                    Some(c) => {
                        model.inst.candidates[&(model.locs[l].id.clone(), model.day_number(t))][*c]
                            .combo
                            .servers()
                    }
                    None => [0; 3],
                })
                .collect()
        })
        .collect()
}

struct Outcome {
    choices: Choices,
    exact: bool,
}

/// Shrinks oversized blocks and reports whether anything was cut.
fn shrink(model: &mut Model, groups: &[Group], prefer_score: bool, keep: Option<&Choices>) -> bool {
    let mut cut = false;
    for g in groups {
        if !fits(model, g) {
            cut = true;
            for &k in &g.districts {
                model.reduce_district(k, HEURISTIC_STATES, prefer_score, keep);
            }
        }
    }
    cut
}

fn stage_one_choices(model: &mut Model, cache: &mut TransportCache, witness: &Choices) -> Outcome {
    let (groups, global_check) = make_groups(model);
    let cut = shrink(model, &groups, false, Some(witness));
    let mut exact = !cut;

    let mut choices = empty_choices(model);
    let solve_all = |model: &Model, cache: &mut TransportCache, choices: &mut Choices| -> bool {
        for g in &groups {
            let dp = GroupDp::build(model, g, cache);
            if !dp.feasible() {
                return false;
            }
            dp.write_path(model, g, &dp.min_cost_path(), choices);
        }
        true
    };
    let solved = solve_all(model, cache, &mut choices);
    if !solved {
        // Only reachable when a shrunken block lost every fleet-feasible state.
        choices = witness.clone();
        exact = false;
    } else if global_check && !fleet_ok(model, &choices) {
        exact = false;
        choices = lagrange(model, cache, &groups).unwrap_or_else(|| witness.clone());
    }
    Outcome {
        exact: exact && !cache.inexact,
        choices,
    }
}

/// Prices machines on over-subscribed days until the per-district optima fit the fleet.
fn lagrange(model: &mut Model, cache: &mut TransportCache, groups: &[Group]) -> Option<Choices> {
    let base: Vec<Vec<Vec<f64>>> = model
        .opts
        .iter()
        .map(|d| d.iter().map(|o| o.iter().map(|x| x.deploy).collect()).collect())
        .collect();
    let step0 = Resource::ALL
        .iter()
        .map(|&r| model.inst.params.deployment_cost[r])
        .fold(1.0, f64::max);
    let mut price = vec![[0.0f64; 3]; model.days];
    let mut found = None;
    for _ in 0..LAGRANGE_ROUNDS {
        for (l, per_day) in model.opts.iter_mut().enumerate() {
            for (t, opts) in per_day.iter_mut().enumerate() {
                for (i, o) in opts.iter_mut().enumerate() {
                    o.deploy = base[l][t][i] + (0..3).map(|r| price[t][r] * o.req[r] as f64).sum::<f64>();
                }
            }
        }
        let mut choices = empty_choices(model);
        for g in groups {
            let dp = GroupDp::build(model, g, cache);
            dp.write_path(model, g, &dp.min_cost_path(), &mut choices);
        }
        let mut violated = false;
        for (t, p) in price.iter_mut().enumerate() {
            let u = usage(model, &choices, t);
            for r in 0..3 {
                if u[r] > model.fleet[r] {
                    violated = true;
                    p[r] = if p[r] == 0.0 { step0 } else { p[r] * 2.0 };
                }
            }
        }
        if !violated {
            found = Some(choices);
            break;
        }
    }
    for (l, per_day) in model.opts.iter_mut().enumerate() {
        for (t, opts) in per_day.iter_mut().enumerate() {
            for (i, o) in opts.iter_mut().enumerate() {
                o.deploy = base[l][t][i];
            }
        }
    }
    found
}

fn prepare(inst: &OptimizationInstance, bounds: FairnessBounds) -> Result<(Model<'_>, Choices)> {
    inst.validate()?;
    bounds.validate()?;
    let model = Model::new(inst, bounds).map_err(infeasible)?;
    let (fails, witness) = model.fleet_check();
    if !fails.is_empty() {
        return Err(infeasible(InfeasibilityReport {
            empty_slots: Vec::new(),
            fleet_days: fails,
        }));
    }
    let witness = witness_choices(&model, &witness);
    Ok((model, witness))
}

/// Minimum-cost plan and its cost.
pub fn solve_stage_one(inst: &OptimizationInstance) -> Result<(AllocationPlan, f64)> {
    let (mut model, witness) = prepare(inst, inst.bounds)?;
    let mut cache = TransportCache::default();
    let mut out = stage_one_choices(&mut model, &mut cache, &witness);
    if !out.exact && model.active_slots() <= inst.limits.bnb_max_slots {
        let (full, _) = prepare(inst, inst.bounds)?;
        let mut cache = TransportCache::default();
        if let Some(choices) = branch_and_bound(&full, &mut cache, Objective::MinCost, &out.choices) {
            if !cache.inexact {
                out = Outcome { choices, exact: true };
            }
        }
    }
    let plan = build_plan(&model, &mut cache, &out.choices, out.exact);
    let cost = plan.total_cost;
    Ok((plan, cost))
}

/// Highest-score plan with cost at most `(1 + ε)·c_star`.
pub fn solve_stage_two(inst: &OptimizationInstance, c_star: f64) -> Result<AllocationPlan> {
    let (mut model, witness) = prepare(inst, inst.bounds)?;
    let budget = (1.0 + inst.epsilon) * c_star;
    let tol = 1e-9 * budget.abs().max(1.0);
    let mut cache = TransportCache::default();

    let (groups, global_check) = make_groups(&model);
    let needs_cut = groups.iter().any(|g| !fits(&model, g));
    let mut exact = true;
    let mut fallback: Option<Choices> = None;
    if needs_cut {
        exact = false;
        let (mut m1, _) = prepare(inst, inst.bounds)?;
        let s1 = stage_one_choices(&mut m1, &mut cache, &witness);
        shrink(&mut model, &groups, true, Some(&s1.choices));
        fallback = Some(s1.choices);
    }

    let dps: Vec<GroupDp> = groups.iter().map(|g| GroupDp::build(&model, g, &mut cache)).collect();
    if dps.iter().any(|d| !d.feasible()) {
        return Err(Error::invalid("no plan satisfies the fleet within the cost budget"));
    }
    let min_total: f64 = dps.iter().map(|d| d.root.0).sum();
    if min_total > budget + tol && fallback.is_none() {
        return Err(Error::invalid(format!(
            "cost budget {budget} is below the minimum plan cost {min_total}"
        )));
    }

    // Combine block frontiers: best (cost, orders) per total score.
    let mut combined: BTreeMap<std::cmp::Reverse<i64>, (f64, u32, Vec<usize>)> =
        BTreeMap::from([(std::cmp::Reverse(0), (0.0, 0, Vec::new()))]);
    let frontiers: Vec<Vec<FrontierPoint>> = dps
        .iter()
        .map(|d| d.frontier(budget - (min_total - d.root.0)))
        .collect();
    for f in &frontiers {
        let mut next: BTreeMap<std::cmp::Reverse<i64>, (f64, u32, Vec<usize>)> = BTreeMap::new();
        for (std::cmp::Reverse(s0), (c0, o0, picks)) in &combined {
            for (i, p) in f.iter().enumerate() {
                let cost = c0 + p.cost;
                if cost > budget + tol {
                    continue;
                }
                let key = std::cmp::Reverse(s0 + p.score);
                let orders = o0 + p.orders;
                let better_here = match next.get(&key) {
                    None => true,
                    Some(cur) => better(cost, orders, cur.0, cur.1),
                };
                if better_here {
                    let mut v = picks.clone();
                    v.push(i);
                    next.insert(key, (cost, orders, v));
                }
            }
        }
        combined = next;
    }

    let mut chosen: Option<Choices> = None;
    for (_, _, picks) in combined.values() {
        let mut choices = empty_choices(&model);
        for ((g, dp), (f, &i)) in groups.iter().zip(&dps).zip(frontiers.iter().zip(picks)) {
            dp.write_path(&model, g, &f[i].path, &mut choices);
        }
        if !global_check || fleet_ok(&model, &choices) {
            chosen = Some(choices);
            break;
        }
        exact = false;
    }
    let mut choices = match chosen.or(fallback) {
        Some(c) => c,
        None => {
            let (mut m1, _) = prepare(inst, inst.bounds)?;
            stage_one_choices(&mut m1, &mut cache, &witness).choices
        }
    };
    exact &= !cache.inexact;

    if !exact && model.active_slots() <= inst.limits.bnb_max_slots {
        let (full, _) = prepare(inst, inst.bounds)?;
        let mut bnb_cache = TransportCache::default();
        if let Some(better_choices) =
            branch_and_bound(&full, &mut bnb_cache, Objective::MaxScore { budget }, &choices)
        {
            if !bnb_cache.inexact {
                choices = better_choices;
                exact = true;
            }
        }
    }
    Ok(build_plan(&model, &mut cache, &choices, exact))
}

/// Solves stage one, then stage two against its cost.
pub fn solve_lexicographic(inst: &OptimizationInstance) -> Result<(AllocationPlan, f64, AllocationPlan)> {
    let (one, c_star) = solve_stage_one(inst)?;
    let mut two = solve_stage_two(inst, c_star)?;
    two.exact &= one.exact;
    Ok((one, c_star, two))
}

/// Largest lower score bound (among occurring scores) that keeps the instance feasible.
pub fn tighten_fairness(inst: &OptimizationInstance) -> Result<FairnessBounds> {
    inst.validate()?;
    let upper = inst.bounds.upper;
    let mut levels: Vec<i64> = inst
        .candidates
        .values()
        .flatten()
        .map(|c| score_key(c.score))
        .filter(|&s| s <= score_key(upper))
        .collect();
    levels.sort_unstable_by(|a, b| b.cmp(a));
    levels.dedup();
    for key in levels {
        let lower = key as f64 / 1e9;
        let bounds = FairnessBounds { lower, upper };
        if let Ok(model) = Model::new(inst, bounds) {
            if model.fleet_check().0.is_empty() {
                return Ok(bounds);
            }
        }
    }
    // Nothing works: report why the loosest bound fails. If it does not fail,
    // no slot is open and any bound is as good as the given one.
    prepare(inst, FairnessBounds { lower: 0.0, upper })?;
    Ok(inst.bounds)
}

fn build_plan(model: &Model, cache: &mut TransportCache, choices: &Choices, exact: bool) -> AllocationPlan {
    let inst = model.inst;
    let reqs = requirement_table(model, choices);
    let mut assignments = Vec::new();
    let mut total_cost = 0.0;
    let mut total_score = 0.0;
    for (l, per_day) in choices.iter().enumerate() {
        for (t, c) in per_day.iter().enumerate() {
            if let Some(c) = *c {
                let day = model.day_number(t);
                let cand = inst.candidates[&(model.locs[l].id.clone(), day)][c];
                total_cost += super::deployment_cost(cand.combo, &inst.params);
                total_score += cand.score;
                assignments.push(Assignment {
                    location: model.locs[l].id.clone(),
                    day,
                    combo: cand.combo,
                    robust_wait: Some(cand.robust_wait),
                    score: Some(cand.score),
                });
            }
        }
    }
    let ids = inst.matrix.ids();
    let mut transfers = Vec::new();
    for t in 0..model.days {
        for (k, d) in model.districts.iter().enumerate() {
            for r in Resource::ALL {
                let delta: Vec<i32> = d
                    .members
                    .iter()
                    .map(|&l| {
                        let prev = if t == 0 { model.locs[l].initial } else { reqs[l][t - 1] };
                        reqs[l][t][r.index()] as i32 - prev[r.index()] as i32
                    })
                    .collect();
                if delta.iter().all(|&x| x == 0) {
                    continue;
                }
                let sol = cache.get(k, &d.sites, &delta, &inst.matrix, &inst.params, inst.limits.transport_max_nodes);
                for f in &sol.flows {
                    let cost = order_cost_unchecked(f.qty, inst.matrix.get(f.from, f.to), &inst.params);
                    total_cost += cost;
                    transfers.push(TransferOrder {
                        night: model.day_number(t),
                        from: ids[f.from].clone(),
                        to: ids[f.to].clone(),
                        resource: r,
                        qty: f.qty,
                        cost,
                    });
                }
            }
        }
    }
    transfers.sort_by(|a, b| {
        (a.night, &a.from, &a.to, a.resource).cmp(&(b.night, &b.from, &b.to, b.resource))
    });
    AllocationPlan {
        assignments,
        transfers,
        total_cost,
        total_score,
        exact: exact && !cache.inexact,
    }
}
