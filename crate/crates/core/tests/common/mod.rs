//! Shared fixtures and brute-force oracles for the integration tests.
//!
//! The oracles recompute everything from the instance's raw fields: their own
//! great-circle distances, their own order pricing and a plain enumeration of
//! every plan and every overnight flow split.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pollflow::cost::{CostParameters, GeoPoint, SiteKind, SiteRecord};
use pollflow::optimizer::{Candidate, CandidateSet, FairnessBounds, OptimizationInstance};
use pollflow::planner::Scenario;
use pollflow::queueing::{ReplicationPolicy, UtilRange};
use pollflow::scenario::build_scenario;
use pollflow::synthetic;
use pollflow::{PerResource, Resource, ResourceCombination};

pub const SCORE_LEVELS: [f64; 7] = [0.0, 0.2, 0.4, 0.6, 0.8, 0.9, 1.0];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn site(id: &str, lat: f64, lon: f64, district: u32, kind: SiteKind) -> SiteRecord {
    SiteRecord {
        id: id.into(),
        name: id.into(),
        point: GeoPoint::new(lat, lon).unwrap(),
        district,
        caps: PerResource::splat(6),
        registered: 1000,
        kind,
    }
}

pub fn candidate(combo: ResourceCombination, score: f64) -> Candidate {
    Candidate {
        combo,
        robust_wait: (1.0 - score) * 100.0,
        score,
    }
}

/// Up to three locations in up to two districts, up to two days, up to five
/// candidates per open slot. Roughly one slot in six is closed.
pub fn random_instance(rng: &mut ChaCha8Rng) -> OptimizationInstance {
    let n_locs = rng.random_range(1..=3usize);
    let last_day = rng.random_range(1..=2usize);
    let mut sites = vec![site("W", 33.75, -84.39, 0, SiteKind::Warehouse)];
    for k in 0..n_locs {
        sites.push(site(
            &format!("L{k}"),
            rng.random_range(33.60..33.90),
            rng.random_range(-84.60..-84.20),
            rng.random_range(1..=2u32),
            SiteKind::PollingLocation,
        ));
    }
    let params = CostParameters {
        per_km_rate: rng.random_range(0.2..2.0),
        module_cost: rng.random_range(0.0..15.0),
        module_capacity: rng.random_range(1..=4u32),
        examination_cost: rng.random_range(0.0..3.0),
        deployment_cost: PerResource::new(
            rng.random_range(0.5..10.0),
            rng.random_range(0.5..10.0),
            rng.random_range(0.5..10.0),
        ),
        dispatch_cost: rng.random_range(0.5..10.0),
    };
    let mut candidates = CandidateSet::new();
    for k in 0..n_locs {
        for day in 1..=last_day {
            if rng.random_bool(1.0 / 6.0) {
                continue;
            }
            let mut list: Vec<Candidate> = Vec::new();
            for _ in 0..rng.random_range(1..=5usize) {
                let combo = ResourceCombination::new(
                    rng.random_range(1..=3),
                    rng.random_range(1..=3),
                    rng.random_range(1..=3),
                );
                if list.iter().any(|c| c.combo == combo) {
                    continue;
                }
                let score = SCORE_LEVELS[rng.random_range(0..SCORE_LEVELS.len())];
                list.push(candidate(combo, score));
            }
            candidates.insert((format!("L{k}"), day), list);
        }
    }
    let initial = (0..n_locs)
        .map(|k| {
            let p = PerResource::new(
                rng.random_range(0..=3),
                rng.random_range(0..=3),
                rng.random_range(0..=3),
            );
            (format!("L{k}"), p)
        })
        .collect();
    let warehouse = PerResource::new(rng.random_range(0..=4), rng.random_range(0..=4), rng.random_range(0..=4));
    let epsilon = [0.0, 0.05, 0.1, 0.3][rng.random_range(0..4)];
    OptimizationInstance::new(sites, params, (1, last_day), candidates, initial, warehouse)
        .unwrap()
        .with_epsilon(epsilon)
}

fn haversine(a: &SiteRecord, b: &SiteRecord) -> f64 {
    let (la1, lo1) = (a.point.lat().to_radians(), a.point.lon().to_radians());
    let (la2, lo2) = (b.point.lat().to_radians(), b.point.lon().to_radians());
    let h = ((la2 - la1) / 2.0).sin().powi(2) + la1.cos() * la2.cos() * ((lo2 - lo1) / 2.0).sin().powi(2);
    2.0 * 6371.0 * h.sqrt().asin()
}

fn order(qty: u32, km: f64, p: &CostParameters) -> f64 {
    let modules = qty.div_ceil(p.module_capacity);
    modules as f64 * p.module_cost + km * p.per_km_rate + qty as f64 * p.examination_cost + p.dispatch_cost
}

/// One feasible plan: its total cost and total score.
#[derive(Clone, Copy, Debug)]
pub struct PlanValue {
    pub cost: f64,
    pub score: f64,
}

/// Brute-force view of an instance restricted to scores inside `bounds`.
pub struct Oracle<'a> {
    inst: &'a OptimizationInstance,
    locs: Vec<&'a SiteRecord>,
    warehouse: &'a SiteRecord,
    bounds: FairnessBounds,
    memo: HashMap<(usize, Vec<i64>), f64>,
}

impl<'a> Oracle<'a> {
    pub fn new(inst: &'a OptimizationInstance, bounds: FairnessBounds) -> Self {
        Self {
            inst,
            locs: inst.sites.iter().filter(|s| s.kind == SiteKind::PollingLocation).collect(),
            warehouse: inst.sites.iter().find(|s| s.kind == SiteKind::Warehouse).unwrap(),
            bounds,
            memo: HashMap::new(),
        }
    }

    /// Every feasible plan's value.
    pub fn plans(&mut self) -> Vec<PlanValue> {
        let days: Vec<usize> = (self.inst.first_day..=self.inst.last_day).collect();
        let mut slots: Vec<(usize, usize, Vec<Candidate>)> = Vec::new();
        for (l, s) in self.locs.iter().enumerate() {
            for (t, &day) in days.iter().enumerate() {
                if let Some(list) = self.inst.candidates.get(&(s.id.clone(), day)) {
                    let allowed: Vec<Candidate> = list
                        .iter()
                        .filter(|c| c.score >= self.bounds.lower - 1e-12 && c.score <= self.bounds.upper + 1e-12)
                        .cloned()
                        .collect();
                    slots.push((l, t, allowed));
                }
            }
        }
        let mut out = Vec::new();
        if slots.iter().any(|s| s.2.is_empty()) {
            return out;
        }
        let mut pick = vec![0usize; slots.len()];
        loop {
            let mut held = vec![vec![[0i64; 3]; days.len()]; self.locs.len()];
            let (mut deploy, mut score) = (0.0, 0.0);
            for (k, (l, t, list)) in slots.iter().enumerate() {
                let c = &list[pick[k]];
                for r in Resource::ALL {
                    held[*l][*t][r.index()] = c.combo.get(r) as i64;
                    deploy += c.combo.get(r) as f64 * self.inst.params.deployment_cost[r];
                }
                score += c.score;
            }
            if let Some(moves) = self.transfer_cost(&held) {
                out.push(PlanValue { cost: deploy + moves, score });
            }
            // Odometer over candidate indices.
            let mut k = 0;
            while k < slots.len() {
                pick[k] += 1;
                if pick[k] < slots[k].2.len() {
                    break;
                }
                pick[k] = 0;
                k += 1;
            }
            if k == slots.len() {
                return out;
            }
        }
    }

    /// Cheapest overnight moves reaching `held` day by day; `None` when the
    /// warehouse would run dry.
    fn transfer_cost(&mut self, held: &[Vec<[i64; 3]>]) -> Option<f64> {
        let mut total = 0.0;
        for r in Resource::ALL {
            let mut stock = self.inst.warehouse_stock[r] as i64;
            for t in 0..held.first().map_or(0, |h| h.len()) {
                let delta: Vec<i64> = self
                    .locs
                    .iter()
                    .enumerate()
                    .map(|(l, s)| {
                        let before = if t == 0 {
                            self.inst.initial.get(&s.id).map_or(0, |p| p[r] as i64)
                        } else {
                            held[l][t - 1][r.index()]
                        };
                        held[l][t][r.index()] - before
                    })
                    .collect();
                stock -= delta.iter().sum::<i64>();
                if stock < 0 {
                    return None;
                }
                let key = (r.index(), delta);
                let cost = match self.memo.get(&key) {
                    Some(&c) => c,
                    None => {
                        let c = self.cheapest_night(&key.1);
                        self.memo.insert(key, c);
                        c
                    }
                };
                total += cost;
            }
        }
        Some(total)
    }

    /// Tries every split of every surplus among same-district deficits; the
    /// rest of each surplus goes to the warehouse, which fills the remaining deficits.
    fn cheapest_night(&self, delta: &[i64]) -> f64 {
        let sources: Vec<usize> = (0..delta.len()).filter(|&i| delta[i] < 0).collect();
        let sinks: Vec<usize> = (0..delta.len()).filter(|&i| delta[i] > 0).collect();
        let pairs: Vec<(usize, usize)> = sources
            .iter()
            .flat_map(|&i| sinks.iter().map(move |&j| (i, j)))
            .filter(|&(i, j)| self.locs[i].district == self.locs[j].district)
            .collect();
        let mut best = f64::INFINITY;
        let mut qty = vec![0i64; pairs.len()];
        self.split(delta, &pairs, 0, &mut qty, &mut best);
        best
    }

    fn split(&self, delta: &[i64], pairs: &[(usize, usize)], k: usize, qty: &mut Vec<i64>, best: &mut f64) {
        let p = &self.inst.params;
        if k == pairs.len() {
            let mut left: Vec<i64> = delta.iter().map(|d| d.abs()).collect();
            let mut cost = 0.0;
            for (&(i, j), &q) in pairs.iter().zip(qty.iter()) {
                if q > 0 {
                    left[i] -= q;
                    left[j] -= q;
                    cost += order(q as u32, haversine(self.locs[i], self.locs[j]), p);
                }
            }
            for (i, &q) in left.iter().enumerate() {
                if q > 0 {
                    cost += order(q as u32, haversine(self.locs[i], self.warehouse), p);
                }
            }
            *best = best.min(cost);
            return;
        }
        let (i, j) = pairs[k];
        let used_i: i64 = pairs[..k].iter().zip(qty.iter()).filter(|(p, _)| p.0 == i).map(|(_, q)| q).sum();
        let used_j: i64 = pairs[..k].iter().zip(qty.iter()).filter(|(p, _)| p.1 == j).map(|(_, q)| q).sum();
        let cap = (-delta[i] - used_i).min(delta[j] - used_j);
        for q in 0..=cap {
            qty[k] = q;
            self.split(delta, pairs, k + 1, qty, best);
        }
        qty[k] = 0;
    }
}

/// Minimum cost over all plans, `None` when nothing is feasible.
pub fn oracle_min_cost(plans: &[PlanValue]) -> Option<f64> {
    plans.iter().map(|p| p.cost).min_by(f64::total_cmp)
}

/// Best score among plans costing at most `budget`.
pub fn oracle_best_score(plans: &[PlanValue], budget: f64) -> Option<f64> {
    let tol = 1e-9 * budget.abs().max(1.0);
    plans
        .iter()
        .filter(|p| p.cost <= budget + tol)
        .map(|p| p.score)
        .max_by(f64::total_cmp)
}

/// Largest occurring score level `L` such that some plan uses only scores in `[L, upper]`.
pub fn oracle_tightest_lower(inst: &OptimizationInstance, upper: f64) -> Option<f64> {
    let mut levels: Vec<f64> = inst
        .candidates
        .values()
        .flatten()
        .map(|c| c.score)
        .filter(|&s| s <= upper)
        .collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    levels.into_iter().find(|&lower| {
        let bounds = FairnessBounds { lower, upper };
        !Oracle::new(inst, bounds).plans().is_empty()
    })
}

/// Machines per resource held by polling locations and the warehouse.
pub fn system_totals(inv: &BTreeMap<String, PerResource<u32>>, warehouse: PerResource<u32>) -> PerResource<u64> {
    PerResource::from_fn(|r| inv.values().map(|p| p[r] as u64).sum::<u64>() + warehouse[r] as u64)
}

/// A small county with two or three districts, a short horizon and few
/// replications, so that full horizon replays stay cheap.
pub fn random_scenario(rng: &mut ChaCha8Rng) -> Scenario {
    let n_locs = rng.random_range(3..=5usize);
    let n_districts = rng.random_range(2..=3u32);
    let mut sites = vec![site("W", 33.75, -84.39, 0, SiteKind::Warehouse)];
    let mut early = BTreeSet::new();
    for k in 0..n_locs {
        let id = format!("L{k}");
        let mut s = site(
            &id,
            rng.random_range(33.60..33.90),
            rng.random_range(-84.60..-84.20),
            // The first locations cover every district.
            if (k as u32) < n_districts { k as u32 + 1 } else { rng.random_range(1..=n_districts) },
            SiteKind::PollingLocation,
        );
        s.caps = PerResource::new(rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=2));
        s.registered = rng.random_range(300..=1500);
        if k == 0 || rng.random_bool(0.5) {
            early.insert(id);
        }
        sites.push(s);
    }
    let caps: PerResource<u32> =
        PerResource::from_fn(|r| sites.iter().filter(|s| s.kind == SiteKind::PollingLocation).map(|s| s.caps[r]).sum());
    let mut cfg = synthetic::config(rng.random_range(0.3..0.8), 4, rng.random());
    cfg.horizon_days = rng.random_range(2..=3);
    cfg.turnout_rate = rng.random_range(0.2..0.6);
    cfg.utilization_band = PerResource::splat(UtilRange(0.0, 1.0));
    cfg.replications = ReplicationPolicy::Fixed(4);
    cfg.auto_tighten = rng.random_bool(0.5);
    cfg.epsilon = [0.0, 0.05, 0.2][rng.random_range(0..3)];
    cfg.fleet = PerResource::from_fn(|r| rng.random_range(n_locs as u32..=caps[r].max(n_locs as u32)));
    cfg.reserve = PerResource::new(rng.random_range(0..=2), rng.random_range(0..=2), rng.random_range(0..=2));
    build_scenario(&cfg, sites, early, None).unwrap()
}
