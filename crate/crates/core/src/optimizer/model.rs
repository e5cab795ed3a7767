//! Index-based view of an instance used by the search routines.

use std::collections::BTreeMap;

use super::transport::TransportCache;
use super::{deployment_cost, FairnessBounds, OptimizationInstance};
use crate::error::InfeasibilityReport;
use crate::resource::Resource;

pub(crate) type Req = [u32; 3];

/// One choice for a slot; `cand == None` marks an inactive day.
#[derive(Clone, Debug)]
pub(crate) struct Opt {
    pub cand: Option<usize>,
    pub req: Req,
    pub deploy: f64,
    pub score: i64,
}

pub(crate) fn score_key(score: f64) -> i64 {
    (score * 1e9).round() as i64
}

pub(crate) struct Loc {
    pub id: String,
    pub initial: Req,
}

pub(crate) struct District {
    pub id: u32,
    pub members: Vec<usize>,
    pub sites: Vec<usize>,
    /// Machines the district can field when the warehouse is partitioned.
    pub fleet: [u64; 3],
}

pub(crate) struct Model<'a> {
    pub inst: &'a OptimizationInstance,
    pub days: usize,
    pub locs: Vec<Loc>,
    pub districts: Vec<District>,
    /// `opts[loc][t]`, `t` counted from the first day of the horizon.
    pub opts: Vec<Vec<Vec<Opt>>>,
    pub fleet: [u64; 3],
    pub partitioned: bool,
}

impl<'a> Model<'a> {
    pub fn new(inst: &'a OptimizationInstance, bounds: FairnessBounds) -> Result<Self, InfeasibilityReport> {
        let days = inst.last_day - inst.first_day + 1;
        let mut polling: Vec<&crate::cost::SiteRecord> = inst.sites.iter().filter(|s| !s.is_warehouse()).collect();
        polling.sort_by(|a, b| a.id.cmp(&b.id));

        let mut district_ids: Vec<u32> = polling.iter().map(|s| s.district).collect();
        district_ids.sort_unstable();
        district_ids.dedup();
        let district_index: BTreeMap<u32, usize> = district_ids.iter().enumerate().map(|(i, &d)| (d, i)).collect();

        let mut locs = Vec::with_capacity(polling.len());
        let mut districts: Vec<District> = district_ids
            .iter()
            .map(|&id| {
                let share = inst
                    .warehouse_partition
                    .as_ref()
                    .and_then(|p| p.get(&id).copied())
                    .unwrap_or_default();
                District {
                    id,
                    members: Vec::new(),
                    sites: Vec::new(),
                    fleet: Resource::ALL.map(|r| share[r] as u64),
                }
            })
            .collect();
        for s in &polling {
            let initial = inst.initial_of(&s.id);
            let d = district_index[&s.district];
            let site = inst.matrix.index_of(&s.id).expect("site in matrix");
            districts[d].members.push(locs.len());
            districts[d].sites.push(site);
            for r in Resource::ALL {
                districts[d].fleet[r.index()] += initial[r] as u64;
            }
            locs.push(Loc {
                id: s.id.clone(),
                initial: [initial.pollpads, initial.bmds, initial.scanners],
            });
        }

        let mut report = InfeasibilityReport::default();
        let mut opts = Vec::with_capacity(locs.len());
        for loc in &locs {
            let mut per_day = Vec::with_capacity(days);
            for t in 0..days {
                let day = inst.first_day + t;
                match inst.candidates.get(&(loc.id.clone(), day)) {
                    None => per_day.push(vec![Opt {
                        cand: None,
                        req: [0; 3],
                        deploy: 0.0,
                        score: 0,
                    }]),
                    Some(list) => {
                        let o: Vec<Opt> = list
                            .iter()
                            .enumerate()
                            .filter(|(_, c)| bounds.contains(c.score))
                            .map(|(i, c)| Opt {
                                cand: Some(i),
                                req: c.combo.servers(),
                                deploy: deployment_cost(c.combo, &inst.params),
                                score: score_key(c.score),
                            })
                            .collect();
                        if o.is_empty() {
                            report.empty_slots.push((loc.id.clone(), day));
                        }
                        per_day.push(o);
                    }
                }
            }
            opts.push(per_day);
        }
        if !report.empty_slots.is_empty() {
            report.empty_slots.sort_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)));
            return Err(report);
        }
        let fleet = inst.fleet();
        Ok(Self {
            inst,
            days,
            locs,
            districts,
            opts,
            fleet: [fleet.pollpads, fleet.bmds, fleet.scanners],
            partitioned: inst.warehouse_partition.is_some(),
        })
    }

    pub fn day_number(&self, t: usize) -> usize {
        self.inst.first_day + t
    }

    pub fn active(&self, loc: usize, t: usize) -> bool {
        self.opts[loc][t][0].cand.is_some()
    }

    pub fn active_slots(&self) -> usize {
        (0..self.locs.len())
            .map(|l| (0..self.days).filter(|&t| self.active(l, t)).count())
            .sum()
    }

    /// Rebalancing cost inside district `d` from holdings `prev` to `cur` (both per member).
    pub fn district_night(&self, cache: &mut TransportCache, d: usize, prev: &[Req], cur: &[Req]) -> (f64, u32) {
        let dist = &self.districts[d];
        let mut cost = 0.0;
        let mut orders = 0;
        let mut delta = Vec::with_capacity(prev.len());
        for r in 0..3 {
            delta.clear();
            delta.extend(prev.iter().zip(cur).map(|(p, c)| c[r] as i32 - p[r] as i32));
            if delta.iter().all(|&x| x == 0) {
                continue;
            }
            let sol = cache.get(
                d,
                &dist.sites,
                &delta,
                &self.inst.matrix,
                &self.inst.params,
                self.inst.limits.transport_max_nodes,
            );
            cost += sol.cost;
            orders += sol.orders;
        }
        (cost, orders)
    }

    /// Days (with scope) on which no in-bounds choice fits the fleet, plus one
    /// fitting option index per (loc, t) wherever a fit exists.
    pub fn fleet_check(&self) -> (Vec<(usize, String)>, Vec<Vec<usize>>) {
        let mut failures = Vec::new();
        let mut witness = vec![vec![0usize; self.days]; self.locs.len()];
        let scopes: Vec<(String, Vec<usize>, [u64; 3])> = if self.partitioned {
            self.districts
                .iter()
                .map(|d| (format!("district {}", d.id), d.members.clone(), d.fleet))
                .collect()
        } else {
            vec![("county".to_string(), (0..self.locs.len()).collect(), self.fleet)]
        };
        for t in 0..self.days {
            for (name, members, fleet) in &scopes {
                match self.pareto_fit(members, t, *fleet) {
                    Some(choice) => {
                        for (&l, o) in members.iter().zip(choice) {
                            witness[l][t] = o;
                        }
                    }
                    None => failures.push((self.day_number(t), name.clone())),
                }
            }
        }
        (failures, witness)
    }

    /// Finds option indices for `members` on day `t` whose summed requirement fits `fleet`.
    fn pareto_fit(&self, members: &[usize], t: usize, fleet: [u64; 3]) -> Option<Vec<usize>> {
        // Each layer keeps Pareto-minimal partial sums with back-pointers.
        let mut layers: Vec<Vec<([u64; 3], usize, usize)>> = Vec::with_capacity(members.len());
        let mut front: Vec<([u64; 3], usize, usize)> = vec![([0; 3], 0, 0)];
        for &l in members {
            let mut next: Vec<([u64; 3], usize, usize)> = Vec::new();
            for (pi, (v, _, _)) in front.iter().enumerate() {
                for (oi, o) in self.opts[l][t].iter().enumerate() {
                    let s = [v[0] + o.req[0] as u64, v[1] + o.req[1] as u64, v[2] + o.req[2] as u64];
                    if (0..3).all(|r| s[r] <= fleet[r]) {
                        next.push((s, pi, oi));
                    }
                }
            }
            next.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            next.dedup_by(|a, b| a.0 == b.0);
            let mut kept: Vec<([u64; 3], usize, usize)> = Vec::with_capacity(next.len());
            for cand in next {
                if !kept.iter().any(|k| (0..3).all(|r| k.0[r] <= cand.0[r])) {
                    kept.push(cand);
                }
            }
            if kept.is_empty() {
                return None;
            }
            layers.push(std::mem::replace(&mut front, kept));
        }
        layers.push(front);
        let mut choice = vec![0; members.len()];
        let mut idx = 0;
        for k in (0..members.len()).rev() {
            let (_, parent, opt) = layers[k + 1][idx];
            choice[k] = opt;
            idx = parent;
        }
        Some(choice)
    }

    /// Trims the options of district `d` to a few representatives per slot so
    /// that its joint state count per day stays near `max_states`. Options named
    /// in `keep` survive the cut.
    pub fn reduce_district(&mut self, d: usize, max_states: usize, prefer_score: bool, keep: Option<&Choices>) {
        let members = self.districts[d].members.clone();
        for t in 0..self.days {
            let active = members.iter().filter(|&&l| self.opts[l][t].len() > 1).count().max(1);
            let mut k = 1usize;
            while k < 64 && (k + 1).checked_pow(active as u32).is_some_and(|p| p <= max_states) {
                k += 1;
            }
            for &l in &members {
                if self.opts[l][t].len() <= 1 {
                    continue;
                }
                let must = keep.and_then(|c| c[l][t]);
                let initial = self.locs[l].initial;
                self.opts[l][t] = representatives(&self.opts[l][t], initial, k, prefer_score, must);
            }
        }
    }
}

/// Candidate index chosen per `[loc][t]`, `None` on inactive days.
pub(crate) type Choices = Vec<Vec<Option<usize>>>;

/// Keeps the cheapest option per score level plus the option matching what
/// the site already holds, at most `k` overall, in original order.
fn representatives(list: &[Opt], initial: Req, k: usize, prefer_score: bool, must: Option<usize>) -> Vec<Opt> {
    let cheapest = |a: &&Opt, b: &&Opt| {
        a.deploy
            .total_cmp(&b.deploy)
            .then(a.req.iter().sum::<u32>().cmp(&b.req.iter().sum::<u32>()))
            .then(a.cand.cmp(&b.cand))
    };
    let mut levels: BTreeMap<std::cmp::Reverse<i64>, &Opt> = BTreeMap::new();
    for o in list {
        levels
            .entry(std::cmp::Reverse(o.score))
            .and_modify(|cur| {
                if cheapest(&o, cur).is_lt() {
                    *cur = o;
                }
            })
            .or_insert(o);
    }
    let mut picks: Vec<Option<usize>> = Vec::new();
    let push = |c: Option<usize>, picks: &mut Vec<Option<usize>>| {
        if !picks.contains(&c) {
            picks.push(c);
        }
    };
    if let Some(o) = list.iter().find(|o| o.req == initial) {
        push(o.cand, &mut picks);
    }
    if let Some(o) = list.iter().min_by(cheapest) {
        push(o.cand, &mut picks);
    }
    if prefer_score {
        for o in levels.values() {
            push(o.cand, &mut picks);
        }
    } else {
        for o in levels.values().rev() {
            push(o.cand, &mut picks);
        }
    }
    picks.truncate(k.max(1));
    if must.is_some() && !picks.contains(&must) {
        picks.push(must);
    }
    list.iter().filter(|o| picks.contains(&o.cand)).cloned().collect()
}
