//! Depth-first branch and bound over individual location-day choices, used to
//! certify or improve heuristic plans on small instances.

use super::model::{Choices, Model, Req};
use super::solve::evaluate_choices;
use super::transport::{better, TransportCache};

#[derive(Clone, Copy, Debug)]
pub(crate) enum Objective {
    MinCost,
    MaxScore { budget: f64 },
}

enum Event {
    Slot { loc: usize, t: usize, order: Vec<usize> },
    DistrictNight { t: usize, k: usize },
    DayEnd { t: usize },
}

struct Best {
    cost: f64,
    orders: u32,
    score: i64,
    choices: Option<Vec<Vec<usize>>>,
}

struct Search<'m, 'c> {
    model: &'m Model<'m>,
    cache: &'c mut TransportCache,
    objective: Objective,
    events: Vec<Event>,
    /// Cheapest deployment and best score still to come, indexed by event.
    deploy_rest: Vec<f64>,
    score_rest: Vec<i64>,
    pick: Vec<Vec<usize>>,
    reqs: Vec<Vec<Req>>,
    best: Best,
    nodes: u64,
    aborted: bool,
}

impl Search<'_, '_> {
    fn prune(&self, i: usize, cost: f64, score: i64) -> bool {
        let lb = cost + self.deploy_rest[i];
        let tol = 1e-9 * self.best.cost.abs().max(1.0);
        match self.objective {
            Objective::MinCost => lb > self.best.cost + tol,
            Objective::MaxScore { budget } => {
                let ub = score + self.score_rest[i];
                lb > budget + 1e-9 * budget.abs().max(1.0)
                    || ub < self.best.score
                    || (ub == self.best.score && lb > self.best.cost + tol)
            }
        }
    }

    fn improves(&self, cost: f64, orders: u32, score: i64) -> bool {
        match self.objective {
            Objective::MinCost => better(cost, orders, self.best.cost, self.best.orders),
            Objective::MaxScore { .. } => {
                score > self.best.score
                    || (score == self.best.score && better(cost, orders, self.best.cost, self.best.orders))
            }
        }
    }

    fn go(&mut self, i: usize, cost: f64, orders: u32, score: i64) {
        if self.aborted {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.model.inst.limits.bnb_max_nodes {
            self.aborted = true;
            return;
        }
        if self.prune(i, cost, score) {
            return;
        }
        if i == self.events.len() {
            if self.improves(cost, orders, score) {
                self.best = Best {
                    cost,
                    orders,
                    score,
                    choices: Some(self.pick.clone()),
                };
            }
            return;
        }
        let model = self.model;
        match &self.events[i] {
            Event::Slot { loc, t, order } => {
                let (loc, t) = (*loc, *t);
                for oi in order.clone() {
                    let o = &model.opts[loc][t][oi];
                    self.pick[loc][t] = oi;
                    self.reqs[loc][t] = o.req;
                    self.go(i + 1, cost + o.deploy, orders, score + o.score);
                }
            }
            Event::DistrictNight { t, k } => {
                let (t, k) = (*t, *k);
                let d = &model.districts[k];
                let cur: Vec<Req> = d.members.iter().map(|&l| self.reqs[l][t]).collect();
                if model.partitioned {
                    let over = (0..3).any(|r| cur.iter().map(|q| q[r] as u64).sum::<u64>() > d.fleet[r]);
                    if over {
                        return;
                    }
                }
                let prev: Vec<Req> = d
                    .members
                    .iter()
                    .map(|&l| if t == 0 { model.locs[l].initial } else { self.reqs[l][t - 1] })
                    .collect();
                let (c, o) = model.district_night(self.cache, k, &prev, &cur);
                self.go(i + 1, cost + c, orders + o, score);
            }
            Event::DayEnd { t } => {
                let t = *t;
                if !model.partitioned {
                    let over = (0..3).any(|r| {
                        self.reqs.iter().map(|per_day| per_day[t][r] as u64).sum::<u64>() > model.fleet[r]
                    });
                    if over {
                        return;
                    }
                }
                self.go(i + 1, cost, orders, score);
            }
        }
    }
}

/// Exhaustive search seeded with `incumbent`; `None` when the node budget ran out.
pub(crate) fn branch_and_bound(
    model: &Model,
    cache: &mut TransportCache,
    objective: Objective,
    incumbent: &Choices,
) -> Option<Choices> {
    let mut events = Vec::new();
    for t in 0..model.days {
        for (k, d) in model.districts.iter().enumerate() {
            for &l in &d.members {
                if model.active(l, t) {
                    let opts = &model.opts[l][t];
                    let mut order: Vec<usize> = (0..opts.len()).collect();
                    match objective {
                        Objective::MinCost => order.sort_by(|&a, &b| opts[a].deploy.total_cmp(&opts[b].deploy)),
                        Objective::MaxScore { .. } => order.sort_by(|&a, &b| {
                            opts[b].score.cmp(&opts[a].score).then(opts[a].deploy.total_cmp(&opts[b].deploy))
                        }),
                    }
                    events.push(Event::Slot { loc: l, t, order });
                }
            }
            events.push(Event::DistrictNight { t, k });
        }
        events.push(Event::DayEnd { t });
    }
    let n = events.len();
    let mut deploy_rest = vec![0.0; n + 1];
    let mut score_rest = vec![0i64; n + 1];
    for i in (0..n).rev() {
        deploy_rest[i] = deploy_rest[i + 1];
        score_rest[i] = score_rest[i + 1];
        if let Event::Slot { loc, t, .. } = &events[i] {
            let opts = &model.opts[*loc][*t];
            deploy_rest[i] += opts.iter().map(|o| o.deploy).fold(f64::INFINITY, f64::min);
            score_rest[i] += opts.iter().map(|o| o.score).max().unwrap_or(0);
        }
    }

    let (cost, orders, score) = evaluate_choices(model, cache, incumbent);
    let within = match objective {
        Objective::MinCost => true,
        Objective::MaxScore { budget } => cost <= budget + 1e-9 * budget.abs().max(1.0),
    };
    let best = if within {
        Best {
            cost,
            orders,
            score,
            choices: None,
        }
    } else {
        Best {
            cost: f64::INFINITY,
            orders: u32::MAX,
            score: i64::MIN,
            choices: None,
        }
    };
    let mut search = Search {
        model,
        cache,
        objective,
        events,
        deploy_rest,
        score_rest,
        pick: vec![vec![0; model.days]; model.locs.len()],
        reqs: vec![vec![[0; 3]; model.days]; model.locs.len()],
        best,
        nodes: 0,
        aborted: false,
    };
    search.go(0, 0.0, 0, 0);
    if search.aborted {
        return None;
    }
    Some(match search.best.choices {
        None => incumbent.clone(),
        Some(pick) => (0..model.locs.len())
            .map(|l| (0..model.days).map(|t| model.opts[l][t][pick[l][t]].cand).collect())
            .collect(),
    })
}
