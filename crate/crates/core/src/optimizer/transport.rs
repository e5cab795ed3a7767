//! Cheapest overnight rebalancing of one machine type inside one district.
//!
//! Sites with surplus ship to sites with a deficit or to the warehouse, and
//! the warehouse fills whatever deficit remains. Order cost is concave in the
//! shipped quantity (dispatch plus leg are fixed charges), so the search is an
//! enumeration of how each surplus is split, pruned by a per-source lower bound.

use std::collections::HashMap;

use crate::cost::{order_cost_unchecked, CostMatrix, CostParameters};

/// Site index in the cost matrix, quantity shipped.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Flow {
    pub from: usize,
    pub to: usize,
    pub qty: u32,
}

#[derive(Clone, Debug)]
pub(crate) struct TransportSolution {
    pub cost: f64,
    pub orders: u32,
    pub flows: Vec<Flow>,
    pub exact: bool,
}

pub(crate) fn better(cost: f64, orders: u32, best_cost: f64, best_orders: u32) -> bool {
    let tol = 1e-9 * best_cost.abs().max(1.0);
    cost < best_cost - tol || (cost <= best_cost + tol && orders < best_orders)
}

struct Search<'a> {
    matrix: &'a CostMatrix,
    params: &'a CostParameters,
    warehouse: usize,
    sources: Vec<(usize, u32)>,
    sinks: Vec<(usize, u32)>,
    need: Vec<u32>,
    flows: Vec<Flow>,
    best: TransportSolution,
    nodes: u64,
    max_nodes: u64,
    /// Lower bound on the cost of shipping source k's whole surplus.
    source_lb: Vec<f64>,
    min_leg_from_warehouse: f64,
}

impl Search<'_> {
    fn order(&self, qty: u32, from: usize, to: usize) -> f64 {
        order_cost_unchecked(qty, self.matrix.get(from, to), self.params)
    }

    fn lower_bound(&self, k: usize) -> f64 {
        let rest: f64 = self.source_lb[k..].iter().sum();
        let supply: u64 = self.sources[k..].iter().map(|s| s.1 as u64).sum();
        let demand: u64 = self.need.iter().map(|&n| n as u64).sum();
        let extra = demand.saturating_sub(supply) as u32;
        let from_w = if extra > 0 {
            let p = self.params;
            extra.div_ceil(p.module_capacity) as f64 * p.module_cost
                + extra as f64 * p.examination_cost
                + p.dispatch_cost
                + self.min_leg_from_warehouse
        } else {
            0.0
        };
        rest + from_w
    }

    fn finish(&mut self, cost: f64, orders: u32) {
        let mut cost = cost;
        let mut orders = orders;
        let mut tail = Vec::new();
        for (j, &(site, _)) in self.sinks.iter().enumerate() {
            if self.need[j] > 0 {
                cost += self.order(self.need[j], self.warehouse, site);
                orders += 1;
                tail.push(Flow {
                    from: self.warehouse,
                    to: site,
                    qty: self.need[j],
                });
            }
        }
        if better(cost, orders, self.best.cost, self.best.orders) {
            let mut flows = self.flows.clone();
            flows.extend(tail);
            self.best = TransportSolution {
                cost,
                orders,
                flows,
                exact: true,
            };
        }
    }

    fn source(&mut self, k: usize, cost: f64, orders: u32) {
        if k == self.sources.len() {
            self.finish(cost, orders);
            return;
        }
        if cost + self.lower_bound(k) > self.best.cost + 1e-9 * self.best.cost.abs().max(1.0) {
            return;
        }
        let remaining = self.sources[k].1;
        self.split(k, 0, remaining, cost, orders);
    }

    /// Chooses how much of source k's `left` goes to sink j and later sinks.
    fn split(&mut self, k: usize, j: usize, left: u32, cost: f64, orders: u32) {
        self.nodes += 1;
        if self.nodes > self.max_nodes {
            return;
        }
        let from = self.sources[k].0;
        if j == self.sinks.len() {
            if left == 0 {
                self.source(k + 1, cost, orders);
            } else {
                let c = self.order(left, from, self.warehouse);
                self.flows.push(Flow {
                    from,
                    to: self.warehouse,
                    qty: left,
                });
                self.source(k + 1, cost + c, orders + 1);
                self.flows.pop();
            }
            return;
        }
        let to = self.sinks[j].0;
        let top = left.min(self.need[j]);
        for q in (0..=top).rev() {
            if q == 0 {
                self.split(k, j + 1, left, cost, orders);
            } else {
                let c = self.order(q, from, to);
                self.need[j] -= q;
                self.flows.push(Flow { from, to, qty: q });
                self.split(k, j + 1, left - q, cost + c, orders + 1);
                self.flows.pop();
                self.need[j] += q;
            }
        }
    }
}

/// `sites[i]` changes its holding by `delta[i]` overnight.
pub(crate) fn solve_transport(
    sites: &[usize],
    delta: &[i32],
    matrix: &CostMatrix,
    params: &CostParameters,
    max_nodes: u64,
) -> TransportSolution {
    let warehouse = matrix.warehouse();
    let sources: Vec<(usize, u32)> = sites
        .iter()
        .zip(delta)
        .filter(|(_, &d)| d < 0)
        .map(|(&s, &d)| (s, d.unsigned_abs()))
        .collect();
    let sinks: Vec<(usize, u32)> = sites
        .iter()
        .zip(delta)
        .filter(|(_, &d)| d > 0)
        .map(|(&s, &d)| (s, d as u32))
        .collect();

    // Incumbent: everything routed through the warehouse.
    let mut flows = Vec::new();
    let mut cost = 0.0;
    for &(s, q) in &sources {
        cost += order_cost_unchecked(q, matrix.get(s, warehouse), params);
        flows.push(Flow {
            from: s,
            to: warehouse,
            qty: q,
        });
    }
    for &(s, q) in &sinks {
        cost += order_cost_unchecked(q, matrix.get(warehouse, s), params);
        flows.push(Flow {
            from: warehouse,
            to: s,
            qty: q,
        });
    }
    let incumbent = TransportSolution {
        cost,
        orders: flows.len() as u32,
        flows,
        exact: sources.is_empty() || sinks.is_empty(),
    };
    if incumbent.exact {
        return incumbent;
    }

    let p = params;
    let source_lb = sources
        .iter()
        .map(|&(s, q)| {
            let min_leg = sinks
                .iter()
                .map(|&(t, _)| matrix.get(s, t))
                .fold(matrix.get(s, warehouse), f64::min);
            q.div_ceil(p.module_capacity) as f64 * p.module_cost
                + q as f64 * p.examination_cost
                + p.dispatch_cost
                + min_leg
        })
        .collect();
    let min_leg_from_warehouse = sinks
        .iter()
        .map(|&(t, _)| matrix.get(warehouse, t))
        .fold(f64::INFINITY, f64::min);
    let mut search = Search {
        matrix,
        params,
        warehouse,
        need: sinks.iter().map(|s| s.1).collect(),
        sources,
        sinks,
        flows: Vec::new(),
        best: incumbent,
        nodes: 0,
        max_nodes,
        source_lb,
        min_leg_from_warehouse,
    };
    search.source(0, 0.0, 0);
    let mut best = search.best;
    best.exact = search.nodes <= search.max_nodes;
    best
}

/// Memoized transport costs keyed by district and delta vector.
#[derive(Default)]
pub(crate) struct TransportCache {
    map: HashMap<Vec<i32>, TransportSolution>,
    key: Vec<i32>,
    pub inexact: bool,
}

impl TransportCache {
    pub fn get(
        &mut self,
        district: usize,
        sites: &[usize],
        delta: &[i32],
        matrix: &CostMatrix,
        params: &CostParameters,
        max_nodes: u64,
    ) -> &TransportSolution {
        self.key.clear();
        self.key.push(district as i32);
        self.key.extend_from_slice(delta);
        if !self.map.contains_key(self.key.as_slice()) {
            let sol = solve_transport(sites, delta, matrix, params, max_nodes);
            self.inexact |= !sol.exact;
            self.map.insert(self.key.clone(), sol);
        }
        &self.map[self.key.as_slice()]
    }
}
