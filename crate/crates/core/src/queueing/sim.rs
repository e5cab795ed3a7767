//! Replicated simulation of one voting day through check-in, ballot marking
//! and scanning, each a FIFO multi-server station.
//!
//! Random numbers are drawn per replication and shared by every resource
//! combination evaluated against the same seed. Service times are indexed by
//! the order in which voters reach a station rather than by voter, which makes
//! per-replication total waiting monotone in every server count.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use super::service::{Sampler, ServiceTimeConfig};
use super::{ArrivalInput, DaySimulationResult, ReplicationPolicy};
use crate::resource::{PerResource, ResourceCombination};
use crate::seed::{self, Stream};

const MINUTES_PER_HOUR: f64 = 60.0;
const CLT_Z: f64 = 1.96;

/// One replication's voters: sorted arrival instants and rank-indexed service draws.
pub(crate) struct Voters {
    arrivals: Vec<f64>,
    service: [Vec<f64>; 3],
    close: f64,
}

impl Voters {
    pub fn generate(input: &ArrivalInput, samplers: &[Sampler; 3], seed: u64, rep: u64) -> Self {
        let mut rng = seed::rng(seed::derive(seed, Stream::Arrivals, &[rep]));
        let (mut arrivals, close) = match input {
            ArrivalInput::Rates(rates) => {
                let mut out = Vec::new();
                for (h, &rate) in rates.iter().enumerate() {
                    let n = if rate > 0.0 {
                        Poisson::new(rate).expect("positive finite rate").sample(&mut rng) as u64
                    } else {
                        0
                    };
                    place_in_hour(&mut out, h, n, &mut rng);
                }
                (out, rates.len() as f64 * MINUTES_PER_HOUR)
            }
            ArrivalInput::Counts(counts) => {
                let mut out = Vec::with_capacity(counts.iter().sum::<u64>() as usize);
                for (h, &n) in counts.iter().enumerate() {
                    place_in_hour(&mut out, h, n, &mut rng);
                }
                (out, counts.len() as f64 * MINUTES_PER_HOUR)
            }
            ArrivalInput::Times { minutes, close_min } => (minutes.clone(), *close_min),
        };
        arrivals.sort_by(f64::total_cmp);

        let mut rng = seed::rng(seed::derive(seed, Stream::Service, &[rep]));
        let n = arrivals.len();
        let service = std::array::from_fn(|s| (0..n).map(|_| samplers[s].sample(&mut rng)).collect());
        Self {
            arrivals,
            service,
            close,
        }
    }
}

fn place_in_hour<R: Rng>(out: &mut Vec<f64>, hour: usize, n: u64, rng: &mut R) {
    let start = hour as f64 * MINUTES_PER_HOUR;
    out.extend((0..n).map(|_| start + rng.random::<f64>() * MINUTES_PER_HOUR));
}

#[derive(Default)]
pub(crate) struct Scratch {
    order: Vec<u32>,
    at: Vec<f64>,
    wait: Vec<f64>,
    free: Vec<f64>,
}

struct RepStats {
    stage_wait: [f64; 3],
    busy: [f64; 3],
    busy_in_window: [f64; 3],
    last_departure: f64,
}

/// Pushes each voter's total queue wait into `scratch.wait` (arrival order).
fn run_tandem(v: &Voters, servers: [u32; 3], scratch: &mut Scratch) -> RepStats {
    let n = v.arrivals.len();
    scratch.at.clear();
    scratch.at.extend_from_slice(&v.arrivals);
    scratch.wait.clear();
    scratch.wait.resize(n, 0.0);
    scratch.order.clear();
    scratch.order.extend(0..n as u32);

    let mut stats = RepStats {
        stage_wait: [0.0; 3],
        busy: [0.0; 3],
        busy_in_window: [0.0; 3],
        last_departure: 0.0,
    };
    for stage in 0..3 {
        if stage > 0 {
            // Departures from the previous station are nearly in order already.
            let at = &scratch.at;
            let order = &mut scratch.order;
            for k in 1..order.len() {
                let cur = order[k];
                let key = (at[cur as usize], cur);
                let mut j = k;
                while j > 0 {
                    let prev = order[j - 1];
                    if at[prev as usize].total_cmp(&key.0).then(prev.cmp(&key.1)).is_le() {
                        break;
                    }
                    order[j] = prev;
                    j -= 1;
                }
                order[j] = cur;
            }
        }
        scratch.free.clear();
        scratch.free.resize(servers[stage] as usize, 0.0);
        for (rank, &i) in scratch.order.iter().enumerate() {
            let i = i as usize;
            let (slot, free_at) = scratch
                .free
                .iter()
                .copied()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("at least one server");
            let arrive = scratch.at[i];
            let start = arrive.max(free_at);
            let svc = v.service[stage][rank];
            let end = start + svc;
            scratch.free[slot] = end;
            scratch.wait[i] += start - arrive;
            stats.stage_wait[stage] += start - arrive;
            stats.busy[stage] += svc;
            stats.busy_in_window[stage] += (end.min(v.close) - start.min(v.close)).max(0.0);
            scratch.at[i] = end;
        }
    }
    stats.last_departure = scratch.at.iter().copied().fold(0.0, f64::max);
    stats
}

/// Running totals for one combination across replications.
pub(crate) struct Accumulator {
    combo: ResourceCombination,
    waits: Vec<f64>,
    rep_means: Vec<f64>,
    util: [f64; 3],
    sched_util: [f64; 3],
    stage_wait: [f64; 3],
    voters: u64,
}

impl Accumulator {
    pub fn new(combo: ResourceCombination) -> Self {
        Self {
            combo,
            waits: Vec::new(),
            rep_means: Vec::new(),
            util: [0.0; 3],
            sched_util: [0.0; 3],
            stage_wait: [0.0; 3],
            voters: 0,
        }
    }

    pub fn add(&mut self, voters: &Voters, scratch: &mut Scratch) {
        let servers = self.combo.servers();
        let stats = run_tandem(voters, servers, scratch);
        let n = voters.arrivals.len();
        let horizon = voters.close.max(stats.last_departure);
        for s in 0..3 {
            let c = servers[s] as f64;
            if n > 0 && horizon > 0.0 {
                self.util[s] += stats.busy[s] / (c * horizon);
            }
            if n > 0 && voters.close > 0.0 {
                self.sched_util[s] += stats.busy_in_window[s] / (c * voters.close);
            }
            self.stage_wait[s] += stats.stage_wait[s];
        }
        let total: f64 = scratch.wait.iter().sum();
        self.rep_means.push(if n > 0 { total / n as f64 } else { 0.0 });
        self.waits.extend_from_slice(&scratch.wait);
        self.voters += n as u64;
    }

    pub fn replications(&self) -> usize {
        self.rep_means.len()
    }

    /// 95% confidence half-width of the mean wait, from replication means.
    pub fn half_width(&self) -> f64 {
        let k = self.rep_means.len();
        if k < 2 {
            return f64::INFINITY;
        }
        let mean = self.rep_means.iter().sum::<f64>() / k as f64;
        let var = self.rep_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        CLT_Z * (var / k as f64).sqrt()
    }

    pub fn finish(self) -> DaySimulationResult {
        let reps = self.rep_means.len() as f64;
        let per_rep = |v: [f64; 3]| PerResource::new(v[0] / reps, v[1] / reps, v[2] / reps);
        let per_voter = |v: [f64; 3]| {
            if self.voters == 0 {
                PerResource::splat(0.0)
            } else {
                let n = self.voters as f64;
                PerResource::new(v[0] / n, v[1] / n, v[2] / n)
            }
        };
        DaySimulationResult {
            utilization: per_rep(self.util),
            scheduled_utilization: per_rep(self.sched_util),
            mean_stage_wait: per_voter(self.stage_wait),
            replications: self.rep_means.len() as u32,
            total_voters: self.voters,
            replication_means: self.rep_means,
            waits: self.waits,
        }
    }
}

pub(crate) fn samplers(svc: &ServiceTimeConfig) -> [Sampler; 3] {
    [svc.pollpads.sampler(), svc.bmds.sampler(), svc.scanners.sampler()]
}

/// Simulates every combination under common random numbers.
pub(crate) fn simulate_many(
    input: &ArrivalInput,
    combos: &[ResourceCombination],
    svc: &ServiceTimeConfig,
    policy: &ReplicationPolicy,
    seed: u64,
) -> Vec<DaySimulationResult> {
    let samplers = samplers(svc);
    let mut scratch = Scratch::default();
    match *policy {
        ReplicationPolicy::Fixed(n) => {
            let mut accs: Vec<Accumulator> = combos.iter().map(|&c| Accumulator::new(c)).collect();
            for rep in 0..n as u64 {
                let voters = Voters::generate(input, &samplers, seed, rep);
                for acc in &mut accs {
                    acc.add(&voters, &mut scratch);
                }
            }
            accs.into_iter().map(Accumulator::finish).collect()
        }
        ReplicationPolicy::Clt(rule) => combos
            .iter()
            .map(|&combo| {
                let mut acc = Accumulator::new(combo);
                for rep in 0..rule.max as u64 {
                    let voters = Voters::generate(input, &samplers, seed, rep);
                    acc.add(&voters, &mut scratch);
                    if acc.replications() >= rule.min.max(2) as usize && acc.half_width() < rule.half_width_min {
                        break;
                    }
                }
                acc.finish()
            })
            .collect(),
    }
}
