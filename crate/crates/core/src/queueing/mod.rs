//! Three-station voting queueing network and per-combination evaluation.

mod service;
mod sim;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use service::{default_services, validate_services, ServiceFamily, ServiceTimeConfig, StageService};

use crate::error::{Error, Result};
use crate::resource::{PerResource, Resource, ResourceCombination};

/// Default quantile for robust waiting time.
pub const DEFAULT_ROBUST_QUANTILE: f64 = 0.997;

/// Arrivals for one simulated voting day.
#[derive(Clone, Debug, PartialEq)]
pub enum ArrivalInput {
    /// Expected voters per hour; each replication draws Poisson counts.
    Rates(Vec<f64>),
    /// Voters per hour, identical in every replication.
    Counts(Vec<u64>),
    /// Exact arrival instants in minutes after opening, with the closing time.
    Times { minutes: Vec<f64>, close_min: f64 },
}

impl ArrivalInput {
    fn validate(&self) -> Result<()> {
        match self {
            ArrivalInput::Rates(r) if r.iter().any(|x| !x.is_finite() || *x < 0.0) => {
                Err(Error::invalid("arrival rates must be finite and >= 0"))
            }
            ArrivalInput::Times { minutes, close_min } => {
                if minutes.iter().any(|t| !t.is_finite() || *t < 0.0) || !(*close_min >= 0.0) {
                    Err(Error::invalid("arrival instants must be finite and >= 0"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Stopping rule for replications.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReplicationPolicy {
    Fixed(u32),
    Clt(CltRule),
}

/// Replicate until the 95% half-width of mean wait drops below `half_width_min`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltRule {
    pub min: u32,
    pub max: u32,
    pub half_width_min: f64,
}

impl Default for ReplicationPolicy {
    fn default() -> Self {
        ReplicationPolicy::Fixed(100)
    }
}

impl From<u32> for ReplicationPolicy {
    fn from(n: u32) -> Self {
        ReplicationPolicy::Fixed(n)
    }
}

impl ReplicationPolicy {
    pub fn clt() -> Self {
        ReplicationPolicy::Clt(CltRule {
            min: 10,
            max: 1000,
            half_width_min: 0.5,
        })
    }

    fn validate(&self) -> Result<()> {
        match self {
            ReplicationPolicy::Fixed(0) => Err(Error::invalid("at least one replication is required")),
            ReplicationPolicy::Clt(r) if r.max == 0 || r.min > r.max || !(r.half_width_min > 0.0) => {
                Err(Error::invalid("replication rule needs 0 < min <= max and a positive half-width"))
            }
            _ => Ok(()),
        }
    }
}

/// Pooled outcome of replicated simulations of one day under one combination.
#[derive(Clone, Debug, PartialEq)]
pub struct DaySimulationResult {
    /// Total queue wait of every simulated voter, replications concatenated.
    pub waits: Vec<f64>,
    /// Busy time over servers × time until the last voter clears.
    pub utilization: PerResource<f64>,
    /// Busy time inside scheduled hours over servers × scheduled hours.
    pub scheduled_utilization: PerResource<f64>,
    pub mean_stage_wait: PerResource<f64>,
    pub replication_means: Vec<f64>,
    pub replications: u32,
    pub total_voters: u64,
}

impl DaySimulationResult {
    pub fn mean_wait(&self) -> f64 {
        if self.waits.is_empty() {
            0.0
        } else {
            self.waits.iter().sum::<f64>() / self.waits.len() as f64
        }
    }

    pub fn robust_wait(&self, q: f64) -> f64 {
        robust_wait(&self.waits, q)
    }
}

/// A simulated combination and whether it met the utilization band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedCombination {
    pub combo: ResourceCombination,
    pub robust_wait: f64,
    pub mean_wait: f64,
    pub utilization: PerResource<f64>,
    pub scheduled_utilization: PerResource<f64>,
    pub passed: bool,
}

/// Inclusive utilization range `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilRange(pub f64, pub f64);

impl UtilRange {
    pub fn contains(&self, u: f64) -> bool {
        self.0 <= u && u <= self.1
    }
}

pub type UtilizationBand = PerResource<UtilRange>;

pub fn default_band() -> UtilizationBand {
    PerResource::splat(UtilRange(0.0, 0.95))
}

pub fn validate_band(band: &UtilizationBand) -> Result<()> {
    for (r, range) in band.iter() {
        if !(0.0 <= range.0 && range.0 <= range.1 && range.1 <= 1.0) {
            return Err(Error::invalid(format!(
                "{r} utilization band [{}, {}] must satisfy 0 <= lo <= hi <= 1",
                range.0, range.1
            )));
        }
    }
    Ok(())
}

/// Parses `lo:hi` (all stations) or `lo:hi,lo:hi,lo:hi`.
pub fn parse_band(s: &str) -> Result<UtilizationBand> {
    let ranges = s
        .split(',')
        .map(|part| {
            let (lo, hi) = part
                .split_once(':')
                .ok_or_else(|| Error::invalid(format!("expected lo:hi, got `{part}`")))?;
            let lo = f64::from_str(lo.trim()).map_err(|_| Error::invalid(format!("bad bound `{lo}`")))?;
            let hi = f64::from_str(hi.trim()).map_err(|_| Error::invalid(format!("bad bound `{hi}`")))?;
            Ok(UtilRange(lo, hi))
        })
        .collect::<Result<Vec<_>>>()?;
    let band = match ranges.as_slice() {
        [one] => PerResource::splat(*one),
        [p, b, s] => PerResource::new(*p, *b, *s),
        _ => return Err(Error::invalid("utilization band needs one or three ranges")),
    };
    validate_band(&band)?;
    Ok(band)
}

/// Every combination within the layout caps, ordered lexicographically.
pub fn enumerate_feasible_combinations(caps: PerResource<u32>) -> Result<Vec<ResourceCombination>> {
    if caps.iter().any(|(_, &c)| c < 1) {
        return Err(Error::NoCapacity);
    }
    let mut out = Vec::with_capacity((caps.pollpads * caps.bmds * caps.scanners) as usize);
    for p in 1..=caps.pollpads {
        for b in 1..=caps.bmds {
            for s in 1..=caps.scanners {
                out.push(ResourceCombination::new(p, b, s));
            }
        }
    }
    Ok(out)
}

/// Empirical quantile: the ⌈q·n⌉-th smallest sample (1-based); 0 when empty.
pub fn robust_wait(samples: &[f64], q: f64) -> f64 {
    debug_assert!(q > 0.0 && q < 1.0, "quantile {q} outside (0,1)");
    if samples.is_empty() {
        return 0.0;
    }
    let n = samples.len();
    // The 1e-9 slack absorbs binary representation error in q·n (0.997·1000).
    let k = ((q * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut v = samples.to_vec();
    let (_, kth, _) = v.select_nth_unstable_by(k - 1, f64::total_cmp);
    *kth
}

pub fn simulate_voting_day(
    input: &ArrivalInput,
    combo: ResourceCombination,
    svc: &ServiceTimeConfig,
    policy: ReplicationPolicy,
    seed: u64,
) -> Result<DaySimulationResult> {
    input.validate()?;
    policy.validate()?;
    validate_services(svc)?;
    if combo.servers().contains(&0) {
        return Err(Error::invalid(format!("combination {combo} has a station without servers")));
    }
    Ok(sim::simulate_many(input, &[combo], svc, &policy, seed)
        .pop()
        .expect("one combination"))
}

/// Settings shared by every location-day evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationSettings {
    pub services: ServiceTimeConfig,
    pub band: UtilizationBand,
    pub policy: ReplicationPolicy,
    pub quantile: f64,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            services: default_services(),
            band: default_band(),
            policy: ReplicationPolicy::default(),
            quantile: DEFAULT_ROBUST_QUANTILE,
        }
    }
}

/// Simulates every layout-feasible combination; all are returned, with
/// `passed == false` for those outside the utilization band.
pub fn evaluate_location_day(
    input: &ArrivalInput,
    caps: PerResource<u32>,
    settings: &EvaluationSettings,
    seed: u64,
) -> Result<Vec<EvaluatedCombination>> {
    input.validate()?;
    settings.policy.validate()?;
    validate_services(&settings.services)?;
    validate_band(&settings.band)?;
    if !(settings.quantile > 0.0 && settings.quantile < 1.0) {
        return Err(Error::invalid(format!("robust quantile {} outside (0,1)", settings.quantile)));
    }
    let combos = enumerate_feasible_combinations(caps)?;
    let results = sim::simulate_many(input, &combos, &settings.services, &settings.policy, seed);
    Ok(combos
        .into_iter()
        .zip(results)
        .map(|(combo, res)| {
            let passed = Resource::ALL
                .iter()
                .all(|&r| settings.band[r].contains(res.utilization[r]));
            EvaluatedCombination {
                combo,
                robust_wait: res.robust_wait(settings.quantile),
                mean_wait: res.mean_wait(),
                utilization: res.utilization,
                scheduled_utilization: res.scheduled_utilization,
                passed,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(p: f64, b: f64, s: f64) -> ServiceTimeConfig {
        PerResource::new(
            StageService::deterministic(p),
            StageService::deterministic(b),
            StageService::deterministic(s),
        )
    }

    #[test]
    fn grid_enumeration() {
        let c = enumerate_feasible_combinations(PerResource::new(2, 2, 1)).unwrap();
        let expected = [(1, 1, 1), (1, 2, 1), (2, 1, 1), (2, 2, 1)];
        assert_eq!(
            c,
            expected
                .iter()
                .map(|&(p, b, s)| ResourceCombination::new(p, b, s))
                .collect::<Vec<_>>()
        );
        let one = enumerate_feasible_combinations(PerResource::new(1, 1, 1)).unwrap();
        assert_eq!(one, vec![ResourceCombination::new(1, 1, 1)]);
        let big = enumerate_feasible_combinations(PerResource::new(6, 17, 3)).unwrap();
        assert!(big.contains(&ResourceCombination::new(5, 11, 2)));
        assert!(big.contains(&ResourceCombination::new(6, 17, 3)));
        assert!(matches!(
            enumerate_feasible_combinations(PerResource::new(0, 1, 1)),
            Err(Error::NoCapacity)
        ));
    }

    #[test]
    fn empty_day() {
        let r = simulate_voting_day(
            &ArrivalInput::Rates(vec![0.0; 12]),
            ResourceCombination::new(1, 1, 1),
            &default_services(),
            ReplicationPolicy::Fixed(5),
            1,
        )
        .unwrap();
        assert!(r.waits.is_empty());
        assert_eq!(r.utilization, PerResource::splat(0.0));
        assert_eq!(r.robust_wait(0.997), 0.0);
    }

    #[test]
    fn two_simultaneous_voters_hand_trace() {
        let r = simulate_voting_day(
            &ArrivalInput::Times {
                minutes: vec![0.0, 0.0],
                close_min: 60.0,
            },
            ResourceCombination::new(1, 1, 1),
            &det(1.0, 5.0, 0.5),
            ReplicationPolicy::Fixed(1),
            0,
        )
        .unwrap();
        assert_eq!(r.waits, vec![0.0, 5.0]);
        // Stage busy 2, 10, 1 minutes over an hour-long day (last voter leaves at 11.5).
        assert!((r.utilization.bmds - 10.0 / 60.0).abs() < 1e-12);
    }

    #[test]
    fn robust_wait_rules() {
        let v: Vec<f64> = (1..=1000).rev().map(f64::from).collect();
        assert_eq!(robust_wait(&v, 0.997), 997.0);
        assert_eq!(robust_wait(&[0.0; 10], 0.997), 0.0);
        assert_eq!(robust_wait(&[5.0], 0.997), 5.0);
        assert_eq!(robust_wait(&[], 0.5), 0.0);
    }

    #[test]
    fn band_filtering() {
        let zero = ArrivalInput::Rates(vec![0.0; 4]);
        let mut settings = EvaluationSettings {
            policy: ReplicationPolicy::Fixed(3),
            ..EvaluationSettings::default()
        };
        let out = evaluate_location_day(&zero, PerResource::new(2, 2, 1), &settings, 3).unwrap();
        assert!(out.iter().all(|e| e.passed && e.robust_wait == 0.0));
        settings.band = PerResource::splat(UtilRange(0.05, 0.95));
        let out = evaluate_location_day(&zero, PerResource::new(2, 2, 1), &settings, 3).unwrap();
        assert!(out.iter().all(|e| !e.passed));
    }

    #[test]
    fn band_parsing() {
        assert_eq!(parse_band("0:0.9").unwrap(), PerResource::splat(UtilRange(0.0, 0.9)));
        let b = parse_band("0:0.9,0.1:0.95,0:1").unwrap();
        assert_eq!(b.bmds, UtilRange(0.1, 0.95));
        assert!(parse_band("0.5:0.2").is_err());
        assert!(parse_band("0:1,0:1").is_err());
    }

    #[test]
    fn evaluation_matches_single_simulation() {
        let input = ArrivalInput::Rates(vec![20.0, 35.0, 10.0]);
        let settings = EvaluationSettings {
            policy: ReplicationPolicy::Fixed(7),
            ..EvaluationSettings::default()
        };
        let all = evaluate_location_day(&input, PerResource::new(2, 3, 1), &settings, 42).unwrap();
        for e in &all {
            let single = simulate_voting_day(&input, e.combo, &settings.services, settings.policy, 42).unwrap();
            assert_eq!(single.robust_wait(settings.quantile), e.robust_wait);
            assert_eq!(single.utilization, e.utilization);
        }
    }

    #[test]
    fn clt_policy_stops_early_for_light_load() {
        let r = simulate_voting_day(
            &ArrivalInput::Rates(vec![5.0; 12]),
            ResourceCombination::new(3, 4, 2),
            &default_services(),
            ReplicationPolicy::clt(),
            9,
        )
        .unwrap();
        assert!(r.replications >= 10 && r.replications < 1000);
    }
}
