//! Hourly arrival forecasting from a reference election and the early days
//! observed so far.
//!
//! Each location gets one scaling factor fitted by least squares through the
//! origin on daily totals; remaining days are the scaled reference totals
//! spread over the day by an hourly profile.

use std::collections::{BTreeMap, BTreeSet};

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Default voting hours per day (07:00 to 19:00).
pub const DEFAULT_HOURS: usize = 12;

/// Per-location daily voter totals of a reference election over `days` voting days.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoricalTurnout {
    days: usize,
    totals: BTreeMap<String, Vec<u64>>,
}

impl HistoricalTurnout {
    pub fn new(days: usize, totals: BTreeMap<String, Vec<u64>>) -> Result<Self> {
        if days == 0 {
            return Err(Error::invalid("historical horizon must cover at least one day"));
        }
        for (loc, row) in &totals {
            if row.len() != days {
                return Err(Error::invalid(format!(
                    "historical turnout for {loc} has {} days, expected {days}",
                    row.len()
                )));
            }
            if row.iter().all(|&v| v == 0) {
                return Err(Error::invalid(format!("historical turnout for {loc} is all zero")));
            }
        }
        Ok(Self { days, totals })
    }

    pub fn days(&self) -> usize {
        self.days
    }

    pub fn locations(&self) -> impl Iterator<Item = &str> {
        self.totals.keys().map(String::as_str)
    }

    /// Totals for days 1..=D (index 0 is day 1).
    pub fn totals(&self, location: &str) -> Option<&[u64]> {
        self.totals.get(location).map(Vec::as_slice)
    }
}

/// Hourly arrival counts recorded on the elapsed early days.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedArrivals {
    hours: usize,
    elapsed: usize,
    counts: BTreeMap<String, Vec<Vec<u64>>>,
}

impl ObservedArrivals {
    pub fn empty(hours: usize) -> Self {
        Self {
            hours,
            elapsed: 0,
            counts: BTreeMap::new(),
        }
    }

    /// `counts[loc][day][hour]` for days 1..=elapsed.
    pub fn new(hours: usize, counts: BTreeMap<String, Vec<Vec<u64>>>) -> Result<Self> {
        let mut elapsed = None;
        for (loc, days) in &counts {
            match elapsed {
                None => elapsed = Some(days.len()),
                Some(e) if e != days.len() => {
                    return Err(Error::invalid(format!(
                        "observed arrivals for {loc} cover {} days, others cover {e}",
                        days.len()
                    )))
                }
                _ => {}
            }
            for (d, day) in days.iter().enumerate() {
                if day.len() != hours {
                    return Err(Error::invalid(format!(
                        "observed arrivals for {loc} day {} have {} hourly buckets, expected {hours}",
                        d + 1,
                        day.len()
                    )));
                }
            }
        }
        Ok(Self {
            hours,
            elapsed: elapsed.unwrap_or(0),
            counts,
        })
    }

    pub fn hours(&self) -> usize {
        self.hours
    }

    pub fn elapsed(&self) -> usize {
        self.elapsed
    }

    pub fn locations(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    pub fn day(&self, location: &str, day: usize) -> Option<&[u64]> {
        self.counts
            .get(location)
            .and_then(|days| days.get(day.checked_sub(1)?))
            .map(Vec::as_slice)
    }

    pub fn daily_totals(&self, location: &str) -> Option<Vec<u64>> {
        self.counts
            .get(location)
            .map(|days| days.iter().map(|h| h.iter().sum()).collect())
    }

    /// Appends one elapsed day. Every location present so far must be given.
    pub fn push_day(&mut self, day: BTreeMap<String, Vec<u64>>) -> Result<()> {
        if self.elapsed > 0 {
            let known: BTreeSet<&String> = self.counts.keys().collect();
            let given: BTreeSet<&String> = day.keys().collect();
            if known != given {
                return Err(Error::InconsistentLocations(
                    "observed day does not cover the same locations".into(),
                ));
            }
        }
        for (loc, hours) in day {
            if hours.len() != self.hours {
                return Err(Error::invalid(format!(
                    "observed arrivals for {loc} have {} hourly buckets, expected {}",
                    hours.len(),
                    self.hours
                )));
            }
            self.counts.entry(loc).or_default().push(hours);
        }
        self.elapsed += 1;
        Ok(())
    }
}

/// Fraction of a day's voters arriving in each voting hour.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct HourlyProfile(Vec<f64>);

impl HourlyProfile {
    pub fn new(fractions: Vec<f64>) -> Result<Self> {
        if fractions.is_empty() {
            return Err(Error::invalid("hourly profile is empty"));
        }
        if let Some(bad) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::invalid(format!("profile fraction {bad} outside [0,1]")));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::ProfileSum((sum * 1e9).round() / 1e9));
        }
        Ok(Self(fractions))
    }

    pub fn uniform(hours: usize) -> Self {
        Self(vec![1.0 / hours as f64; hours])
    }

    pub fn hours(&self) -> usize {
        self.0.len()
    }

    pub fn fractions(&self) -> &[f64] {
        &self.0
    }

    /// Splits a daily total into hourly expected arrivals.
    pub fn spread(&self, daily_total: f64) -> Vec<f64> {
        self.0.iter().map(|f| daily_total * f).collect()
    }
}

impl<'de> Deserialize<'de> for HourlyProfile {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        HourlyProfile::new(v).map_err(serde::de::Error::custom)
    }
}

/// County-wide profile with optional per-location overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileSet {
    pub default: HourlyProfile,
    pub overrides: BTreeMap<String, HourlyProfile>,
}

impl ProfileSet {
    pub fn for_location(&self, location: &str) -> &HourlyProfile {
        self.overrides.get(location).unwrap_or(&self.default)
    }
}

impl From<HourlyProfile> for ProfileSet {
    fn from(default: HourlyProfile) -> Self {
        Self {
            default,
            overrides: BTreeMap::new(),
        }
    }
}

/// Clamp range for fitted scaling factors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for ScalingBounds {
    fn default() -> Self {
        Self { min: 0.1, max: 10.0 }
    }
}

/// Expected hourly arrival rates for every location on days `first_day..=last_day`.
#[derive(Clone, Debug, PartialEq)]
pub struct DemandForecast {
    first_day: usize,
    last_day: usize,
    rates: BTreeMap<String, Vec<Vec<f64>>>,
    scaling: BTreeMap<String, f64>,
}

impl DemandForecast {
    pub fn first_day(&self) -> usize {
        self.first_day
    }

    pub fn last_day(&self) -> usize {
        self.last_day
    }

    pub fn locations(&self) -> impl Iterator<Item = &str> {
        self.rates.keys().map(String::as_str)
    }

    /// Hourly rates (voters/hour) for `location` on absolute day `day`.
    pub fn rates(&self, location: &str, day: usize) -> Option<&[f64]> {
        if day < self.first_day || day > self.last_day {
            return None;
        }
        self.rates
            .get(location)
            .map(|days| days[day - self.first_day].as_slice())
    }

    pub fn daily_total(&self, location: &str, day: usize) -> Option<f64> {
        self.rates(location, day).map(|r| r.iter().sum())
    }

    pub fn scaling_factor(&self, location: &str) -> Option<f64> {
        self.scaling.get(location).copied()
    }
}

/// Least-squares scale `β` with `observed ≈ β · historical`, clamped to `bounds`.
pub fn fit_scaling_factor(historical: &[f64], observed: &[f64], bounds: ScalingBounds) -> Result<f64> {
    if historical.is_empty() || observed.is_empty() {
        return Err(Error::NoElapsedDays);
    }
    if historical.len() != observed.len() {
        return Err(Error::invalid(format!(
            "{} historical totals but {} observed totals",
            historical.len(),
            observed.len()
        )));
    }
    let hh: f64 = historical.iter().map(|h| h * h).sum();
    if hh <= 0.0 {
        return Err(Error::DegenerateHistorical);
    }
    let oh: f64 = historical.iter().zip(observed).map(|(h, o)| h * o).sum();
    Ok((oh / hh).clamp(bounds.min, bounds.max))
}

pub fn build_forecast(
    historical: &HistoricalTurnout,
    observed: &ObservedArrivals,
    profile: &HourlyProfile,
) -> Result<DemandForecast> {
    build_forecast_with(
        historical,
        observed,
        &ProfileSet::from(profile.clone()),
        ScalingBounds::default(),
    )
}

pub fn build_forecast_with(
    historical: &HistoricalTurnout,
    observed: &ObservedArrivals,
    profiles: &ProfileSet,
    bounds: ScalingBounds,
) -> Result<DemandForecast> {
    let elapsed = observed.elapsed();
    if elapsed >= historical.days() {
        return Err(Error::invalid(format!(
            "{elapsed} elapsed days leave nothing to forecast in a {}-day horizon",
            historical.days()
        )));
    }
    if observed.hours() != profiles.default.hours() {
        return Err(Error::invalid(format!(
            "observed arrivals use {} hours, profile has {}",
            observed.hours(),
            profiles.default.hours()
        )));
    }
    if elapsed > 0 {
        let hist: BTreeSet<&str> = historical.locations().collect();
        let obs: BTreeSet<&str> = observed.locations().collect();
        if hist != obs {
            let missing: Vec<&str> = hist.symmetric_difference(&obs).copied().collect();
            return Err(Error::InconsistentLocations(missing.join(", ")));
        }
    }

    let first_day = elapsed + 1;
    let last_day = historical.days();
    let mut rates = BTreeMap::new();
    let mut scaling = BTreeMap::new();
    for loc in historical.locations() {
        let hist = historical.totals(loc).expect("location listed");
        let beta = if elapsed == 0 {
            1.0
        } else {
            let h: Vec<f64> = hist[..elapsed].iter().map(|&v| v as f64).collect();
            let o: Vec<f64> = observed
                .daily_totals(loc)
                .expect("location checked")
                .iter()
                .map(|&v| v as f64)
                .collect();
            match fit_scaling_factor(&h, &o, bounds) {
                Ok(b) => b,
                // Closed on every elapsed day in the reference: nothing to learn.
                Err(Error::DegenerateHistorical) => 1.0,
                Err(e) => return Err(e),
            }
        };
        let profile = profiles.for_location(loc);
        let days: Vec<Vec<f64>> = hist[elapsed..]
            .iter()
            .map(|&total| profile.spread(beta * total as f64))
            .collect();
        rates.insert(loc.to_string(), days);
        scaling.insert(loc.to_string(), beta);
    }
    Ok(DemandForecast {
        first_day,
        last_day,
        rates,
        scaling,
    })
}

/// Draws one Poisson count per hour around the given expected rates.
pub fn realize_arrivals(rates: &[f64], seed: u64) -> Vec<u64> {
    let mut rng = seed::rng(seed);
    rates
        .iter()
        .map(|&rate| {
            if rate > 0.0 {
                Poisson::new(rate).expect("positive finite rate").sample(&mut rng) as u64
            } else {
                0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(days: usize, rows: &[(&str, &[u64])]) -> HistoricalTurnout {
        HistoricalTurnout::new(
            days,
            rows.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn exact_proportionality() {
        let b = fit_scaling_factor(&[100.0, 200.0], &[110.0, 220.0], ScalingBounds::default()).unwrap();
        assert!((b - 1.1).abs() < 1e-12);
    }

    #[test]
    fn least_squares_by_hand() {
        // (100·90 + 100·130) / (100² + 100²)
        let b = fit_scaling_factor(&[100.0, 100.0], &[90.0, 130.0], ScalingBounds::default()).unwrap();
        assert!((b - 22000.0 / 20000.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_empty() {
        let e = fit_scaling_factor(&[0.0, 0.0], &[5.0, 5.0], ScalingBounds::default()).unwrap_err();
        assert_eq!(e.to_string(), "degenerate historical");
        let e = fit_scaling_factor(&[], &[], ScalingBounds::default()).unwrap_err();
        assert_eq!(e.to_string(), "no elapsed days");
    }

    #[test]
    fn clamped() {
        let b = fit_scaling_factor(&[100.0], &[5000.0], ScalingBounds::default()).unwrap();
        assert_eq!(b, 10.0);
        let b = fit_scaling_factor(&[100.0], &[0.0], ScalingBounds::default()).unwrap();
        assert_eq!(b, 0.1);
    }

    #[test]
    fn uniform_split_with_no_observations() {
        let h = hist(1, &[("A", &[96])]);
        let f = build_forecast(&h, &ObservedArrivals::empty(12), &HourlyProfile::uniform(12)).unwrap();
        assert_eq!(f.first_day(), 1);
        for r in f.rates("A", 1).unwrap() {
            assert!((r - 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn one_observed_day_rescales_the_rest() {
        let h = hist(3, &[("A", &[100, 100, 100])]);
        let mut obs = ObservedArrivals::empty(1);
        obs.push_day([("A".to_string(), vec![120])].into()).unwrap();
        let f = build_forecast(&h, &obs, &HourlyProfile::new(vec![1.0]).unwrap()).unwrap();
        assert!((f.scaling_factor("A").unwrap() - 1.2).abs() < 1e-12);
        assert_eq!(f.first_day(), 2);
        assert!((f.rates("A", 2).unwrap()[0] - 120.0).abs() < 1e-9);
        assert!((f.rates("A", 3).unwrap()[0] - 120.0).abs() < 1e-9);
        assert!(f.rates("A", 1).is_none());
    }

    #[test]
    fn profile_must_sum_to_one() {
        let e = HourlyProfile::new(vec![0.5, 0.4]).unwrap_err();
        assert!(matches!(e, Error::ProfileSum(_)));
        let e = HourlyProfile::new(vec![0.49, 0.49]).unwrap_err();
        assert_eq!(e.to_string(), "profile sum 0.98 ≠ 1");
    }

    #[test]
    fn location_mismatch_rejected() {
        let h = hist(2, &[("A", &[10, 10]), ("B", &[5, 5])]);
        let mut obs = ObservedArrivals::empty(1);
        obs.push_day([("A".to_string(), vec![10])].into()).unwrap();
        let e = build_forecast(&h, &obs, &HourlyProfile::new(vec![1.0]).unwrap()).unwrap_err();
        assert!(matches!(e, Error::InconsistentLocations(_)));
    }

    #[test]
    fn zero_reference_days_fall_back_to_unit_scale() {
        let h = hist(2, &[("A", &[0, 50])]);
        let mut obs = ObservedArrivals::empty(1);
        obs.push_day([("A".to_string(), vec![0])].into()).unwrap();
        let f = build_forecast(&h, &obs, &HourlyProfile::new(vec![1.0]).unwrap()).unwrap();
        assert_eq!(f.scaling_factor("A"), Some(1.0));
        assert_eq!(f.daily_total("A", 2), Some(50.0));
    }

    #[test]
    fn realized_counts() {
        assert_eq!(realize_arrivals(&[0.0, 0.0, 0.0], 99), vec![0, 0, 0]);
        assert_eq!(realize_arrivals(&[3.0, 7.5], 5), realize_arrivals(&[3.0, 7.5], 5));
        for seed in 0..200 {
            let c = realize_arrivals(&[1000.0], seed)[0];
            assert!((900..=1100).contains(&c), "seed {seed}: {c}");
        }
    }
}
