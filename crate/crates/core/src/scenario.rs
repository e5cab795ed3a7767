//! Scenario configuration files and the true demand they imply.
//!
//! A scenario bundle is a JSON config next to a sites CSV and, optionally, a
//! historical turnout CSV. Without one, the reference turnout is taken to be
//! the scenario's own daily totals, so forecasts start unbiased.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cost::{build_cost_matrix, CostParameters, GeoPoint, SiteKind, SiteRecord};
use crate::demand::{HistoricalTurnout, HourlyProfile, ObservedArrivals, ProfileSet, ScalingBounds};
use crate::error::{Error, Result};
use crate::optimizer::{FairnessBounds, SolverLimits};
use crate::planner::{Fairness, PlannerInputs, Scenario};
use crate::queueing::{
    default_band, validate_band, validate_services, EvaluationSettings, ReplicationPolicy, ServiceTimeConfig,
    UtilizationBand, DEFAULT_ROBUST_QUANTILE,
};
use crate::resource::PerResource;
use crate::scoring::IndifferenceZoneSpec;

fn default_quantile() -> f64 {
    DEFAULT_ROBUST_QUANTILE
}

fn default_epsilon() -> f64 {
    0.05
}

fn default_services() -> ServiceTimeConfig {
    crate::queueing::default_services()
}

/// Scenario settings as stored in `config.json`. Paths are relative to the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub sites: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub historical: Option<PathBuf>,
    pub hourly_profile: HourlyProfile,
    /// Voting days including election day.
    pub horizon_days: usize,
    pub turnout_rate: f64,
    pub early_share: f64,
    #[serde(default)]
    pub absentee: u64,
    /// Relative demand of each early day; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_day_weights: Option<Vec<f64>>,
    #[serde(default = "default_services")]
    pub services: ServiceTimeConfig,
    #[serde(default = "default_band")]
    pub utilization_band: UtilizationBand,
    #[serde(default)]
    pub zones: IndifferenceZoneSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fairness: Option<FairnessBounds>,
    /// Raise the lower score bound each night as far as it stays feasible.
    #[serde(default)]
    pub auto_tighten: bool,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub fleet: PerResource<u32>,
    #[serde(default)]
    pub reserve: PerResource<u32>,
    #[serde(default)]
    pub cost: CostParameters,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub replications: ReplicationPolicy,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
    #[serde(default)]
    pub scaling_bounds: ScalingBounds,
    #[serde(default)]
    pub limits: SolverLimits,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.turnout_rate) {
            return Err(Error::invalid(format!("turnout rate {} outside [0,1]", self.turnout_rate)));
        }
        if !(0.0..=1.0).contains(&self.early_share) {
            return Err(Error::invalid(format!("early share {} outside [0,1]", self.early_share)));
        }
        if self.horizon_days < 2 {
            return Err(Error::invalid("horizon must be at least 2 days"));
        }
        if let Some(w) = &self.early_day_weights {
            if w.len() != self.horizon_days - 1 {
                return Err(Error::invalid(format!(
                    "{} early-day weights for {} early days",
                    w.len(),
                    self.horizon_days - 1
                )));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::invalid("early-day weights must be >= 0 with a positive sum"));
            }
        }
        validate_services(&self.services)?;
        validate_band(&self.utilization_band)?;
        if let Some(b) = self.fairness {
            b.validate()?;
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::invalid("epsilon must be >= 0"));
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::invalid(format!("quantile {} outside (0,1)", self.quantile)));
        }
        self.cost.validate()
    }

    pub fn evaluation(&self) -> EvaluationSettings {
        EvaluationSettings {
            services: self.services,
            band: self.utilization_band,
            policy: self.replications,
            quantile: self.quantile,
        }
    }

    pub fn fairness_mode(&self) -> Fairness {
        if self.auto_tighten {
            Fairness::AutoTighten
        } else {
            Fairness::Fixed(self.fairness.unwrap_or_default())
        }
    }
}

/// Command-line adjustments applied after loading.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replications: Option<u32>,
    pub early_share: Option<f64>,
    pub epsilon: Option<f64>,
    pub band: Option<UtilizationBand>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.replications {
            cfg.replications = ReplicationPolicy::Fixed(n);
        }
        if let Some(s) = self.early_share {
            cfg.early_share = s;
        }
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        if let Some(b) = self.band {
            cfg.utilization_band = b;
        }
    }
}

/// One row of the sites CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteRow {
    pub id: String,
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    pub district: u32,
    pub kind: SiteKind,
    pub cap_pollpads: u32,
    pub cap_bmds: u32,
    pub cap_scanners: u32,
    pub registered: u64,
    /// Open on early days as well as election day.
    pub early_voting: bool,
}

impl SiteRow {
    pub const HEADER: [&'static str; 11] = [
        "id",
        "name",
        "lat",
        "lon",
        "district",
        "kind",
        "cap_pollpads",
        "cap_bmds",
        "cap_scanners",
        "registered",
        "early_voting",
    ];

    pub fn from_site(site: &SiteRecord, early_voting: bool) -> Self {
        Self {
            id: site.id.clone(),
            name: site.name.clone(),
            lat: site.point.lat(),
            lon: site.point.lon(),
            district: site.district,
            kind: site.kind,
            cap_pollpads: site.caps.pollpads,
            cap_bmds: site.caps.bmds,
            cap_scanners: site.caps.scanners,
            registered: site.registered,
            early_voting,
        }
    }

    fn to_site(&self) -> Result<SiteRecord> {
        Ok(SiteRecord {
            id: self.id.clone(),
            name: self.name.clone(),
            point: GeoPoint::new(self.lat, self.lon)?,
            district: self.district,
            caps: PerResource::new(self.cap_pollpads, self.cap_bmds, self.cap_scanners),
            registered: self.registered,
            kind: self.kind,
        })
    }
}

/// One row of the historical turnout CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoricalRow {
    pub location: String,
    pub day: usize,
    pub voters: u64,
}

/// Reads every record of a CSV file with its line number, reporting the
/// offending line on failure.
pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(u64, T)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let parse = |line: u64, e: csv::Error| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    };
    let headers = reader.headers().map_err(|e| parse(1, e))?.clone();
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse(line, e)
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = rec.deserialize(Some(&headers)).map_err(|e| parse(line, e))?;
        out.push((line, row));
    }
    Ok(out)
}

/// Writes `header` then one line per row; the header is written even with no rows.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    w.write_record(header).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{}: {other:?}", path.display())),
    }
}

/// Sites and the set of early-voting locations from a sites CSV.
pub fn load_sites(path: &Path) -> Result<(Vec<SiteRecord>, BTreeSet<String>)> {
    let rows: Vec<(u64, SiteRow)> = read_csv(path)?;
    let mut sites = Vec::with_capacity(rows.len());
    let mut early = BTreeSet::new();
    let mut seen = BTreeSet::new();
    for (line, row) in rows {
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if !seen.insert(row.id.clone()) {
            return Err(Error::DuplicateSite(row.id));
        }
        let site = row.to_site().map_err(|e| parse_err(e.to_string()))?;
        if !site.is_warehouse() && Some(0) == [site.caps.pollpads, site.caps.bmds, site.caps.scanners].into_iter().min() {
            return Err(parse_err(format!("{} must allow at least one machine of each type", site.id)));
        }
        if row.early_voting && !site.is_warehouse() {
            early.insert(site.id.clone());
        }
        sites.push(site);
    }
    Ok((sites, early))
}

pub fn load_historical(path: &Path, days: usize) -> Result<HistoricalTurnout> {
    let rows: Vec<(u64, HistoricalRow)> = read_csv(path)?;
    let mut totals: BTreeMap<String, Vec<Option<u64>>> = BTreeMap::new();
    for (line, row) in rows {
        if row.day == 0 || row.day > days {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("day {} outside 1..={days}", row.day),
            });
        }
        let slot = &mut totals.entry(row.location.clone()).or_insert_with(|| vec![None; days])[row.day - 1];
        if slot.replace(row.voters).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("duplicate entry for {} on day {}", row.location, row.day),
            });
        }
    }
    let mut full = BTreeMap::new();
    for (loc, row) in totals {
        let row: Option<Vec<u64>> = row.into_iter().collect();
        let row = row.ok_or_else(|| Error::invalid(format!("{}: {loc} is missing days", path.display())))?;
        full.insert(loc, row);
    }
    HistoricalTurnout::new(days, full)
}

/// Expected voters per polling location per day (`1..=D`, index 0 is day 1).
pub fn build_scenario_demand(
    cfg: &ScenarioConfig,
    sites: &[SiteRecord],
    early_eligible: &BTreeSet<String>,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let polling: Vec<&SiteRecord> = sites.iter().filter(|s| !s.is_warehouse()).collect();
    let registered: u64 = polling.iter().map(|s| s.registered).sum();
    if registered == 0 {
        return Err(Error::invalid("no registered voters"));
    }
    let voters = (cfg.turnout_rate * registered as f64).round() as u64;
    let in_person = voters.checked_sub(cfg.absentee).ok_or(Error::AbsenteeExceedsTurnout)?;
    let early_pool = (cfg.early_share * in_person as f64).round();
    let election_pool = in_person as f64 - early_pool;

    let d = cfg.horizon_days;
    let weights = cfg.early_day_weights.clone().unwrap_or_else(|| vec![1.0; d - 1]);
    let wsum: f64 = weights.iter().sum();
    let early_registered: u64 = polling
        .iter()
        .filter(|s| early_eligible.contains(&s.id))
        .map(|s| s.registered)
        .sum();
    if early_pool > 0.0 && early_registered == 0 {
        return Err(Error::invalid("early voting demand but no early-voting location with registered voters"));
    }

    let mut out = BTreeMap::new();
    for s in polling {
        let mut days = vec![0.0; d];
        if early_eligible.contains(&s.id) && early_pool > 0.0 {
            let share = early_pool * s.registered as f64 / early_registered as f64;
            for (t, w) in weights.iter().enumerate() {
                days[t] = share * w / wsum;
            }
        }
        days[d - 1] = election_pool * s.registered as f64 / registered as f64;
        out.insert(s.id.clone(), days);
    }
    Ok(out)
}

/// One row of an observed-arrivals CSV; `hour` counts from 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedRow {
    pub location: String,
    pub day: usize,
    pub hour: usize,
    pub count: u64,
}

/// One row of an inventory CSV; the warehouse appears under its own id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InventoryRow {
    pub site: String,
    pub pollpads: u32,
    pub bmds: u32,
    pub scanners: u32,
}

impl InventoryRow {
    pub const HEADER: [&'static str; 4] = ["site", "pollpads", "bmds", "scanners"];
}

/// Hourly counts for days `1..=k`; every listed location needs every day, missing hours count zero.
pub fn load_observed(path: &Path, hours: usize, locations: &BTreeSet<String>) -> Result<ObservedArrivals> {
    let rows: Vec<(u64, ObservedRow)> = read_csv(path)?;
    let mut counts: BTreeMap<String, Vec<Vec<u64>>> = locations.iter().map(|l| (l.clone(), Vec::new())).collect();
    for (line, row) in rows {
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let days = counts
            .get_mut(&row.location)
            .ok_or_else(|| parse_err(format!("unknown location {}", row.location)))?;
        if row.day == 0 || row.hour == 0 || row.hour > hours {
            return Err(parse_err(format!("day {} hour {} out of range", row.day, row.hour)));
        }
        if days.len() < row.day {
            days.resize(row.day, vec![0; hours]);
        }
        days[row.day - 1][row.hour - 1] += row.count;
    }
    let elapsed = counts.values().map(Vec::len).max().unwrap_or(0);
    for days in counts.values_mut() {
        days.resize(elapsed, vec![0; hours]);
    }
    if elapsed == 0 {
        return Ok(ObservedArrivals::empty(hours));
    }
    ObservedArrivals::new(hours, counts)
}

pub fn load_inventory(path: &Path, sites: &[SiteRecord]) -> Result<(BTreeMap<String, PerResource<u32>>, PerResource<u32>)> {
    let rows: Vec<(u64, InventoryRow)> = read_csv(path)?;
    let mut held = BTreeMap::new();
    let mut warehouse = None;
    for (line, row) in rows {
        let site = sites.iter().find(|s| s.id == row.site).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("unknown site {}", row.site),
        })?;
        let v = PerResource::new(row.pollpads, row.bmds, row.scanners);
        let dup = if site.is_warehouse() {
            warehouse.replace(v).is_some()
        } else {
            held.insert(row.site.clone(), v).is_some()
        };
        if dup {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("duplicate entry for {}", row.site),
            });
        }
    }
    Ok((held, warehouse.unwrap_or_default()))
}

/// A loaded bundle: the parsed config and the scenario built from it.
#[derive(Clone, Debug)]
pub struct LoadedScenario {
    pub config: ScenarioConfig,
    pub scenario: Scenario,
    pub base_dir: PathBuf,
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

/// Reads a config and its files, applies overrides and validates everything.
pub fn load_inputs(config_path: &Path, overrides: &Overrides) -> Result<LoadedScenario> {
    let mut config = load_config(config_path)?;
    overrides.apply(&mut config);
    let base_dir = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let (sites, early) = load_sites(&base_dir.join(&config.sites))?;
    let historical = match &config.historical {
        Some(p) => Some(load_historical(&base_dir.join(p), config.horizon_days)?),
        None => None,
    };
    let scenario = build_scenario(&config, sites, early, historical)?;
    Ok(LoadedScenario {
        config,
        scenario,
        base_dir,
    })
}

/// Assembles a scenario from already-parsed parts.
pub fn build_scenario(
    config: &ScenarioConfig,
    sites: Vec<SiteRecord>,
    early_eligible: BTreeSet<String>,
    historical: Option<HistoricalTurnout>,
) -> Result<Scenario> {
    config.validate()?;
    build_cost_matrix(&sites, &config.cost)?;
    let daily = build_scenario_demand(config, &sites, &early_eligible)?;
    let historical = match historical {
        Some(h) => h,
        None => {
            // Reference turnout: the scenario's own totals, with closed days at zero.
            let totals = daily
                .iter()
                .map(|(loc, days)| (loc.clone(), days.iter().map(|v| v.round() as u64).collect()))
                .collect();
            HistoricalTurnout::new(config.horizon_days, totals)?
        }
    };
    if historical.days() != config.horizon_days {
        return Err(Error::invalid(format!(
            "historical turnout covers {} days, horizon is {}",
            historical.days(),
            config.horizon_days
        )));
    }
    let profile = config.hourly_profile.clone();
    let truth = daily
        .iter()
        .map(|(loc, days)| (loc.clone(), days.iter().map(|&v| profile.spread(v)).collect()))
        .collect();
    let scenario = Scenario {
        inputs: PlannerInputs {
            sites,
            params: config.cost.clone(),
            historical,
            profiles: ProfileSet::from(profile),
            scaling: config.scaling_bounds,
            evaluation: config.evaluation(),
            zones: config.zones.clone(),
            fairness: config.fairness_mode(),
            epsilon: config.epsilon,
            limits: config.limits,
            early_eligible,
            seed: config.seed,
        },
        truth,
        fleet: config.fleet,
        reserve: config.reserve,
    };
    scenario.validate()?;
    Ok(scenario)
}
