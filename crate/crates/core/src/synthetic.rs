//! A small synthetic county for demos and end-to-end checks: twelve polling
//! locations in three commission districts around one warehouse, eight of
//! them open for early voting, five early days plus election day.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::cost::{CostParameters, GeoPoint, SiteKind, SiteRecord};
use crate::demand::HourlyProfile;
use crate::error::{Error, Result};
use crate::planner::Scenario;
use crate::queueing::ReplicationPolicy;
use crate::resource::PerResource;
use crate::scoring::{IndifferenceZoneSpec, ZoneBand};
use crate::scenario::{build_scenario, write_csv, ScenarioConfig, SiteRow};

pub const HORIZON_DAYS: usize = 6;

/// Share of voters choosing early voting in the high and low scenarios.
pub const HIGH_EARLY_SHARE: f64 = 0.75;
pub const LOW_EARLY_SHARE: f64 = 0.45;

const CENTER: (f64, f64) = (33.75, -84.39);

/// Registered voters per district; the first entries are the early-voting sites.
const REGISTERED: [[u64; 4]; 3] = [[4200, 3600, 3000, 2400], [3900, 3300, 2700, 2100], [4500, 3000, 2600, 2000]];
const EARLY_PER_DISTRICT: [usize; 3] = [3, 3, 2];

/// Morning and evening peaks over twelve voting hours.
const PROFILE: [f64; 12] = [0.10, 0.09, 0.08, 0.07, 0.07, 0.07, 0.08, 0.08, 0.08, 0.09, 0.10, 0.09];

/// Sites (warehouse first) and the early-voting location ids.
pub fn county() -> (Vec<SiteRecord>, BTreeSet<String>) {
    let mut sites = vec![SiteRecord {
        id: "W".into(),
        name: "County Warehouse".into(),
        point: GeoPoint::new(CENTER.0, CENTER.1).expect("valid"),
        district: 0,
        caps: PerResource::default(),
        registered: 0,
        kind: SiteKind::Warehouse,
    }];
    let mut early = BTreeSet::new();
    for (d, regs) in REGISTERED.iter().enumerate() {
        let angle = (d as f64) * 2.0 * std::f64::consts::PI / 3.0;
        // District hubs about 12 km out; sites spread a few km around them.
        let hub = (CENTER.0 + 0.11 * angle.sin(), CENTER.1 + 0.13 * angle.cos());
        for (k, &registered) in regs.iter().enumerate() {
            let a = angle + k as f64 * std::f64::consts::FRAC_PI_2;
            let id = format!("D{}L{}", d + 1, k + 1);
            sites.push(SiteRecord {
                id: id.clone(),
                name: format!("District {} Site {}", d + 1, k + 1),
                point: GeoPoint::new(hub.0 + 0.025 * a.sin(), hub.1 + 0.03 * a.cos()).expect("valid"),
                district: d as u32 + 1,
                caps: PerResource::new(3, registered.div_ceil(280) as u32, 2),
                registered,
                kind: SiteKind::PollingLocation,
            });
            if k < EARLY_PER_DISTRICT[d] {
                early.insert(id);
            }
        }
    }
    (sites, early)
}

/// Money parameters in which staffing a deployed machine for a day is the
/// dominant recurring cost and a transfer costs roughly two machine-days.
pub fn cost_parameters() -> CostParameters {
    CostParameters {
        per_km_rate: 1.0,
        module_cost: 10.0,
        module_capacity: 4,
        examination_cost: 2.0,
        deployment_cost: PerResource::new(10.0, 25.0, 15.0),
        dispatch_cost: 5.0,
    }
}

/// Default zones with a stricter top band: full score needs a forecast robust
/// wait under 20 minutes, leaving room for realized demand above forecast.
pub fn zones() -> IndifferenceZoneSpec {
    let bands = [(20.0, 1.0), (30.0, 0.9), (45.0, 0.8), (60.0, 0.6), (90.0, 0.4), (150.0, 0.2)]
        .into_iter()
        .map(|(upper_min, score)| ZoneBand { upper_min, score })
        .collect();
    IndifferenceZoneSpec::new(bands, 0.0).expect("valid zones")
}

pub fn config(early_share: f64, replications: u32, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        sites: "sites.csv".into(),
        historical: None,
        hourly_profile: HourlyProfile::new(PROFILE.to_vec()).expect("profile sums to one"),
        horizon_days: HORIZON_DAYS,
        turnout_rate: 0.45,
        early_share,
        absentee: 0,
        early_day_weights: None,
        services: crate::queueing::default_services(),
        utilization_band: crate::queueing::default_band(),
        zones: zones(),
        fairness: None,
        auto_tighten: true,
        epsilon: 0.05,
        fleet: PerResource::new(30, 110, 20),
        reserve: PerResource::default(),
        cost: cost_parameters(),
        seed,
        replications: ReplicationPolicy::Fixed(replications),
        quantile: crate::queueing::DEFAULT_ROBUST_QUANTILE,
        scaling_bounds: Default::default(),
        limits: Default::default(),
    }
}

pub fn scenario(early_share: f64, replications: u32, seed: u64) -> Result<Scenario> {
    let (sites, early) = county();
    build_scenario(&config(early_share, replications, seed), sites, early, None)
}

/// Writes `sites.csv` and `config.json` into `dir`.
pub fn write_bundle(dir: &Path, cfg: &ScenarioConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (sites, early) = county();
    let rows: Vec<SiteRow> = sites.iter().map(|s| SiteRow::from_site(s, early.contains(&s.id))).collect();
    write_csv(&dir.join(&cfg.sites), &SiteRow::HEADER, &rows)?;
    let mut json = serde_json::to_string_pretty(cfg).expect("config serializes");
    json.push('\n');
    let path = dir.join("config.json");
    fs::write(&path, json).map_err(|e| Error::io(path, e))
}
