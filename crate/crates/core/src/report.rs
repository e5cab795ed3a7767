//! Fixed-versus-dynamic comparison runs and the files they produce.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ResultExt};
use crate::planner::{run_horizon, HorizonLedger, LedgerRow, Mode, Scenario};
use crate::resource::Resource;
use crate::scenario::{read_csv, write_csv};
use crate::scoring::WaitBand;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    Early,
    ElectionDay,
}

impl Period {
    pub const ALL: [Period; 2] = [Period::Early, Period::ElectionDay];

    pub fn of(day: usize, horizon: usize) -> Self {
        if day == horizon {
            Period::ElectionDay
        } else {
            Period::Early
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Period::Early => "early",
            Period::ElectionDay => "election_day",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub mode: Mode,
    pub period: Period,
    pub band: String,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilizationRow {
    pub mode: Mode,
    pub period: Period,
    pub resource: Resource,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceRow {
    pub mode: Mode,
    pub resource: Resource,
    pub machine_days: u64,
}

/// A location-day where the dynamic plan used more of some machine than the
/// fixed plan and landed in a better wait band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HotspotRow {
    pub location: String,
    pub day: usize,
    pub fixed_pollpads: u32,
    pub fixed_bmds: u32,
    pub fixed_scanners: u32,
    pub fixed_band: String,
    pub dynamic_pollpads: u32,
    pub dynamic_bmds: u32,
    pub dynamic_scanners: u32,
    pub dynamic_band: String,
}

const HISTOGRAM_HEADER: [&str; 4] = ["mode", "period", "band", "fraction"];
const UTILIZATION_HEADER: [&str; 4] = ["mode", "period", "resource", "mean"];
const RESOURCES_HEADER: [&str; 3] = ["mode", "resource", "machine_days"];
const HOTSPOT_HEADER: [&str; 10] = [
    "location",
    "day",
    "fixed_pollpads",
    "fixed_bmds",
    "fixed_scanners",
    "fixed_band",
    "dynamic_pollpads",
    "dynamic_bmds",
    "dynamic_scanners",
    "dynamic_band",
];

/// Aggregated comparison, rows in a fixed order: mode, period, band or resource.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComparisonReport {
    pub histogram: Vec<HistogramRow>,
    pub utilization: Vec<UtilizationRow>,
    pub resources: Vec<ResourceRow>,
    pub hotspots: Vec<HotspotRow>,
}

impl ComparisonReport {
    /// Periods without any open location-day are left out of the histogram
    /// and utilization tables.
    pub fn from_ledgers(fixed: &HorizonLedger, dynamic: &HorizonLedger, horizon: usize) -> Self {
        let mut report = ComparisonReport::default();
        for ledger in [fixed, dynamic] {
            let mode = ledger.mode;
            for period in Period::ALL {
                let rows: Vec<&LedgerRow> = ledger.rows().filter(|r| Period::of(r.day, horizon) == period).collect();
                if rows.is_empty() {
                    continue;
                }
                let mut counts = [0usize; 6];
                for r in &rows {
                    counts[WaitBand::of(r.robust_wait_min).index()] += 1;
                }
                for band in WaitBand::ALL {
                    report.histogram.push(HistogramRow {
                        mode,
                        period,
                        band: band.label().to_string(),
                        fraction: counts[band.index()] as f64 / rows.len() as f64,
                    });
                }
                for resource in Resource::ALL {
                    report.utilization.push(UtilizationRow {
                        mode,
                        period,
                        resource,
                        mean: weighted_utilization(&rows, resource),
                    });
                }
            }
            for resource in Resource::ALL {
                report.resources.push(ResourceRow {
                    mode,
                    resource,
                    machine_days: ledger.rows().map(|r| r.combo().get(resource) as u64).sum(),
                });
            }
        }

        for d in dynamic.rows() {
            let Some(f) = fixed.rows().find(|f| f.day == d.day && f.location == d.location) else {
                continue;
            };
            let (fb, db) = (WaitBand::of(f.robust_wait_min), WaitBand::of(d.robust_wait_min));
            let more = Resource::ALL.iter().any(|&r| d.combo().get(r) > f.combo().get(r));
            if more && db.index() < fb.index() {
                report.hotspots.push(HotspotRow {
                    location: d.location.clone(),
                    day: d.day,
                    fixed_pollpads: f.pollpads,
                    fixed_bmds: f.bmds,
                    fixed_scanners: f.scanners,
                    fixed_band: fb.label().to_string(),
                    dynamic_pollpads: d.pollpads,
                    dynamic_bmds: d.bmds,
                    dynamic_scanners: d.scanners,
                    dynamic_band: db.label().to_string(),
                });
            }
        }
        report
    }

    pub fn fraction(&self, mode: Mode, period: Period, band: WaitBand) -> Option<f64> {
        self.histogram
            .iter()
            .find(|h| h.mode == mode && h.period == period && h.band == band.label())
            .map(|h| h.fraction)
    }

    pub fn mean_utilization(&self, mode: Mode, period: Period, resource: Resource) -> Option<f64> {
        self.utilization
            .iter()
            .find(|u| u.mode == mode && u.period == period && u.resource == resource)
            .map(|u| u.mean)
    }

    pub fn machine_days(&self, mode: Mode, resource: Resource) -> u64 {
        self.resources
            .iter()
            .find(|r| r.mode == mode && r.resource == resource)
            .map_or(0, |r| r.machine_days)
    }

    pub fn total_machine_days(&self, mode: Mode) -> u64 {
        Resource::ALL.iter().map(|&r| self.machine_days(mode, r)).sum()
    }
}

/// Busy share over all machines of a type, weighting each location-day by its machine count.
fn weighted_utilization(rows: &[&LedgerRow], resource: Resource) -> f64 {
    let machines: f64 = rows.iter().map(|r| r.combo().get(resource) as f64).sum();
    if machines == 0.0 {
        return 0.0;
    }
    rows.iter()
        .map(|r| r.utilization()[resource] * r.combo().get(resource) as f64)
        .sum::<f64>()
        / machines
}

/// Both replays of one scenario and their aggregate.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub report: ComparisonReport,
    pub fixed: HorizonLedger,
    pub dynamic: HorizonLedger,
}

/// Replays the scenario in both modes with the same realized demand.
pub fn run_compare(scenario: &Scenario, seed: u64) -> Result<Comparison> {
    let fixed = run_horizon(scenario, Mode::Fixed, seed).context(|| "fixed mode".to_string())?;
    let dynamic = run_horizon(scenario, Mode::Dynamic, seed).context(|| "dynamic mode".to_string())?;
    let report = ComparisonReport::from_ledgers(&fixed, &dynamic, scenario.inputs.horizon());
    Ok(Comparison { report, fixed, dynamic })
}

pub const REPORT_FILES: [&str; 7] = [
    "histogram.csv",
    "utilization.csv",
    "resources.csv",
    "hotspots.csv",
    "plan.json",
    "ledger.ndjson",
    "ledger_fixed.ndjson",
];

/// Writes the report tables, the executed dynamic plan and both ledgers.
pub fn emit_reports(report: &ComparisonReport, fixed: &HorizonLedger, dynamic: &HorizonLedger, outdir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let path = |name: &str| outdir.join(name);
    write_csv(&path("histogram.csv"), &HISTOGRAM_HEADER, &report.histogram)?;
    write_csv(&path("utilization.csv"), &UTILIZATION_HEADER, &report.utilization)?;
    write_csv(&path("resources.csv"), &RESOURCES_HEADER, &report.resources)?;
    write_csv(&path("hotspots.csv"), &HOTSPOT_HEADER, &report.hotspots)?;
    write_text(&path("plan.json"), &dynamic.executed.to_json())?;
    write_text(&path("ledger.ndjson"), &dynamic.to_ndjson())?;
    write_text(&path("ledger_fixed.ndjson"), &fixed.to_ndjson())?;
    Ok(REPORT_FILES.iter().map(|n| path(n)).collect())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads the four report tables back from `outdir`.
pub fn load_report(outdir: &Path) -> Result<ComparisonReport> {
    Ok(ComparisonReport {
        histogram: read_rows(&outdir.join("histogram.csv"))?,
        utilization: read_rows(&outdir.join("utilization.csv"))?,
        resources: read_rows(&outdir.join("resources.csv"))?,
        hotspots: read_rows(&outdir.join("hotspots.csv"))?,
    })
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    Ok(read_csv(path)?.into_iter().map(|(_, r)| r).collect())
}
