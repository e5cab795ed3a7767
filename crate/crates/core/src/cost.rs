//! Sites, pairwise transfer legs and the money cost of moving machines.
//!
//! Polling locations may only exchange machines with peers in their own
//! commission district; legs between districts are priced at infinity. The
//! warehouse reaches every site.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resource::PerResource;

pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::invalid(format!("coordinates ({lat}, {lon}) out of range")));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Great-circle distance in kilometres.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    PollingLocation,
    Warehouse,
}

impl fmt::Display for SiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SiteKind::PollingLocation => "polling_location",
            SiteKind::Warehouse => "warehouse",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub id: String,
    pub name: String,
    pub point: GeoPoint,
    pub district: u32,
    /// Layout limit per machine type.
    pub caps: PerResource<u32>,
    pub registered: u64,
    pub kind: SiteKind,
}

impl SiteRecord {
    pub fn is_warehouse(&self) -> bool {
        self.kind == SiteKind::Warehouse
    }
}

/// Money parameters for transfers and deployment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParameters {
    /// Money per kilometre of a transfer leg.
    pub per_km_rate: f64,
    /// Money per sealed module used in a transfer.
    pub module_cost: f64,
    /// Machines per module.
    pub module_capacity: u32,
    /// Money per transferred machine for the post-transfer examination.
    pub examination_cost: f64,
    /// Money per deployed machine per voting day.
    pub deployment_cost: PerResource<f64>,
    /// Fixed money per transfer order.
    pub dispatch_cost: f64,
}

impl Default for CostParameters {
    fn default() -> Self {
        Self {
            per_km_rate: 1.0,
            module_cost: 10.0,
            module_capacity: 4,
            examination_cost: 2.0,
            deployment_cost: PerResource::splat(1.0),
            dispatch_cost: 5.0,
        }
    }
}

impl CostParameters {
    pub fn validate(&self) -> Result<()> {
        let money = [
            self.per_km_rate,
            self.module_cost,
            self.examination_cost,
            self.dispatch_cost,
            self.deployment_cost.pollpads,
            self.deployment_cost.bmds,
            self.deployment_cost.scanners,
        ];
        if money.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("cost parameters must be finite and non-negative"));
        }
        if self.module_capacity == 0 {
            return Err(Error::invalid("module capacity must be at least 1"));
        }
        Ok(())
    }
}

/// Money per transfer leg between every pair of sites; infinite across districts.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    districts: Vec<Option<u32>>,
    entries: Vec<f64>,
    warehouse: usize,
}

impl CostMatrix {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn warehouse(&self) -> usize {
        self.warehouse
    }

    pub fn warehouse_id(&self) -> &str {
        &self.ids[self.warehouse]
    }

    /// District of a polling location, `None` for the warehouse.
    pub fn district(&self, i: usize) -> Option<u32> {
        self.districts[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.ids.len() + j]
    }

    pub fn leg(&self, from: &str, to: &str) -> Option<f64> {
        Some(self.get(self.index_of(from)?, self.index_of(to)?))
    }
}

pub fn build_cost_matrix(sites: &[SiteRecord], params: &CostParameters) -> Result<CostMatrix> {
    params.validate()?;
    let mut seen = BTreeSet::new();
    for s in sites {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::DuplicateSite(s.id.clone()));
        }
    }
    let warehouses: Vec<usize> = (0..sites.len()).filter(|&i| sites[i].is_warehouse()).collect();
    let warehouse = match warehouses.as_slice() {
        [] => return Err(Error::MissingWarehouse),
        [w] => *w,
        _ => return Err(Error::invalid("more than one warehouse")),
    };
    if sites.len() < 2 {
        return Err(Error::invalid("at least one polling location is required"));
    }
    for s in sites.iter().filter(|s| !s.is_warehouse()) {
        if s.caps.iter().any(|(_, &c)| c == 0) {
            return Err(Error::invalid(format!("{}: layout caps must be at least 1", s.id)));
        }
    }

    let n = sites.len();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let local = i == warehouse || j == warehouse || sites[i].district == sites[j].district;
            let v = if local {
                haversine_km(sites[i].point, sites[j].point) * params.per_km_rate
            } else {
                f64::INFINITY
            };
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    Ok(CostMatrix {
        ids: sites.iter().map(|s| s.id.clone()).collect(),
        index: sites.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect(),
        districts: sites
            .iter()
            .map(|s| (!s.is_warehouse()).then_some(s.district))
            .collect(),
        entries,
        warehouse,
    })
}

/// Packing, leg, examination and dispatch money for one order of `machines`.
pub fn transfer_order_cost(machines: u32, leg_cost: f64, params: &CostParameters) -> Result<f64> {
    if !leg_cost.is_finite() {
        return Err(Error::ForbiddenLeg);
    }
    Ok(order_cost_unchecked(machines, leg_cost, params))
}

pub(crate) fn order_cost_unchecked(machines: u32, leg_cost: f64, params: &CostParameters) -> f64 {
    let modules = machines.div_ceil(params.module_capacity);
    modules as f64 * params.module_cost
        + leg_cost
        + machines as f64 * params.examination_cost
        + params.dispatch_cost
}

#[cfg(test)]
mod tests {
    use super::*;

    fn site(id: &str, lat: f64, lon: f64, district: u32, kind: SiteKind) -> SiteRecord {
        SiteRecord {
            id: id.into(),
            name: id.into(),
            point: GeoPoint::new(lat, lon).unwrap(),
            district,
            caps: PerResource::splat(3),
            registered: 100,
            kind,
        }
    }

    #[test]
    fn haversine_reference_points() {
        let a = GeoPoint::new(33.749, -84.388).unwrap();
        assert_eq!(haversine_km(a, a), 0.0);
        let d = haversine_km(GeoPoint::new(0.0, 0.0).unwrap(), GeoPoint::new(0.0, 180.0).unwrap());
        assert!((d - std::f64::consts::PI * 6371.0).abs() < 0.1);
        let b = GeoPoint::new(33.749, -84.288).unwrap();
        let small_angle = 111.195 * 0.1 * 33.749f64.to_radians().cos();
        assert!((haversine_km(a, b) - small_angle).abs() < 0.05);
    }

    #[test]
    fn geopoint_range() {
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -181.0).is_err());
    }

    #[test]
    fn matrix_locality() {
        let sites = vec![
            site("W", 33.75, -84.39, 0, SiteKind::Warehouse),
            site("A", 33.80, -84.40, 1, SiteKind::PollingLocation),
            site("B", 33.70, -84.30, 2, SiteKind::PollingLocation),
            site("C", 33.81, -84.41, 1, SiteKind::PollingLocation),
        ];
        let params = CostParameters {
            per_km_rate: 2.0,
            ..CostParameters::default()
        };
        let m = build_cost_matrix(&sites, &params).unwrap();
        assert!(m.leg("A", "B").unwrap().is_infinite());
        assert_eq!(m.leg("A", "A").unwrap(), 0.0);
        let wa = haversine_km(sites[0].point, sites[1].point) * 2.0;
        assert!((m.leg("W", "A").unwrap() - wa).abs() < 1e-12);
        assert!(m.leg("W", "B").unwrap().is_finite());
        assert!(m.leg("A", "C").unwrap().is_finite());
        assert_eq!(m.leg("C", "A"), m.leg("A", "C"));
    }

    #[test]
    fn matrix_errors() {
        let p = CostParameters::default();
        let dup = vec![
            site("W", 0.0, 0.0, 0, SiteKind::Warehouse),
            site("A", 0.0, 0.1, 1, SiteKind::PollingLocation),
            site("A", 0.0, 0.2, 1, SiteKind::PollingLocation),
        ];
        assert_eq!(build_cost_matrix(&dup, &p).unwrap_err().to_string(), "duplicate site: A");
        let none = vec![site("A", 0.0, 0.1, 1, SiteKind::PollingLocation)];
        assert!(matches!(build_cost_matrix(&none, &p).unwrap_err(), Error::MissingWarehouse));
    }

    #[test]
    fn order_cost_formula() {
        let params = CostParameters {
            per_km_rate: 1.0,
            module_cost: 10.0,
            module_capacity: 2,
            examination_cost: 2.0,
            deployment_cost: PerResource::splat(0.0),
            dispatch_cost: 0.0,
        };
        assert_eq!(transfer_order_cost(3, 5.0, &params).unwrap(), 31.0);
        let zero = CostParameters {
            per_km_rate: 0.0,
            module_cost: 0.0,
            module_capacity: 1,
            examination_cost: 0.0,
            deployment_cost: PerResource::splat(0.0),
            dispatch_cost: 0.0,
        };
        assert_eq!(transfer_order_cost(1, 0.0, &zero).unwrap(), 0.0);
        assert_eq!(
            transfer_order_cost(1, f64::INFINITY, &params).unwrap_err().to_string(),
            "forbidden transfer leg"
        );
    }
}
