use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resource::{PerResource, Resource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceFamily {
    Deterministic,
    Exponential,
    Lognormal,
}

/// Service-time law of one station, in minutes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageService {
    pub family: ServiceFamily,
    pub mean_min: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<f64>,
}

impl StageService {
    pub fn deterministic(mean_min: f64) -> Self {
        Self {
            family: ServiceFamily::Deterministic,
            mean_min,
            cv: None,
        }
    }

    pub fn exponential(mean_min: f64) -> Self {
        Self {
            family: ServiceFamily::Exponential,
            mean_min,
            cv: None,
        }
    }

    pub fn lognormal(mean_min: f64, cv: f64) -> Self {
        Self {
            family: ServiceFamily::Lognormal,
            mean_min,
            cv: Some(cv),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean_min.is_finite() || self.mean_min < 0.0 {
            return Err(Error::invalid(format!("service mean {} must be finite and >= 0", self.mean_min)));
        }
        // A zero mean is only meaningful as an instantaneous pass-through station.
        if self.mean_min == 0.0 && self.family != ServiceFamily::Deterministic {
            return Err(Error::invalid("a zero service mean requires the deterministic family"));
        }
        match (self.family, self.cv) {
            (_, Some(cv)) if !cv.is_finite() || cv < 0.0 => {
                Err(Error::invalid(format!("coefficient of variation {cv} must be >= 0")))
            }
            (ServiceFamily::Deterministic, Some(cv)) if cv != 0.0 => {
                Err(Error::invalid("deterministic service cannot carry a coefficient of variation"))
            }
            (ServiceFamily::Lognormal, None) => {
                Err(Error::invalid("lognormal service needs a coefficient of variation"))
            }
            _ => Ok(()),
        }
    }

    pub(crate) fn sampler(&self) -> Sampler {
        match self.family {
            ServiceFamily::Deterministic => Sampler::Fixed(self.mean_min),
            ServiceFamily::Exponential => Sampler::Exp(Exp::new(1.0 / self.mean_min).expect("positive mean")),
            ServiceFamily::Lognormal => {
                let cv = self.cv.unwrap_or(0.0);
                if cv == 0.0 {
                    return Sampler::Fixed(self.mean_min);
                }
                let sigma2 = (1.0 + cv * cv).ln();
                let mu = self.mean_min.ln() - sigma2 / 2.0;
                Sampler::LogNormal(LogNormal::new(mu, sigma2.sqrt()).expect("finite parameters"))
            }
        }
    }
}

/// Service laws of the check-in, ballot-marking and scanning stations.
pub type ServiceTimeConfig = PerResource<StageService>;

/// Check-in lognormal 1 min (cv 0.5), ballot marking lognormal 5 min (cv 0.4),
/// scanning a fixed 0.5 min.
pub fn default_services() -> ServiceTimeConfig {
    PerResource::new(
        StageService::lognormal(1.0, 0.5),
        StageService::lognormal(5.0, 0.4),
        StageService::deterministic(0.5),
    )
}

pub fn validate_services(cfg: &ServiceTimeConfig) -> Result<()> {
    for r in Resource::ALL {
        cfg[r]
            .validate()
            .map_err(|e| e.context(format!("{r} service")))?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub(crate) enum Sampler {
    Fixed(f64),
    Exp(Exp<f64>),
    LogNormal(LogNormal<f64>),
}

impl Sampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Fixed(v) => *v,
            Sampler::Exp(d) => d.sample(rng),
            Sampler::LogNormal(d) => d.sample(rng),
        }
    }
}
