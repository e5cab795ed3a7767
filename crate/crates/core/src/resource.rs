use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The three machine types a polling location deploys, in voter-flow order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resource {
    /// Check-in devices (first station).
    PollPads,
    /// Ballot marking devices (second station).
    Bmds,
    /// Ballot scanners (third station).
    Scanners,
}

impl Resource {
    pub const ALL: [Resource; 3] = [Resource::PollPads, Resource::Bmds, Resource::Scanners];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Resource::PollPads => "pollpads",
            Resource::Bmds => "bmds",
            Resource::Scanners => "scanners",
        }
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Resource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pollpads" => Ok(Resource::PollPads),
            "bmds" => Ok(Resource::Bmds),
            "scanners" => Ok(Resource::Scanners),
            other => Err(Error::invalid(format!("unknown resource `{other}`"))),
        }
    }
}

/// One value per resource type.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PerResource<T> {
    pub pollpads: T,
    pub bmds: T,
    pub scanners: T,
}

impl<T> PerResource<T> {
    pub const fn new(pollpads: T, bmds: T, scanners: T) -> Self {
        Self {
            pollpads,
            bmds,
            scanners,
        }
    }

    pub fn from_fn(mut f: impl FnMut(Resource) -> T) -> Self {
        Self {
            pollpads: f(Resource::PollPads),
            bmds: f(Resource::Bmds),
            scanners: f(Resource::Scanners),
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> PerResource<U> {
        PerResource {
            pollpads: f(&self.pollpads),
            bmds: f(&self.bmds),
            scanners: f(&self.scanners),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Resource, &T)> {
        Resource::ALL.into_iter().map(move |r| (r, &self[r]))
    }
}

impl<T: Clone> PerResource<T> {
    pub fn splat(value: T) -> Self {
        Self {
            pollpads: value.clone(),
            bmds: value.clone(),
            scanners: value,
        }
    }
}

impl<T> Index<Resource> for PerResource<T> {
    type Output = T;

    fn index(&self, r: Resource) -> &T {
        match r {
            Resource::PollPads => &self.pollpads,
            Resource::Bmds => &self.bmds,
            Resource::Scanners => &self.scanners,
        }
    }
}

impl<T> IndexMut<Resource> for PerResource<T> {
    fn index_mut(&mut self, r: Resource) -> &mut T {
        match r {
            Resource::PollPads => &mut self.pollpads,
            Resource::Bmds => &mut self.bmds,
            Resource::Scanners => &mut self.scanners,
        }
    }
}

impl PerResource<u32> {
    pub fn total(&self) -> u64 {
        self.pollpads as u64 + self.bmds as u64 + self.scanners as u64
    }
}

/// Machines of each type assigned to one location for one day.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ResourceCombination {
    pub pollpads: u32,
    pub bmds: u32,
    pub scanners: u32,
}

impl ResourceCombination {
    pub const fn new(pollpads: u32, bmds: u32, scanners: u32) -> Self {
        Self {
            pollpads,
            bmds,
            scanners,
        }
    }

    pub fn get(&self, r: Resource) -> u32 {
        match r {
            Resource::PollPads => self.pollpads,
            Resource::Bmds => self.bmds,
            Resource::Scanners => self.scanners,
        }
    }

    pub fn counts(&self) -> PerResource<u32> {
        PerResource::new(self.pollpads, self.bmds, self.scanners)
    }

    pub fn servers(&self) -> [u32; 3] {
        [self.pollpads, self.bmds, self.scanners]
    }

    /// Same combination with one more machine of type `r`.
    pub fn with_extra(&self, r: Resource) -> Self {
        let mut c = *self;
        match r {
            Resource::PollPads => c.pollpads += 1,
            Resource::Bmds => c.bmds += 1,
            Resource::Scanners => c.scanners += 1,
        }
        c
    }
}

impl From<PerResource<u32>> for ResourceCombination {
    fn from(p: PerResource<u32>) -> Self {
        Self::new(p.pollpads, p.bmds, p.scanners)
    }
}

impl fmt::Display for ResourceCombination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.pollpads, self.bmds, self.scanners)
    }
}

impl FromStr for ResourceCombination {
    type Err = Error;

    /// Parses `p,b,s`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::invalid(format!("expected `p,b,s`, got `{s}`")));
        }
        let mut v = [0u32; 3];
        for (slot, part) in v.iter_mut().zip(&parts) {
            *slot = part
                .parse()
                .map_err(|_| Error::invalid(format!("bad machine count `{part}`")))?;
        }
        Ok(Self::new(v[0], v[1], v[2]))
    }
}
