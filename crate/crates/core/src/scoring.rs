//! Indifference-zone scores: piecewise-constant maps from robust wait to [0, 1].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Waits below `upper_min` (and at or above the previous band's bound) score `score`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneBand {
    pub upper_min: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndifferenceZoneSpec {
    bands: Vec<ZoneBand>,
    terminal_score: f64,
}

impl IndifferenceZoneSpec {
    pub fn new(bands: Vec<ZoneBand>, terminal_score: f64) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::invalid("indifference zones need at least one band"));
        }
        if !(bands[0].upper_min > 0.0) {
            return Err(Error::invalid("first zone threshold must be positive"));
        }
        let mut prev_upper = 0.0;
        let mut prev_score = 1.0;
        for b in &bands {
            if !b.upper_min.is_finite() || b.upper_min <= prev_upper && prev_upper > 0.0 {
                return Err(Error::invalid("zone thresholds must be finite and strictly increasing"));
            }
            if !(0.0..=1.0).contains(&b.score) || b.score > prev_score {
                return Err(Error::invalid("zone scores must lie in [0,1] and not increase"));
            }
            prev_upper = b.upper_min;
            prev_score = b.score;
        }
        if !(0.0..=terminal_score.min(prev_score)).contains(&terminal_score) {
            return Err(Error::invalid("terminal score must lie in [0,1] and not exceed the last band"));
        }
        Ok(Self { bands, terminal_score })
    }

    pub fn bands(&self) -> &[ZoneBand] {
        &self.bands
    }

    pub fn terminal_score(&self) -> f64 {
        self.terminal_score
    }

    /// Every score these zones can produce, descending.
    pub fn score_levels(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.bands.iter().map(|b| b.score).collect();
        v.push(self.terminal_score);
        v.dedup();
        v
    }
}

/// <30 → 1.0, 30–45 → 0.8, 45–60 → 0.6, 60–90 → 0.4, 90–150 → 0.2, otherwise 0.
impl Default for IndifferenceZoneSpec {
    fn default() -> Self {
        let bands = [(30.0, 1.0), (45.0, 0.8), (60.0, 0.6), (90.0, 0.4), (150.0, 0.2)]
            .into_iter()
            .map(|(upper_min, score)| ZoneBand { upper_min, score })
            .collect();
        Self::new(bands, 0.0).expect("default zones are valid")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ZoneEntry {
    Band(ZoneBand),
    Terminal { terminal_score: f64 },
}

impl Serialize for IndifferenceZoneSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut entries: Vec<ZoneEntry> = self.bands.iter().copied().map(ZoneEntry::Band).collect();
        entries.push(ZoneEntry::Terminal {
            terminal_score: self.terminal_score,
        });
        entries.serialize(s)
    }
}

impl<'de> Deserialize<'de> for IndifferenceZoneSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let entries = Vec::<ZoneEntry>::deserialize(d)?;
        let mut bands = Vec::new();
        let mut terminal = None;
        for e in entries {
            match (e, terminal) {
                (ZoneEntry::Band(b), None) => bands.push(b),
                (ZoneEntry::Terminal { terminal_score }, None) => terminal = Some(terminal_score),
                (_, Some(_)) => return Err(serde::de::Error::custom("terminal score must be the last zone entry")),
            }
        }
        let terminal = terminal.ok_or_else(|| serde::de::Error::custom("missing terminal score"))?;
        IndifferenceZoneSpec::new(bands, terminal).map_err(serde::de::Error::custom)
    }
}

pub fn score_of_wait(wait: f64, spec: &IndifferenceZoneSpec) -> f64 {
    spec.bands
        .iter()
        .find(|b| wait < b.upper_min)
        .map_or(spec.terminal_score, |b| b.score)
}

/// The six reporting bands for waiting times.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WaitBand {
    #[serde(rename = "<30")]
    Under30,
    #[serde(rename = "30-45")]
    From30To45,
    #[serde(rename = "45-60")]
    From45To60,
    #[serde(rename = "60-90")]
    From60To90,
    #[serde(rename = "90-150")]
    From90To150,
    #[serde(rename = ">=150")]
    AtLeast150,
}

impl WaitBand {
    pub const ALL: [WaitBand; 6] = [
        WaitBand::Under30,
        WaitBand::From30To45,
        WaitBand::From45To60,
        WaitBand::From60To90,
        WaitBand::From90To150,
        WaitBand::AtLeast150,
    ];

    pub fn of(wait: f64) -> Self {
        match wait {
            w if w < 30.0 => WaitBand::Under30,
            w if w < 45.0 => WaitBand::From30To45,
            w if w < 60.0 => WaitBand::From45To60,
            w if w < 90.0 => WaitBand::From60To90,
            w if w < 150.0 => WaitBand::From90To150,
            _ => WaitBand::AtLeast150,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            WaitBand::Under30 => "<30",
            WaitBand::From30To45 => "30-45",
            WaitBand::From45To60 => "45-60",
            WaitBand::From60To90 => "60-90",
            WaitBand::From90To150 => "90-150",
            WaitBand::AtLeast150 => ">=150",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.label() == label)
    }
}

impl fmt::Display for WaitBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lookup() {
        let spec = IndifferenceZoneSpec::default();
        assert_eq!(score_of_wait(20.0, &spec), 1.0);
        assert_eq!(score_of_wait(40.0, &spec), 0.8);
        assert_eq!(score_of_wait(200.0, &spec), 0.0);
        assert_eq!(score_of_wait(30.0, &spec), 0.8);
        assert_eq!(score_of_wait(0.0, &spec), 1.0);
        assert_eq!(spec.score_levels(), vec![1.0, 0.8, 0.6, 0.4, 0.2, 0.0]);
    }

    #[test]
    fn invalid_specs() {
        let b = |u, s| ZoneBand { upper_min: u, score: s };
        assert!(IndifferenceZoneSpec::new(vec![b(0.0, 1.0)], 0.0).is_err());
        assert!(IndifferenceZoneSpec::new(vec![b(10.0, 0.5), b(20.0, 0.6)], 0.0).is_err());
        assert!(IndifferenceZoneSpec::new(vec![b(10.0, 1.0), b(10.0, 0.6)], 0.0).is_err());
        assert!(IndifferenceZoneSpec::new(vec![b(10.0, 1.0)], 1.5).is_err());
        assert!(IndifferenceZoneSpec::new(vec![], 0.0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let spec = IndifferenceZoneSpec::default();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.starts_with(r#"[{"upper_min":30.0,"score":1.0}"#));
        assert!(json.ends_with(r#"{"terminal_score":0.0}]"#));
        let back: IndifferenceZoneSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        assert!(serde_json::from_str::<IndifferenceZoneSpec>(r#"[{"upper_min":30,"score":1}]"#).is_err());
    }

    #[test]
    fn report_bands() {
        assert_eq!(WaitBand::of(29.999), WaitBand::Under30);
        assert_eq!(WaitBand::of(30.0), WaitBand::From30To45);
        assert_eq!(WaitBand::of(149.0), WaitBand::From90To150);
        assert_eq!(WaitBand::of(150.0), WaitBand::AtLeast150);
        for b in WaitBand::ALL {
            assert_eq!(WaitBand::parse(b.label()), Some(b));
        }
    }
}
