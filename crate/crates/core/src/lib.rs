//! Essay-level empathy and distress regression.
//!
//! The crate is organised around the flow of a shared-task run:
//!
//! * [`dataset`] parses the tab-separated essay tables and exposes typed records.
//! * [`encoders`] turns essays into embeddings, trains an affine regression head per
//!   target and emits clamped [`encoders::PredictionVector`]s.
//! * [`ensemble`] stacks the per-model predictions with one of four combiners
//!   (mean, least squares, epsilon-SVR, gradient-boosted trees).
//! * [`metrics`] scores predictions with Pearson's r and its empathy/distress average.
//! * [`pipeline`] wires everything together from a declarative TOML run configuration.
//!
//! Heavy transformer backbones live in a separate crate and plug into
//! [`encoders::EncoderRegistry`]; this crate ships a closed-form `toy` encoder so the
//! whole pipeline runs at desk scale.

pub mod dataset;
pub mod encoders;
pub mod ensemble;
pub mod fingerprint;
pub mod metrics;
pub mod pipeline;
pub mod synthetic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use fingerprint::Fingerprint;

/// The two regression targets of the essay track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Empathy,
    Distress,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Empathy, Target::Distress];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Empathy => "empathy",
            Target::Distress => "distress",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "empathy" => Ok(Target::Empathy),
            "distress" => Ok(Target::Distress),
            other => Err(format!("unknown target `{other}` (expected empathy or distress)")),
        }
    }
}

/// Closed interval of valid gold and predicted scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRange {
    pub lo: f64,
    pub hi: f64,
}

impl ScoreRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self, String> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(format!("invalid score range [{lo}, {hi}]"));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, v: f64) -> bool {
        v.is_finite() && v >= self.lo && v <= self.hi
    }

    /// Clamps into the range. Non-finite values map to the midpoint.
    pub fn clamp(&self, v: f64) -> f64 {
        if v.is_nan() {
            return 0.5 * (self.lo + self.hi);
        }
        v.clamp(self.lo, self.hi)
    }
}

impl Default for ScoreRange {
    fn default() -> Self {
        Self { lo: 1.0, hi: 7.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_maps_outliers_to_bounds() {
        let r = ScoreRange::default();
        assert_eq!(r.clamp(9.3), 7.0);
        assert_eq!(r.clamp(-2.0), 1.0);
        assert_eq!(r.clamp(f64::INFINITY), 7.0);
        assert_eq!(r.clamp(f64::NAN), 4.0);
        assert_eq!(r.clamp(3.25), 3.25);
    }

    #[test]
    fn range_rejects_inverted_bounds() {
        assert!(ScoreRange::new(7.0, 1.0).is_err());
        assert!(ScoreRange::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn target_round_trips_through_str() {
        for t in Target::ALL {
            assert_eq!(t.as_str().parse::<Target>().unwrap(), t);
        }
        assert!("anger".parse::<Target>().is_err());
    }
}
