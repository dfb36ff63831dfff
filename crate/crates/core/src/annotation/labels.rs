use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// A closed label vocabulary with a designated low-evidence value.
pub trait Label: Copy + Eq + Ord + Hash + fmt::Debug + Send + Sync + 'static {
    /// Every label, in the fixed enumeration order used by matrices.
    const ALL: &'static [Self];
    const LOW_EVIDENCE: Self;
    const AXIS: Axis;

    fn as_str(self) -> &'static str;

    fn index(self) -> usize {
        Self::ALL.iter().position(|&l| l == self).expect("label in ALL")
    }

    fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|l| l.as_str() == s)
    }
}

macro_rules! vocabulary {
    ($name:ident, $axis:expr, low = $low:ident, [$($variant:ident => $text:literal),+ $(,)?]) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl Label for $name {
            const ALL: &'static [Self] = &[$($name::$variant),+];
            const LOW_EVIDENCE: Self = $name::$low;
            const AXIS: Axis = $axis;

            fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Error> {
                <$name as Label>::parse(s).ok_or_else(|| {
                    Error::invalid(format!("`{s}` is not a {} label", $axis))
                })
            }
        }
    };
}

vocabulary!(ContextLabel, Axis::Context, low = LowVis, [
    PatrolVehicle => "PATROL_VEHICLE",
    Outdoor => "OUTDOOR",
    Indoor => "INDOOR",
    LowVis => "LOW_VIS",
]);

vocabulary!(ActivityLabel, Axis::Activity, low = Unknown, [
    Routine => "ROUTINE",
    FootPursuit => "FOOT_PURSUIT",
    HighActivity => "HIGH_ACTIVITY",
    Unknown => "UNKNOWN",
]);

/// Row order of the published context distribution and conditional tables.
pub const CONTEXT_TABLE_ORDER: [ContextLabel; 4] =
    [ContextLabel::Indoor, ContextLabel::Outdoor, ContextLabel::PatrolVehicle, ContextLabel::LowVis];

/// Column order of the published conditional-rate table.
pub const ACTIVITY_TABLE_ORDER: [ActivityLabel; 4] =
    [ActivityLabel::Routine, ActivityLabel::HighActivity, ActivityLabel::FootPursuit, ActivityLabel::Unknown];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Context,
    Activity,
}

impl Axis {
    pub fn vocabulary(self) -> Vec<&'static str> {
        match self {
            Axis::Context => ContextLabel::ALL.iter().map(|l| l.as_str()).collect(),
            Axis::Activity => ActivityLabel::ALL.iter().map(|l| l.as_str()).collect(),
        }
    }

    pub fn n_labels(self) -> usize {
        match self {
            Axis::Context => ContextLabel::ALL.len(),
            Axis::Activity => ActivityLabel::ALL.len(),
        }
    }

    pub fn low_evidence(self) -> &'static str {
        match self {
            Axis::Context => ContextLabel::LOW_EVIDENCE.as_str(),
            Axis::Activity => ActivityLabel::LOW_EVIDENCE.as_str(),
        }
    }

    /// Index of `label` in this axis' vocabulary.
    pub fn index_of(self, label: &str) -> Option<usize> {
        match self {
            Axis::Context => ContextLabel::parse(label).map(Label::index),
            Axis::Activity => ActivityLabel::parse(label).map(Label::index),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Context => "context",
            Axis::Activity => "activity",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "context" | "ctx" => Ok(Axis::Context),
            "activity" | "act" => Ok(Axis::Activity),
            _ => Err(Error::invalid(format!("unknown axis `{s}`"))),
        }
    }
}
