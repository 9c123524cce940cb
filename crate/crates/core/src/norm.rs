use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two coordinates closer than this count as equal under L0 (half a step of
/// an 8-bit pixel grid).
pub const L0_TOLERANCE: f64 = 1.0 / 510.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Linf,
    L0,
    L1,
    L2,
}

impl Norm {
    /// Distance between two equal-length vectors.
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            Norm::Linf => diffs.fold(0.0, f64::max),
            Norm::L0 => diffs.filter(|&d| d > L0_TOLERANCE).count() as f64,
            Norm::L1 => diffs.sum(),
            Norm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::Linf => "linf",
            Norm::L0 => "l0",
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        })
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linf" => Ok(Norm::Linf),
            "l0" => Ok(Norm::L0),
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            other => Err(Error::Config(format!("unknown norm `{other}`"))),
        }
    }
}

/// Number of coordinates that differ by more than [`L0_TOLERANCE`].
pub fn l0_distance(a: &[f64], b: &[f64]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::Dimension(a.len(), b.len()));
    }
    Ok(Norm::L0.distance(a, b) as usize)
}

pub fn linf_distance(a: &[f64], b: &[f64]) -> f64 {
    Norm::Linf.distance(a, b)
}
