//! Calibrators, lattices, and their monotonicity projections.

mod calibrator;
mod grid;
pub mod isotonic;

pub use calibrator::{Calibrator, CalibratorWeights};
pub use grid::{Lattice, LatticeEval};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub const UNIT: Bounds = Bounds { lo: 0.0, hi: 1.0 };
    pub const SYMMETRIC: Bounds = Bounds { lo: -1.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let b = Bounds { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::Invalid(format!(
                "invalid bounds [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn clip(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    /// Distance from `x` to the interval (0 inside).
    pub fn excess(&self, x: f64) -> f64 {
        (self.lo - x).max(x - self.hi).max(0.0)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Direction of a monotonicity constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monotonicity {
    Increasing,
    Decreasing,
    #[default]
    None,
}

impl Monotonicity {
    pub fn is_constrained(self) -> bool {
        self != Monotonicity::None
    }
}

impl std::str::FromStr for Monotonicity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "increasing" | "inc" | "+1" | "1" => Ok(Monotonicity::Increasing),
            "decreasing" | "dec" | "-1" => Ok(Monotonicity::Decreasing),
            "none" | "0" => Ok(Monotonicity::None),
            other => Err(Error::Config(format!("unknown monotonicity '{other}'"))),
        }
    }
}
