use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant learning-rate schedule: the base rate for the first
/// `constant` fraction of a stage, then halved after each further `span`
/// fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub constant: f64,
    pub span: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            constant: 0.6,
            span: 0.2,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.constant >= 0.0 && self.constant <= 1.0) || !(self.span > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "schedule fractions out of range: constant={} span={}",
                self.constant, self.span
            )));
        }
        Ok(())
    }
}

/// Learning rate at `step` (0-based) of a stage of `iterations` steps.
pub fn lr_schedule(step: usize, iterations: usize, base: f64, schedule: &Schedule) -> f64 {
    if iterations == 0 {
        return base;
    }
    // Integer breakpoints so that span edges do not depend on rounding.
    let edge = |k: i32| ((schedule.constant + k as f64 * schedule.span) * iterations as f64).round() as usize;
    let mut halvings = 0;
    while step >= edge(halvings) && halvings < 64 {
        halvings += 1;
    }
    base * 0.5f64.powi(halvings)
}
