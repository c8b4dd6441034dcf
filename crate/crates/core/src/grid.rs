//! Rectangular grids over named model parameters (`beta1`, …, `theta1`, …).

use serde::{Deserialize, Serialize};

use crate::error::{DesignError, Result};
use crate::model::ModelSpec;

/// One free parameter swept from `from` to `to` (inclusive) in `step`s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub name: String,
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

impl AxisSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.from.is_finite() && self.to.is_finite() && self.step.is_finite()) {
            return Err(DesignError::InvalidGrid(format!("axis {} has non-finite bounds", self.name)));
        }
        if self.to < self.from {
            return Err(DesignError::InvalidGrid(format!("axis {}: to < from", self.name)));
        }
        if self.to == self.from {
            return Ok(vec![self.from]);
        }
        if !(self.step > 0.0) {
            return Err(DesignError::InvalidGrid(format!("axis {}: step must be positive", self.name)));
        }
        let count = ((self.to - self.from) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..count)
            .map(|k| {
                let v = self.from + k as f64 * self.step;
                // strip accumulated representation noise
                (v * 1e12).round() / 1e12
            })
            .collect())
    }
}

/// Where a named parameter lives in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSlot {
    Beta(usize),
    Theta(usize),
}

pub fn parse_slot(name: &str, model: &ModelSpec) -> Result<ParamSlot> {
    let bad = || DesignError::InvalidGrid(format!("unknown parameter `{name}`"));
    let (kind, idx) = if let Some(rest) = name.strip_prefix("beta") {
        (true, rest)
    } else if let Some(rest) = name.strip_prefix("theta") {
        (false, rest)
    } else {
        return Err(bad());
    };
    let idx: usize = idx.parse().map_err(|_| bad())?;
    let limit = if kind { model.beta.len() } else { model.theta.len() };
    if idx == 0 || idx > limit {
        return Err(bad());
    }
    Ok(if kind {
        ParamSlot::Beta(idx - 1)
    } else {
        ParamSlot::Theta(idx - 1)
    })
}

/// A tensor grid; points are enumerated lexicographically with the first
/// axis varying slowest.
#[derive(Debug, Clone)]
pub struct ParamGrid {
    pub names: Vec<String>,
    slots: Vec<ParamSlot>,
    values: Vec<Vec<f64>>,
}

impl ParamGrid {
    pub fn new(axes: &[AxisSpec], template: &ModelSpec) -> Result<Self> {
        if axes.is_empty() {
            return Err(DesignError::InvalidGrid("no free parameters".into()));
        }
        let mut slots = Vec::new();
        for a in axes {
            let slot = parse_slot(&a.name, template)?;
            if slots.contains(&slot) {
                return Err(DesignError::InvalidGrid(format!("parameter `{}` listed twice", a.name)));
            }
            slots.push(slot);
        }
        Ok(ParamGrid {
            names: axes.iter().map(|a| a.name.clone()).collect(),
            slots,
            values: axes.iter().map(|a| a.values()).collect::<Result<_>>()?,
        })
    }

    pub fn len(&self) -> usize {
        self.values.iter().map(|v| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameter values of grid point `index`.
    pub fn point(&self, mut index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len()];
        for (a, vals) in self.values.iter().enumerate().rev() {
            out[a] = vals[index % vals.len()];
            index /= vals.len();
        }
        out
    }

    /// `template` with the grid point's values substituted.
    pub fn apply(&self, template: &ModelSpec, values: &[f64]) -> ModelSpec {
        let mut beta = template.beta.clone();
        let mut theta = template.theta.clone();
        for (slot, &v) in self.slots.iter().zip(values) {
            match *slot {
                ParamSlot::Beta(i) => beta[i] = v,
                ParamSlot::Theta(i) => theta[i] = v,
            }
        }
        template.with_parameters(beta, theta)
    }
}
