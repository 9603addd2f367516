//! Accuracy schedules.
//!
//! `beta(t)` is the accumulated precision of the noisy observations received
//! up to time `t`, and `alpha_rate(t)` is its derivative. Continuous data uses
//! `beta(t) = sigma1^(-2t) - 1`; categorical data uses `beta(t) = beta1 * t^2`.
//! A schedule discretised into `n` steps hands out the increments
//! `beta(i/n) - beta((i-1)/n)` as per-step accuracies.

use serde::{Deserialize, Serialize};

use crate::error::{check_unit_time, BfnError, Result};

pub const DEFAULT_SIGMA1: f64 = 0.02;
pub const DEFAULT_BETA1: f64 = 4.0;
pub const DEFAULT_TRAIN_STEPS: usize = 20;
pub const DEFAULT_SAMPLE_STEPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    Continuous { sigma1: f64 },
    Categorical { beta1: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracySchedule {
    kind: ScheduleKind,
    n_steps: usize,
}

impl AccuracySchedule {
    pub fn new(kind: ScheduleKind, n_steps: usize) -> Result<Self> {
        match kind {
            ScheduleKind::Continuous { sigma1 } if !(sigma1 > 0.0 && sigma1 < 1.0) => {
                return Err(BfnError::Argument(format!("sigma1 must lie in (0, 1), got {sigma1}")));
            }
            ScheduleKind::Categorical { beta1 } if !(beta1 > 0.0 && beta1.is_finite()) => {
                return Err(BfnError::Argument(format!("beta1 must be positive, got {beta1}")));
            }
            _ => {}
        }
        if n_steps == 0 {
            return Err(BfnError::Argument("n_steps must be at least 1".into()));
        }
        Ok(Self { kind, n_steps })
    }

    pub fn continuous(sigma1: f64, n_steps: usize) -> Result<Self> {
        Self::new(ScheduleKind::Continuous { sigma1 }, n_steps)
    }

    pub fn categorical(beta1: f64, n_steps: usize) -> Result<Self> {
        Self::new(ScheduleKind::Categorical { beta1 }, n_steps)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn with_steps(&self, n_steps: usize) -> Result<Self> {
        Self::new(self.kind, n_steps)
    }

    /// Accumulated accuracy at time `t`.
    pub fn beta(&self, t: f64) -> Result<f64> {
        check_unit_time(t)?;
        Ok(self.beta_unchecked(t))
    }

    pub(crate) fn beta_unchecked(&self, t: f64) -> f64 {
        match self.kind {
            // sigma1^(-2t) - 1, written with exp_m1 so small t stays accurate
            ScheduleKind::Continuous { sigma1 } => (-2.0 * t * sigma1.ln()).exp_m1(),
            ScheduleKind::Categorical { beta1 } => beta1 * t * t,
        }
    }

    /// Accuracy rate `d beta / dt`, non-negative on [0, 1].
    pub fn alpha_rate(&self, t: f64) -> Result<f64> {
        check_unit_time(t)?;
        Ok(match self.kind {
            ScheduleKind::Continuous { sigma1 } => -2.0 * sigma1.ln() * sigma1.powf(-2.0 * t),
            ScheduleKind::Categorical { beta1 } => 2.0 * beta1 * t,
        })
    }

    /// Per-step accuracies `beta(i/n) - beta((i-1)/n)` for `i = 1..=n`.
    pub fn step_alphas(&self) -> Vec<f64> {
        let n = self.n_steps as f64;
        (1..=self.n_steps)
            .map(|i| {
                let hi = self.beta_unchecked(i as f64 / n);
                let lo = self.beta_unchecked((i - 1) as f64 / n);
                hi - lo
            })
            .collect()
    }

    /// Shrinkage factor `beta / (1 + beta)` of the unit-precision prior; equals
    /// `1 - sigma1^(2t)` for the continuous schedule.
    pub fn gamma(&self, t: f64) -> Result<f64> {
        let b = self.beta(t)?;
        Ok(b / (1.0 + b))
    }
}

/// The pair of schedules used by a model over a mixed schema: continuous
/// variables follow `sigma1`, categorical variables follow `beta1`, and both
/// share one step count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSet {
    pub sigma1: f64,
    pub beta1: f64,
    pub n_steps: usize,
}

impl Default for ScheduleSet {
    fn default() -> Self {
        Self { sigma1: DEFAULT_SIGMA1, beta1: DEFAULT_BETA1, n_steps: DEFAULT_TRAIN_STEPS }
    }
}

impl ScheduleSet {
    pub fn new(sigma1: f64, beta1: f64, n_steps: usize) -> Result<Self> {
        let set = Self { sigma1, beta1, n_steps };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        self.continuous()?;
        self.categorical()?;
        Ok(())
    }

    pub fn continuous(&self) -> Result<AccuracySchedule> {
        AccuracySchedule::continuous(self.sigma1, self.n_steps)
    }

    pub fn categorical(&self) -> Result<AccuracySchedule> {
        AccuracySchedule::categorical(self.beta1, self.n_steps)
    }

    pub fn with_steps(&self, n_steps: usize) -> Self {
        Self { n_steps, ..*self }
    }
}
