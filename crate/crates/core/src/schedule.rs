//! Annealing and learning-rate schedules, with stretching.
//!
//! Both schedules are functions of the epoch number. Stretching by a factor
//! s replays a schedule at 1/s speed: epoch n reads the unstretched value at
//! floor(n / s), and callers scale the total epoch count by s.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnealMode {
    /// Geometric interpolation (linear in log beta).
    Log,
    Linear,
}

/// Inverse-temperature schedule: anneals from beta_start to beta_end over
/// `anneal_epochs`, then holds.
#[derive(Debug, Clone)]
pub struct BetaSchedule {
    pub beta_start: f64,
    pub beta_end: f64,
    pub anneal_epochs: usize,
    pub mode: AnnealMode,
    pub stretch_s: usize,
}

impl BetaSchedule {
    pub fn new(
        beta_start: f64,
        beta_end: f64,
        anneal_epochs: usize,
        mode: AnnealMode,
    ) -> Result<Self> {
        if beta_start.is_nan() || beta_start <= 0.0 || beta_end.is_nan() || beta_end <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "beta endpoints must be positive: {beta_start}, {beta_end}"
            )));
        }
        if beta_start > beta_end {
            return Err(Error::InvalidArgument(format!(
                "beta_start {beta_start} exceeds beta_end {beta_end}"
            )));
        }
        if anneal_epochs == 0 {
            return Err(Error::InvalidArgument(
                "anneal_epochs must be at least 1".into(),
            ));
        }
        Ok(BetaSchedule {
            beta_start,
            beta_end,
            anneal_epochs,
            mode,
            stretch_s: 1,
        })
    }

    /// The annealing settings used throughout: 0.7 to 1e4 over 128 epochs on
    /// a logarithmic curve.
    pub fn standard() -> Self {
        BetaSchedule {
            beta_start: 0.7,
            beta_end: 1e4,
            anneal_epochs: 128,
            mode: AnnealMode::Log,
            stretch_s: 1,
        }
    }

    /// Copy with stretch factor s; the caller scales total epochs by s.
    pub fn stretched(&self, s: usize) -> Result<Self> {
        if s == 0 {
            return Err(Error::InvalidArgument(
                "stretch factor must be at least 1".into(),
            ));
        }
        Ok(BetaSchedule {
            stretch_s: s,
            ..self.clone()
        })
    }
}

/// Beta in effect at the given epoch.
pub fn beta_at(s: &BetaSchedule, epoch: usize) -> f64 {
    let m = epoch / s.stretch_s;
    let t = s.anneal_epochs;
    let frac = (m.min(t)) as f64 / t as f64;
    match s.mode {
        AnnealMode::Log => s.beta_start * (s.beta_end / s.beta_start).powf(frac),
        AnnealMode::Linear => s.beta_start + frac * (s.beta_end - s.beta_start),
    }
}

/// Step-decay learning-rate schedule: constant until `drop_epoch`, then
/// divided by `drop_factor` there and every `drop_interval` epochs after.
#[derive(Debug, Clone)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub drop_epoch: usize,
    pub drop_interval: usize,
    pub drop_factor: f64,
    pub stretch_s: usize,
}

impl LrSchedule {
    pub fn new(
        initial_lr: f64,
        drop_epoch: usize,
        drop_interval: usize,
        drop_factor: f64,
    ) -> Result<Self> {
        if initial_lr.is_nan() || initial_lr <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive: {initial_lr}"
            )));
        }
        if drop_interval == 0 {
            return Err(Error::InvalidArgument(
                "drop_interval must be at least 1".into(),
            ));
        }
        if drop_factor.is_nan() || drop_factor <= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "drop_factor divides the rate and must exceed 1, got {drop_factor}"
            )));
        }
        Ok(LrSchedule {
            initial_lr,
            drop_epoch,
            drop_interval,
            drop_factor,
            stretch_s: 1,
        })
    }

    /// 1e-3 initial, divided by 10 at epoch 80 and every 40 epochs after.
    pub fn standard() -> Self {
        LrSchedule {
            initial_lr: 1e-3,
            drop_epoch: 80,
            drop_interval: 40,
            drop_factor: 10.0,
            stretch_s: 1,
        }
    }

    pub fn stretched(&self, s: usize) -> Result<Self> {
        if s == 0 {
            return Err(Error::InvalidArgument(
                "stretch factor must be at least 1".into(),
            ));
        }
        Ok(LrSchedule {
            stretch_s: s,
            ..self.clone()
        })
    }
}

/// Learning rate in effect at the given epoch.
pub fn lr_at(s: &LrSchedule, epoch: usize) -> f64 {
    let m = epoch / s.stretch_s;
    if m < s.drop_epoch {
        return s.initial_lr;
    }
    let drops = 1 + (m - s.drop_epoch) / s.drop_interval;
    s.initial_lr / s.drop_factor.powi(drops as i32)
}
