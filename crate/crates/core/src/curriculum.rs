//! Three-phase alignment curriculum.
//!
//! * Anchor (`c` epochs): α = 0, plain contrastive training.
//! * Ramp (`r` epochs): α climbs from 0 to α_target. Each step adds
//!   `(α_target − α) / remaining · (0.5 + s(ρ))`, where ρ is the ratio of a
//!   fast to a slow EMA of the observed contrastive loss clipped to [0, 2],
//!   and `s(ρ) = ρ` for ρ ≤ 1, `2 − ρ` otherwise. A stable loss (ρ ≈ 1)
//!   ramps at 1.5× the base rate; a loss that is still falling or rising
//!   slows the ramp down to 0.5×. The last ramp step lands on α_target.
//! * Stabilize (`h` epochs): α = α_target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Anchor,
    Ramp,
    Stabilize,
}

fn default_ema_slow() -> f64 {
    0.99
}

fn default_ema_fast() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    pub anchor_epochs: usize,
    pub ramp_epochs: usize,
    pub stabilize_epochs: usize,
    pub alpha_target: f64,
    /// Optimizer steps per epoch. `0` in a config file means "derive from the
    /// dataset and batch size"; a scheduler requires it to be at least 1.
    pub steps_per_epoch: usize,
    pub ema_slow_decay: f64,
    pub ema_fast_decay: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            anchor_epochs: 3,
            ramp_epochs: 5,
            stabilize_epochs: 2,
            alpha_target: 0.5,
            steps_per_epoch: 0,
            ema_slow_decay: default_ema_slow(),
            ema_fast_decay: default_ema_fast(),
        }
    }
}

impl CurriculumConfig {
    pub fn total_epochs(&self) -> usize {
        self.anchor_epochs + self.ramp_epochs + self.stabilize_epochs
    }

    pub fn total_steps(&self) -> usize {
        self.total_epochs() * self.steps_per_epoch
    }

    pub fn ramp_start(&self) -> usize {
        self.anchor_epochs * self.steps_per_epoch
    }

    pub fn ramp_end(&self) -> usize {
        (self.anchor_epochs + self.ramp_epochs) * self.steps_per_epoch
    }

    /// Checks everything except `steps_per_epoch`, which may still be unresolved.
    pub fn validate_schedule(&self) -> Result<()> {
        if self.total_epochs() == 0 {
            return Err(Error::InvalidArgument(
                "curriculum needs at least one epoch".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha_target) {
            return Err(Error::InvalidArgument(format!(
                "alpha_target = {} outside [0, 1]",
                self.alpha_target
            )));
        }
        let (slow, fast) = (self.ema_slow_decay, self.ema_fast_decay);
        if !(0.0 < fast && fast < 1.0 && 0.0 < slow && slow < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "EMA decays must lie in (0, 1), got slow {slow}, fast {fast}"
            )));
        }
        if fast >= slow {
            return Err(Error::InvalidArgument(format!(
                "fast EMA decay {fast} must be below slow decay {slow}"
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_schedule()?;
        if self.steps_per_epoch == 0 {
            return Err(Error::InvalidArgument("steps_per_epoch must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_steps_per_epoch(&self, steps_per_epoch: usize) -> Self {
        Self {
            steps_per_epoch,
            ..self.clone()
        }
    }
}

/// Phase that owns `global_step`. Boundaries belong to the later phase.
pub fn phase_of(config: &CurriculumConfig, global_step: usize) -> Result<Phase> {
    if global_step >= config.total_steps() {
        return Err(Error::InvalidArgument(format!(
            "step {global_step} beyond schedule of {} steps",
            config.total_steps()
        )));
    }
    Ok(if global_step < config.ramp_start() {
        Phase::Anchor
    } else if global_step < config.ramp_end() {
        Phase::Ramp
    } else {
        Phase::Stabilize
    })
}

/// `0.5 + s(ρ)` with ρ clipped to [0, 2]; always within [0.5, 1.5].
pub fn speed_factor(rho: f64) -> f64 {
    let rho = if rho.is_nan() { 1.0 } else { rho.clamp(0.0, 2.0) };
    let s = if rho <= 1.0 { rho } else { 2.0 - rho };
    0.5 + s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub phase: Phase,
    pub global_step: usize,
    pub alpha: f64,
    pub ema_slow: f64,
    pub ema_fast: f64,
    pub initialized: bool,
    /// Speed factor applied on the most recent ramp step.
    #[serde(default)]
    pub last_speed_factor: Option<f64>,
}

/// Owns the schedule configuration and its evolving state.
#[derive(Debug, Clone, PartialEq)]
pub struct Scheduler {
    config: CurriculumConfig,
    state: CurriculumState,
}

impl Scheduler {
    pub fn new(config: CurriculumConfig) -> Result<Self> {
        config.validate()?;
        let state = CurriculumState {
            phase: phase_of(&config, 0)?,
            global_step: 0,
            alpha: if config.ramp_start() == 0 && config.ramp_end() == 0 {
                config.alpha_target
            } else {
                0.0
            },
            ema_slow: 0.0,
            ema_fast: 0.0,
            initialized: false,
            last_speed_factor: None,
        };
        Ok(Self { config, state })
    }

    /// Resume from a snapshot produced by [`Scheduler::state`].
    pub fn resume(config: CurriculumConfig, state: CurriculumState) -> Result<Self> {
        config.validate()?;
        if state.global_step < config.total_steps() && phase_of(&config, state.global_step)? != state.phase {
            return Err(Error::InvalidArgument(
                "snapshot phase does not match its step".into(),
            ));
        }
        if !(0.0..=config.alpha_target).contains(&state.alpha) {
            return Err(Error::InvalidArgument(format!(
                "snapshot alpha {} outside [0, {}]",
                state.alpha, config.alpha_target
            )));
        }
        Ok(Self { config, state })
    }

    pub fn config(&self) -> &CurriculumConfig {
        &self.config
    }

    pub fn state(&self) -> &CurriculumState {
        &self.state
    }

    /// α to use for the next optimizer step.
    pub fn alpha(&self) -> f64 {
        self.state.alpha
    }

    pub fn is_finished(&self) -> bool {
        self.state.global_step >= self.config.total_steps()
    }

    /// Record the contrastive loss of the step just taken and advance.
    /// Returns α for the following step.
    pub fn step(&mut self, observed_rw_loss: f64) -> Result<f64> {
        if !observed_rw_loss.is_finite() || observed_rw_loss < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "observed loss {observed_rw_loss} must be finite and non-negative"
            )));
        }
        let t = self.state.global_step;
        if t >= self.config.total_steps() {
            return Err(Error::ScheduleExhausted {
                total_steps: self.config.total_steps(),
            });
        }
        let phase = phase_of(&self.config, t)?;
        let target = self.config.alpha_target;
        match phase {
            Phase::Anchor => {
                self.state.alpha = 0.0;
                self.state.last_speed_factor = None;
            }
            Phase::Ramp => {
                self.update_emas(observed_rw_loss);
                let remaining = self.config.ramp_end() - t;
                let rho = if self.state.ema_slow > 0.0 {
                    self.state.ema_fast / self.state.ema_slow
                } else {
                    1.0
                };
                let speed = speed_factor(rho);
                self.state.last_speed_factor = Some(speed);
                self.state.alpha = if remaining == 1 {
                    target
                } else {
                    let delta = (target - self.state.alpha) / remaining as f64 * speed;
                    (self.state.alpha + delta).min(target)
                };
            }
            Phase::Stabilize => {
                self.state.alpha = target;
                self.state.last_speed_factor = None;
            }
        }
        self.state.global_step = t + 1;
        if self.state.global_step < self.config.total_steps() {
            self.state.phase = phase_of(&self.config, self.state.global_step)?;
            if self.state.phase == Phase::Stabilize {
                self.state.alpha = target;
            }
        }
        Ok(self.state.alpha)
    }

    fn update_emas(&mut self, x: f64) {
        let s = &mut self.state;
        if !s.initialized {
            s.ema_slow = x;
            s.ema_fast = x;
            s.initialized = true;
        } else {
            let (ds, df) = (self.config.ema_slow_decay, self.config.ema_fast_decay);
            s.ema_slow = ds * s.ema_slow + (1.0 - ds) * x;
            s.ema_fast = df * s.ema_fast + (1.0 - df) * x;
        }
    }

    pub fn snapshot_json(&self) -> String {
        serde_json::to_string(&self.state).expect("curriculum state serializes")
    }
}
