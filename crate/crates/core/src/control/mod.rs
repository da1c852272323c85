//! Soft actor-critic meta-controller over the routing threshold and the
//! blending weight.

mod buffer;
mod planted;
mod sac;
mod train;

pub use buffer::{ReplayBuffer, Transition};
pub use planted::PlantedOptimum;
pub use sac::{squashed_entropy, ActionSample, SacAgent, SacConfig, UpdateStats};
pub use train::{run_loop, Environment, LoopConfig, StepInfo, StepLog, StepResult};

use thiserror::Error;

/// Days of reconstruction-error history in the state.
pub const HISTORY_DAYS: usize = 5;
/// `[ē_t, ē_{t−5..t−1}, σ_t, RMSE_{t−1}, DA_{t−1}, α_{t−1}, τ_{t−1}]`.
pub const STATE_DIM: usize = HISTORY_DAYS + 6;
/// Each action component lies in `[−ACTION_BOUND, ACTION_BOUND]`.
pub const ACTION_BOUND: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardWeights {
    pub direction: f64,
    pub stability: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            direction: 0.5,
            stability: 0.1,
        }
    }
}

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("state needs {HISTORY_DAYS} days of error history, got {0}")]
    WarmUp(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    BufferTooSmall { have: usize, need: usize },
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Numeric(#[from] numcore::NumError),
}

/// `−rmse − λ_dir·(1 − da) − λ_stable·|Δτ|`.
pub fn compute_reward(rmse: f64, da: f64, delta_tau: f64, w: &RewardWeights) -> f64 {
    -rmse - w.direction * (1.0 - da) - w.stability * delta_tau.abs()
}

/// Training-error range the threshold lives in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorBounds {
    pub min: f64,
    pub max: f64,
}

impl ErrorBounds {
    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    /// Threshold mapped to `[0, 1]`.
    pub fn normalize(&self, tau: f64) -> f64 {
        if self.width() > 0.0 {
            (tau - self.min) / self.width()
        } else {
            0.0
        }
    }
}

/// `τ' = clip(τ + Δτ·(e_max − e_min))`, `α' = clip(α + Δα, 0, 1)`. A missing
/// `Δα` (threshold-only control) leaves α unchanged.
pub fn apply_action(tau: f64, alpha: f64, action: &[f64], bounds: &ErrorBounds) -> (f64, f64) {
    let tau = (tau + action[0] * bounds.width()).clamp(bounds.min, bounds.max);
    let alpha = match action.get(1) {
        Some(d) => (alpha + d).clamp(0.0, 1.0),
        None => alpha,
    };
    (tau, alpha)
}

/// Realised metrics of the previous decision and the previous control values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Feedback {
    pub rmse: f64,
    pub da: f64,
    pub alpha: f64,
    /// Threshold in normalised `[0, 1]` units.
    pub tau: f64,
}

/// `errors` ends with today's cross-sectional mean error; the five before it
/// are the history, oldest first.
pub fn build_state(errors: &[f64], volatility: f64, prev: &Feedback) -> Result<Vec<f64>, ControlError> {
    if errors.len() < HISTORY_DAYS + 1 {
        return Err(ControlError::WarmUp(errors.len().saturating_sub(1)));
    }
    let now = errors.len() - 1;
    let mut s = Vec::with_capacity(STATE_DIM);
    s.push(errors[now]);
    s.extend_from_slice(&errors[now - HISTORY_DAYS..now]);
    s.extend([volatility, prev.rmse, prev.da, prev.alpha, prev.tau]);
    if s.iter().any(|v| !v.is_finite()) {
        return Err(ControlError::NonFinite("controller state"));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    const B: ErrorBounds = ErrorBounds { min: 1.0, max: 3.0 };

    #[test]
    fn reward_examples() {
        let w = RewardWeights::default();
        assert_eq!(compute_reward(0.0, 1.0, 0.0, &w), 0.0);
        assert!((compute_reward(1.0, 0.5, 0.1, &w) + 1.26).abs() < 1e-15);
        assert_eq!((w.direction, w.stability), (0.5, 0.1));
    }

    #[test]
    fn actions_are_clipped_to_bounds() {
        assert_eq!(apply_action(2.0, 1.0, &[0.0, 0.1], &B), (2.0, 1.0));
        assert_eq!(apply_action(2.0, 0.4, &[0.0, 0.0], &B), (2.0, 0.4));
        assert_eq!(apply_action(1.0, 0.5, &[-0.1, 0.0], &B).0, 1.0);
        assert_eq!(apply_action(2.0, 0.5, &[0.05], &B), (2.1, 0.5));
    }

    #[test]
    fn clipping_is_idempotent() {
        for a in [[-0.1, -0.1], [0.1, 0.1], [0.03, -0.07]] {
            for (tau, alpha) in [(1.0, 0.0), (2.95, 0.98), (1.5, 0.5)] {
                let once = apply_action(tau, alpha, &a, &B);
                assert_eq!(apply_action(once.0, once.1, &[0.0, 0.0], &B), once);
            }
        }
    }

    #[test]
    fn state_layout() {
        let prev = Feedback { rmse: 0.3, da: 0.6, alpha: 0.5, tau: 0.25 };
        let s = build_state(&[0.7; 6], 0.2, &prev).unwrap();
        assert_eq!(s.len(), STATE_DIM);
        assert_eq!(&s[..6], &[0.7; 6]);
        let s = build_state(&[9.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 0.2, &prev).unwrap();
        assert_eq!(s, vec![6.0, 1.0, 2.0, 3.0, 4.0, 5.0, 0.2, 0.3, 0.6, 0.5, 0.25]);
        assert!(matches!(build_state(&[1.0; 5], 0.0, &prev), Err(ControlError::WarmUp(4))));
    }
}
