//! Bandit-style calibration environment with a known optimal threshold.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{apply_action, ControlError, Environment, ErrorBounds, StepInfo, StepResult};

/// The state is the threshold in normalised units; reward is `−(τ − τ*)²`
/// (or constant zero), episodes restart from a uniform threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedOptimum {
    pub bounds: ErrorBounds,
    pub optimum: f64,
    pub episode_len: usize,
    pub zero_reward: bool,
    tau: f64,
    alpha: f64,
    t: usize,
}

impl PlantedOptimum {
    pub fn new(bounds: ErrorBounds, optimum: f64, episode_len: usize) -> Self {
        Self {
            bounds,
            optimum,
            episode_len,
            zero_reward: false,
            tau: bounds.min,
            alpha: 0.5,
            t: 0,
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Starts a rollout at a chosen threshold.
    pub fn set_tau(&mut self, tau: f64) -> Vec<f64> {
        self.tau = tau.clamp(self.bounds.min, self.bounds.max);
        self.t = 0;
        vec![self.bounds.normalize(self.tau)]
    }
}

impl Environment for PlantedOptimum {
    fn state_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, ControlError> {
        let u: f64 = rng.random();
        Ok(self.set_tau(self.bounds.min + u * self.bounds.width()))
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, ControlError> {
        (self.tau, self.alpha) = apply_action(self.tau, self.alpha, action, &self.bounds);
        self.t += 1;
        let reward = if self.zero_reward { 0.0 } else { -(self.tau - self.optimum).powi(2) };
        Ok(StepResult {
            next_state: vec![self.bounds.normalize(self.tau)],
            reward,
            done: self.t >= self.episode_len,
            info: StepInfo { tau: self.tau, alpha: self.alpha },
        })
    }
}
