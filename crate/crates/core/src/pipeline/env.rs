//! The forecasting environment the controller trains in: one step per
//! training day, cycling through the stream.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::predict::day_outcome;
use super::{PredictionTable, PreparedData, Selector};
use crate::control::{
    apply_action, build_state, compute_reward, ControlError, Environment, ErrorBounds, Feedback, RewardWeights,
    StepInfo, StepResult, HISTORY_DAYS, STATE_DIM,
};
use crate::regime::AnomalyScores;

/// Position of `vol20` among the router features.
const VOL20: usize = 1;

/// Controller state on `day`: mean errors scaled by `τ₀`, normalised market
/// volatility and the previous decision's realised feedback.
pub fn controller_state(
    data: &PreparedData,
    scores: &AnomalyScores,
    tau0: f64,
    day: usize,
    prev: &Feedback,
) -> Result<Vec<f64>, ControlError> {
    if day < HISTORY_DAYS {
        return Err(ControlError::WarmUp(day));
    }
    let errors: Vec<f64> = (day - HISTORY_DAYS..=day).map(|t| scores.day_mean[t] / tau0).collect();
    build_state(&errors, data.features.router_row(day)[VOL20], prev)
}

pub struct ForecastEnv<'a> {
    pub table: &'a PredictionTable,
    pub data: &'a PreparedData,
    pub scores: &'a AnomalyScores,
    pub selector: Selector,
    pub bounds: ErrorBounds,
    pub tau0: f64,
    pub weights: RewardWeights,
    /// Index and length of the horizon scored by the reward.
    pub horizon: (usize, usize),
    /// Decision days in chronological order.
    pub days: Vec<usize>,
    pub action_dim: usize,
    pub tau: f64,
    pub alpha: f64,
    pos: usize,
    prev: Feedback,
}

impl<'a> ForecastEnv<'a> {
    /// Keeps the days in `candidates` whose state, previous outcome and
    /// own outcome are all available.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        table: &'a PredictionTable,
        data: &'a PreparedData,
        scores: &'a AnomalyScores,
        selector: Selector,
        bounds: ErrorBounds,
        tau0: f64,
        weights: RewardWeights,
        horizon: (usize, usize),
        candidates: impl Iterator<Item = usize>,
        action_dim: usize,
        (tau, alpha): (f64, f64),
    ) -> Result<Self, ControlError> {
        let mut env = Self {
            table,
            data,
            scores,
            selector,
            bounds,
            tau0,
            weights,
            horizon,
            days: Vec::new(),
            action_dim,
            tau,
            alpha,
            pos: 0,
            prev: Feedback {
                rmse: 0.0,
                da: 0.0,
                alpha,
                tau: bounds.normalize(tau),
            },
        };
        let probe = Feedback { rmse: 0.0, da: 0.0, alpha: 0.0, tau: 0.0 };
        env.days = candidates
            .filter(|&t| {
                t >= 1
                    && controller_state(data, scores, tau0, t, &probe).is_ok()
                    && env.outcome(t - 1, tau, alpha).is_some()
                    && env.outcome(t, tau, alpha).is_some()
            })
            .collect();
        if env.days.is_empty() {
            return Err(ControlError::Shape("no usable decision days in the training stream".into()));
        }
        Ok(env)
    }

    fn outcome(&self, day: usize, tau: f64, alpha: f64) -> Option<(f64, f64)> {
        day_outcome(self.table, self.selector, self.data, Some(self.scores), day, self.horizon, tau, alpha)
    }

    /// Feedback of the decision made the day before `days[pos]` under the
    /// current `(τ, α)`.
    fn feedback_before(&self, pos: usize) -> Feedback {
        let (rmse, da) = self.outcome(self.days[pos] - 1, self.tau, self.alpha).unwrap_or((0.0, 0.0));
        Feedback {
            rmse,
            da,
            alpha: self.alpha,
            tau: self.bounds.normalize(self.tau),
        }
    }

    fn state(&self) -> Result<Vec<f64>, ControlError> {
        controller_state(self.data, self.scores, self.tau0, self.days[self.pos], &self.prev)
    }
}

impl Environment for ForecastEnv<'_> {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Jumps to a random day; `(τ, α)` carry over.
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, ControlError> {
        self.pos = rng.random_range(0..self.days.len());
        self.prev = self.feedback_before(self.pos);
        self.state()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, ControlError> {
        if action.len() != self.action_dim {
            return Err(ControlError::Shape(format!("action of length {}, expected {}", action.len(), self.action_dim)));
        }
        let day = self.days[self.pos];
        let (tau, alpha) = apply_action(self.tau, self.alpha, action, &self.bounds);
        let (rmse, da) = self
            .outcome(day, tau, alpha)
            .ok_or(ControlError::NonFinite("forecast outcome"))?;
        let reward = compute_reward(rmse, da, action[0], &self.weights);
        (self.tau, self.alpha) = (tau, alpha);
        self.pos = (self.pos + 1) % self.days.len();
        self.prev = if self.pos == 0 {
            self.feedback_before(0)
        } else {
            Feedback {
                rmse,
                da,
                alpha,
                tau: self.bounds.normalize(tau),
            }
        };
        Ok(StepResult {
            next_state: self.state()?,
            reward,
            done: false,
            info: StepInfo { tau, alpha },
        })
    }
}
