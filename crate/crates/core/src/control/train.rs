//! Generic interaction loop between an agent and an episodic environment.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ControlError, SacAgent, Transition, UpdateStats};

/// What a step reports besides the next state and reward.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepInfo {
    pub tau: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, ControlError>;
    /// `action` is in physical units, each component within `±ACTION_BOUND`.
    fn step(&mut self, action: &[f64]) -> Result<StepResult, ControlError>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopConfig {
    pub total_steps: usize,
    /// Uniform random actions before the policy takes over.
    pub start_steps: usize,
    /// Gradient updates begin once this many transitions are stored.
    pub update_after: usize,
    pub updates_per_step: usize,
}

impl LoopConfig {
    pub fn new(total_steps: usize) -> Self {
        Self {
            total_steps,
            start_steps: 1_000.min(total_steps / 10),
            update_after: 256,
            updates_per_step: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub reward: f64,
    pub tau: f64,
    pub alpha_blend: f64,
    /// Zero until updates start.
    pub update: UpdateStats,
}

/// Runs `cfg.total_steps` environment steps, storing every transition and
/// updating after each step once warm.
pub fn run_loop<E: Environment + ?Sized>(
    agent: &mut SacAgent,
    env: &mut E,
    cfg: &LoopConfig,
    rng: &mut ChaCha8Rng,
    mut on_step: impl FnMut(&StepLog),
) -> Result<Vec<StepLog>, ControlError> {
    if env.state_dim() != agent.state_dim || env.action_dim() != agent.action_dim {
        return Err(ControlError::Shape(format!(
            "environment ({}, {}) vs agent ({}, {})",
            env.state_dim(),
            env.action_dim(),
            agent.state_dim,
            agent.action_dim
        )));
    }
    let update_after = cfg.update_after.max(agent.config.batch_size);
    let mut logs = Vec::with_capacity(cfg.total_steps);
    let mut state = env.reset(rng)?;
    for step in 0..cfg.total_steps {
        let squashed: Vec<f64> = if step < cfg.start_steps {
            (0..agent.action_dim).map(|_| rng.random_range(-1.0..1.0)).collect()
        } else {
            agent.act(&state, false, rng)?.squashed
        };
        let physical: Vec<f64> = squashed.iter().map(|a| a * super::ACTION_BOUND).collect();
        let out = env.step(&physical)?;
        if !out.reward.is_finite() {
            return Err(ControlError::NonFinite("reward"));
        }
        agent.buffer.push(Transition {
            state: std::mem::take(&mut state),
            action: squashed,
            reward: out.reward,
            next_state: out.next_state.clone(),
            done: out.done,
        });
        state = if out.done { env.reset(rng)? } else { out.next_state };
        let mut update = UpdateStats::default();
        if agent.buffer.len() >= update_after {
            for _ in 0..cfg.updates_per_step {
                update = agent.update(rng)?;
            }
        }
        let log = StepLog {
            step,
            reward: out.reward,
            tau: out.info.tau,
            alpha_blend: out.info.alpha,
            update,
        };
        on_step(&log);
        logs.push(log);
    }
    Ok(logs)
}
