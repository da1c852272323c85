//! Frozen evaluation: a deterministic policy rollout over held-out days.

use std::ops::Range;

use numcore::rng::named_rng;

use super::env::controller_state;
use super::predict::{day_outcome, PredictionTable, Selector};
use super::{Dataset, PipelineError, System};
use crate::control::{apply_action, Feedback};
use crate::evalsuite::{regime_breakdown, EvalReport, Forecast, TrajectoryPoint};

/// Forecasts for every decision day, stock and horizon, plus the daily
/// `(τ, α)` the forecasts were routed with.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub forecasts: Vec<Forecast>,
    pub trajectory: Vec<TrajectoryPoint>,
}

impl Evaluation {
    pub fn horizon(&self, h: usize) -> Vec<Forecast> {
        self.forecasts.iter().filter(|f| f.horizon == h).copied().collect()
    }
}

impl System {
    /// Rolls the frozen system over `days` from `(τ₀, α₀)`. Fails if any
    /// parameter changed meanwhile.
    pub fn evaluate(&self, days: Range<usize>) -> Result<Evaluation, PipelineError> {
        let before = self.fingerprint();
        let out = self.rollout(days)?;
        if self.fingerprint() != before {
            return Err(PipelineError::FrozenViolation);
        }
        Ok(out)
    }

    pub fn evaluate_test(&self) -> Result<Evaluation, PipelineError> {
        self.evaluate(self.data().splits.test.clone())
    }

    /// Exact conditioned-pathway outputs on `day`: earlier tokens carry the
    /// `τ₀` flag, the decision day carries the flag under `tau`.
    fn conditioned_day(&self, table: &mut PredictionTable, day: usize, tau: f64) -> Result<(), PipelineError> {
        let d = self.data();
        let m = self.single.as_ref().expect("conditioned system has a pathway");
        let len = self.config.model.seq_len;
        let window = (day + 1).saturating_sub(len).max(d.first_usable_day())..day + 1;
        let src = self.sources();
        let tau0 = self.tau0();
        let flag = |i, t| {
            let cut = if t == day { tau } else { tau0 };
            if src.error(i, t).is_some_and(|e| e >= cut) {
                1.0
            } else {
                0.0
            }
        };
        let (y, _) = m.predict(&src.input(&window, false, Some(&flag)))?;
        for i in 0..d.n_stocks() {
            let row = i * window.len() + window.len() - 1;
            for k in 0..table.n_horizons {
                let at = table.index(i, day, k);
                table.primary[at] = y.get(row, k);
            }
        }
        Ok(())
    }

    fn rollout(&self, days: Range<usize>) -> Result<Evaluation, PipelineError> {
        let d = self.data();
        let cfg = &self.config;
        let start = days.start.max(d.first_usable_day() + 1);
        let sel = self.selector();
        // Conditioned outputs are filled in exactly per day and read directly.
        let pick_sel = if sel == Selector::Conditioned { Selector::Plain } else { sel };
        let mut table = match sel {
            Selector::Conditioned => PredictionTable::new(d.n_stocks(), d.n_days(), cfg.model.horizons.len(), false),
            _ => self.prediction_table(start - 1..days.end)?,
        };
        let scores = self.scores.as_ref();
        let (tau0, bounds) = (self.tau0(), self.bounds());
        let (mut tau, mut alpha) = (tau0, cfg.controller.initial_alpha);
        let horizon = self.reward_horizon();
        if sel == Selector::Conditioned && start < days.end {
            self.conditioned_day(&mut table, start - 1, tau)?;
        }
        let feedback = |table: &PredictionTable, day: usize, tau: f64, alpha: f64| {
            day_outcome(table, pick_sel, d, scores, day, horizon, tau, alpha).map(|(rmse, da)| Feedback {
                rmse,
                da,
                alpha,
                tau: bounds.normalize(tau),
            })
        };
        let mut prev = feedback(&table, start - 1, tau, alpha).unwrap_or(Feedback {
            rmse: 0.0,
            da: 0.0,
            alpha,
            tau: bounds.normalize(tau),
        });
        let agent = self.agent.as_ref().filter(|_| self.controller_active());
        let mut rng = named_rng(cfg.seed, "evaluation");
        let mut forecasts = Vec::new();
        let mut trajectory = Vec::new();
        for t in start..days.end {
            if let (Some(agent), Some(s)) = (agent, scores) {
                if let Ok(state) = controller_state(d, s, tau0, t, &prev) {
                    let a = agent.act(&state, true, &mut rng)?;
                    (tau, alpha) = apply_action(tau, alpha, &a.action, &bounds);
                }
            }
            if sel == Selector::Conditioned {
                self.conditioned_day(&mut table, t, tau)?;
            }
            for i in 0..d.n_stocks() {
                let Some(now) = d.target(i, t) else { continue };
                let e = scores.and_then(|s| s.get(i, t));
                for (k, &h) in cfg.model.horizons.iter().enumerate() {
                    if t + h >= d.n_days() {
                        continue;
                    }
                    let (Some(actual), Some(pred)) = (d.target(i, t + h), table.pick(pick_sel, i, t, k, e, tau, alpha))
                    else {
                        continue;
                    };
                    forecasts.push(Forecast {
                        stock: i,
                        day: t,
                        horizon: h,
                        pred,
                        normal: table.primary(i, t, k).unwrap_or(pred),
                        event: if sel == Selector::Dual { table.secondary(i, t, k) } else { None },
                        actual,
                        prev: now,
                        scale: d.stats.close_std[i],
                        offset: d.stats.close_mean[i],
                    });
                }
            }
            trajectory.push(TrajectoryPoint {
                day: t,
                tau,
                alpha,
                mean_error: scores.map_or(f64::NAN, |s| s.day_mean[t]),
            });
            if let Some(f) = feedback(&table, t, tau, alpha) {
                prev = f;
            }
        }
        Ok(Evaluation { forecasts, trajectory })
    }

    pub fn report(&self, model: &str, eval: &Evaluation) -> Result<EvalReport, PipelineError> {
        build_report(&self.dataset, model, &eval.forecasts, eval.trajectory.clone())
    }
}

/// Metric rows, baselines and regime breakdowns by ground truth (when
/// known) and by training VIX tercile, keyed on the target day.
pub fn build_report(
    dataset: &Dataset,
    model: &str,
    forecasts: &[Forecast],
    trajectory: Vec<TrajectoryPoint>,
) -> Result<EvalReport, PipelineError> {
    let mut r = EvalReport::build(model, forecasts, trajectory)?;
    if let Some(c) = &dataset.crisis {
        let label = |t: usize| c.get(t).map(|&x| if x { "crisis" } else { "calm" }.to_string());
        r.regimes.extend(regime_breakdown(forecasts, "ground-truth", label)?);
    }
    let d = &dataset.data;
    let label =
        |t: usize| (t < d.n_days()).then(|| ["low", "medium", "high"][d.stats.vix_tercile(d.vix(t))].to_string());
    r.regimes.extend(regime_breakdown(forecasts, "vix-tercile", label)?);
    Ok(r)
}
