//! Chronological train/validation/test boundaries and the leakage guard.

use std::ops::Range;

use super::PipelineError;

/// Contiguous day ranges `train < val < test` covering the whole panel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub n_days: usize,
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    /// Boundaries at `round(n·f_train)` and `round(n·(f_train + f_val))`.
    pub fn chronological(n_days: usize, fractions: [f64; 3]) -> Result<Self, PipelineError> {
        let sum: f64 = fractions.iter().sum();
        if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(PipelineError::Config(format!(
                "split fractions must be non-negative and sum to 1, got {fractions:?}"
            )));
        }
        let train_end = (n_days as f64 * fractions[0]).round() as usize;
        let val_end = ((n_days as f64 * (fractions[0] + fractions[1])).round() as usize).min(n_days);
        let s = Self {
            n_days,
            train: 0..train_end,
            val: train_end..val_end,
            test: val_end..n_days,
        };
        if s.train.is_empty() || s.val.is_empty() || s.test.is_empty() {
            return Err(PipelineError::Config(format!(
                "every split needs at least one day: train {:?}, validation {:?}, test {:?}",
                s.train, s.val, s.test
            )));
        }
        Ok(s)
    }

    pub fn train_end(&self) -> usize {
        self.train.end
    }

    /// Refuses any statistic fitted on days at or after the training boundary.
    pub fn guard_fit(&self, what: &str, days: &Range<usize>) -> Result<(), PipelineError> {
        if days.end > self.train.end {
            return Err(PipelineError::Leakage {
                what: what.to_string(),
                last_day: days.end - 1,
                train_end: self.train.end,
            });
        }
        Ok(())
    }
}
