//! Composite training objective and pathway blending.

use numcore::{Tape, Tensor, Var};

use super::{ModelError, PathwayOutput};

/// Probabilities are clipped into `[P_CLIP, 1 − P_CLIP]` before the logarithm.
pub const P_CLIP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub mse: f64,
    pub direction: f64,
    pub regularization: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mse: 1.0,
            direction: 0.5,
            regularization: 1e-4,
        }
    }
}

/// Per token and horizon: target value, direction label and loss mask, all `[N·T, |H|]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub values: Tensor,
    /// 1 when the close rose over the horizon.
    pub direction: Tensor,
    /// 1 where the sample counts.
    pub mask: Tensor,
}

impl Targets {
    pub fn count(&self) -> f64 {
        self.mask.sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub mse: f64,
    pub direction: f64,
    pub regularization: f64,
    pub total: f64,
}

/// `λ₁·MSE + λ₂·BCE + λ₃·Σθ²`, the first two averaged over masked entries.
pub fn composite_loss(
    tape: &mut Tape,
    out: &PathwayOutput,
    targets: &Targets,
    params: &[Var],
    w: &LossWeights,
) -> Result<(Var, LossParts), ModelError> {
    let shape = tape.value(out.pred).shape().to_vec();
    for t in [&targets.values, &targets.direction, &targets.mask] {
        if t.shape() != shape.as_slice() {
            return Err(ModelError::Shape(format!("target {:?} vs prediction {shape:?}", t.shape())));
        }
    }
    let inv_count = 1.0 / targets.count().max(1.0);
    let mask = tape.leaf(targets.mask.clone());

    let y = tape.leaf(targets.values.clone());
    let diff = tape.sub(out.pred, y)?;
    let sq = tape.square(diff)?;
    let sq = tape.mul(sq, mask)?;
    let mse = tape.sum(sq)?;
    let mse = tape.scale(mse, inv_count)?;

    let d = tape.leaf(targets.direction.clone());
    let not_d = tape.leaf(targets.direction.map(|v| 1.0 - v));
    let p = tape.clamp(out.prob, P_CLIP, 1.0 - P_CLIP)?;
    let log_p = tape.log(p)?;
    let q = tape.scale(p, -1.0)?;
    let q = tape.offset(q, 1.0)?;
    let log_q = tape.log(q)?;
    let a = tape.mul(d, log_p)?;
    let b = tape.mul(not_d, log_q)?;
    let ll = tape.add(a, b)?;
    let ll = tape.mul(ll, mask)?;
    let bce = tape.sum(ll)?;
    let bce = tape.scale(bce, -inv_count)?;

    let mut reg_terms = Vec::with_capacity(params.len());
    for &p in params {
        let s = tape.square(p)?;
        reg_terms.push(tape.sum(s)?);
    }
    let mut total = {
        let a = tape.scale(mse, w.mse)?;
        let b = tape.scale(bce, w.direction)?;
        tape.add(a, b)?
    };
    let mut reg_value = 0.0;
    for r in reg_terms {
        reg_value += tape.value(r).item();
        let r = tape.scale(r, w.regularization)?;
        total = tape.add(total, r)?;
    }
    let parts = LossParts {
        mse: tape.value(mse).item(),
        direction: tape.value(bce).item(),
        regularization: reg_value,
        total: tape.value(total).item(),
    };
    Ok((total, parts))
}

/// `α·y_normal + (1 − α)·y_event`.
pub fn blend(y_normal: f64, y_event: f64, alpha: f64) -> f64 {
    alpha * y_normal + (1.0 - alpha) * y_event
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(p: f64, pred: f64) -> (Tape, PathwayOutput, Targets) {
        let mut tape = Tape::new();
        let pred = tape.leaf(Tensor::matrix(2, 2, vec![pred; 4]).unwrap());
        let prob = tape.leaf(Tensor::full(2, 2, p));
        let targets = Targets {
            values: Tensor::full(2, 2, 1.0),
            direction: Tensor::matrix(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap(),
            mask: Tensor::full(2, 2, 1.0),
        };
        (tape, PathwayOutput { pred, prob }, targets)
    }

    #[test]
    fn coin_flip_probabilities_cost_ln_two() {
        let (mut tape, out, t) = toy(0.5, 1.0);
        let (_, parts) = composite_loss(&mut tape, &out, &t, &[], &LossWeights::default()).unwrap();
        assert!((parts.direction - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(parts.mse, 0.0);
        assert!((parts.total - 0.5 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn regulariser_is_weighted_square_sum() {
        let (mut tape, out, mut t) = toy(0.5, 1.0);
        t.mask = Tensor::zeros(2, 2);
        let theta = tape.leaf(Tensor::row(vec![1.0, -2.0, 3.0]));
        let (_, parts) = composite_loss(&mut tape, &out, &t, &[theta], &LossWeights::default()).unwrap();
        assert_eq!(parts.regularization, 14.0);
        assert!((parts.total - 1e-4 * 14.0).abs() < 1e-18);
    }

    #[test]
    fn confident_correct_predictions_cost_almost_nothing() {
        let mut tape = Tape::new();
        let pred = tape.leaf(Tensor::full(1, 2, 0.4));
        let prob = tape.leaf(Tensor::row(vec![1.0, 0.0]));
        let t = Targets {
            values: Tensor::full(1, 2, 0.4),
            direction: Tensor::row(vec![1.0, 0.0]),
            mask: Tensor::full(1, 2, 1.0),
        };
        let (_, parts) =
            composite_loss(&mut tape, &PathwayOutput { pred, prob }, &t, &[], &LossWeights::default()).unwrap();
        assert!(parts.total >= 0.0 && parts.total < 1e-6);
    }

    #[test]
    fn blend_endpoints_and_midpoint() {
        assert_eq!(blend(10.0, 20.0, 1.0), 10.0);
        assert_eq!(blend(10.0, 20.0, 0.0), 20.0);
        assert_eq!(blend(10.0, 20.0, 0.5), 15.0);
    }

    #[test]
    fn defaults_match_published_weights() {
        let w = LossWeights::default();
        assert_eq!((w.mse, w.direction, w.regularization), (1.0, 0.5, 1e-4));
    }
}
