//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NumError, Result};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
    /// Entries checked per tensor; larger tensors are sampled.
    pub max_entries: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-6,
            max_entries: usize::MAX,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

fn eval_loss<F>(store: &ParamStore, forward: &mut F) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = forward(store, &mut tape)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(NumError::Invalid(format!("loss has shape {:?}", v.shape())));
    }
    Ok(v.item())
}

/// Compares analytic gradients of a scalar loss with central differences.
///
/// An entry passes when `|a − n| ≤ max(rel_tol·max(|a|,|n|), abs_floor)`.
/// The reported relative error is `|a − n| / max(|a|, |n|, abs_floor/rel_tol)`,
/// so it stays below `rel_tol` exactly when every entry passes.
pub fn finite_difference_check<F>(
    store: &ParamStore,
    mut forward: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = forward(store, &mut tape)?;
    let analytic = tape.backward_scalar(out)?.into_param_grads();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = store.clone();
    let denom_floor = opts.abs_floor / opts.rel_tol;
    let mut params = Vec::new();
    for (id, name, t) in store.iter() {
        let n = t.len();
        let entries: Vec<usize> = if n <= opts.max_entries {
            (0..n).collect()
        } else {
            let mut e = sample(&mut rng, n, opts.max_entries).into_vec();
            e.sort_unstable();
            e
        };
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        let mut passed = true;
        for k in entries.iter().copied() {
            let a = analytic.get(id).map_or(0.0, |g| g.data()[k]);
            let orig = t.data()[k];
            work.get_mut(id).data_mut()[k] = orig + opts.step;
            let plus = eval_loss(&work, &mut forward)?;
            work.get_mut(id).data_mut()[k] = orig - opts.step;
            let minus = eval_loss(&work, &mut forward)?;
            work.get_mut(id).data_mut()[k] = orig;
            let num = (plus - minus) / (2.0 * opts.step);
            let diff = (a - num).abs();
            let scale = a.abs().max(num.abs());
            if diff > (opts.rel_tol * scale).max(opts.abs_floor) {
                passed = false;
            }
            max_abs = max_abs.max(diff);
            max_rel = max_rel.max(diff / scale.max(denom_floor));
        }
        params.push(ParamCheck {
            name: name.to_string(),
            checked: entries.len(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
            passed,
        });
    }
    Ok(GradCheckReport { params })
}
