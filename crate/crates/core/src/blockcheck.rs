//! Finite-difference verification of every trainable block at desk scale.
//!
//! Each block is checked on a small scalar loss built right after it, so a
//! failure points at the block rather than at the stack around it. Full
//! pathways are checked separately at a looser tolerance.

use numcore::{finite_difference_check, GradCheckOptions, NumError, ParamCheck, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{ControlError, SacAgent, SacConfig, STATE_DIM};
use crate::marketdata::N_FEATURES;
use crate::nodeformer::{
    composite_loss, EventContext, LossWeights, ModelConfig, ModelError, PathwayModel, PathwayOutput, Targets,
    Variant, WindowInput, REGIME_SIGNAL_DIM, VIX_LEVELS,
};
use crate::regime::{RegimeDetector, INPUT_DIM};

pub const BLOCK_TOLERANCE: f64 = 1e-4;
pub const PATHWAY_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockCheck {
    pub block: String,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl BlockCheck {
    pub fn passed(&self) -> bool {
        !self.params.is_empty() && self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

/// Shapes of the checked networks: 3 stocks, 8 steps, `d_model` 16, two layers.
const STOCKS: usize = 3;
const STEPS: usize = 8;
/// Entries sampled per parameter tensor.
const ENTRIES: usize = 16;

fn model_error(e: ModelError) -> NumError {
    match e {
        ModelError::Numeric(n) => n,
        other => NumError::Invalid(other.to_string()),
    }
}

fn control_error(e: ControlError) -> NumError {
    match e {
        ControlError::Numeric(n) => n,
        other => NumError::Invalid(other.to_string()),
    }
}

fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, data).expect("length matches shape")
}

fn config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_layers: 2,
        n_heads: 4,
        d_ff: 32,
        seq_len: STEPS,
        ..ModelConfig::desk()
    }
}

fn edges(rng: &mut ChaCha8Rng) -> Tensor {
    let mut e = Tensor::identity(STOCKS);
    for i in 0..STOCKS {
        for j in i + 1..STOCKS {
            let v = rng.random_range(0.05..1.0);
            e.set(i, j, v);
            e.set(j, i, v);
        }
    }
    e
}

fn window(variant: Variant, rng: &mut ChaCha8Rng) -> WindowInput {
    let l = STOCKS * STEPS;
    let context = (variant == Variant::Event).then(|| {
        (0..l)
            .map(|_| EventContext {
                vix_level: rng.random_range(0..VIX_LEVELS),
                fixed: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
            })
            .collect()
    });
    let regime_signal = (variant == Variant::Conditioned).then(|| {
        let data = (0..l).flat_map(|_| [rng.random_range(0.0..3.0), f64::from(rng.random_range(0..2u8))]).collect();
        Tensor::matrix(l, REGIME_SIGNAL_DIM, data).expect("length matches shape")
    });
    WindowInput {
        n_stocks: STOCKS,
        steps: STEPS,
        features: uniform(l, N_FEATURES, 2.0, rng),
        context,
        regime_signal,
        anchor: Some((0..l).map(|_| rng.random_range(-1.0..1.0)).collect()),
    }
}

fn targets(rows: usize, horizons: usize, rng: &mut ChaCha8Rng) -> Targets {
    let mask = (0..rows * horizons).map(|_| if rng.random_range(0.0..1.0) < 0.8 { 1.0 } else { 0.0 }).collect();
    let direction = (0..rows * horizons).map(|_| f64::from(rng.random_range(0..2u8))).collect();
    Targets {
        values: uniform(rows, horizons, 1.0, rng),
        direction: Tensor::matrix(rows, horizons, direction).expect("length matches shape"),
        mask: Tensor::matrix(rows, horizons, mask).expect("length matches shape"),
    }
}

/// `Σ out ⊙ R` for a fixed random `R`: every output entry reaches the loss
/// with its own weight.
fn projection(tape: &mut Tape, out: Var, weights: &Tensor) -> numcore::Result<Var> {
    let w = tape.leaf(weights.clone());
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

fn options(tolerance: f64, seed: u64) -> GradCheckOptions {
    GradCheckOptions {
        rel_tol: tolerance,
        max_entries: ENTRIES,
        seed,
        ..GradCheckOptions::default()
    }
}

fn block(name: &str, tolerance: f64, params: &[ParamCheck], keep: impl Fn(&str) -> bool) -> BlockCheck {
    BlockCheck {
        block: name.to_string(),
        tolerance,
        params: params.iter().filter(|p| keep(&p.name)).cloned().collect(),
    }
}

fn check(
    store: &ParamStore,
    tolerance: f64,
    seed: u64,
    forward: impl FnMut(&ParamStore, &mut Tape) -> numcore::Result<Var>,
) -> numcore::Result<Vec<ParamCheck>> {
    Ok(finite_difference_check(store, forward, &options(tolerance, seed))?.params)
}

fn autoencoder(seed: u64) -> numcore::Result<Vec<BlockCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let det = RegimeDetector::new(&mut rng);
    let x = uniform(16, INPUT_DIM, 2.0, &mut rng);
    let params = check(&det.store, BLOCK_TOLERANCE, seed, |s, tape| det.loss_on(tape, s, &x))?;
    Ok(vec![
        block("autoencoder encoder", BLOCK_TOLERANCE, &params, |n| n.starts_with("ae.enc")),
        block("autoencoder decoder", BLOCK_TOLERANCE, &params, |n| n.starts_with("ae.dec")),
    ])
}

/// Random head weights: fresh heads have zero delta columns, which would
/// hide the price path from every check upstream of the head.
fn randomize_head(model: &mut PathwayModel, rng: &mut ChaCha8Rng) {
    let head = model.head();
    *model.store.get_mut(head.weight) = uniform(head.fan_in, head.fan_out, 0.5, rng);
}

fn transformer_blocks(seed: u64) -> numcore::Result<Vec<BlockCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = config();
    let d = cfg.d_model;
    let mut model = PathwayModel::new(Variant::Event, cfg, edges(&mut rng), "p", &mut rng).map_err(model_error)?;
    randomize_head(&mut model, &mut rng);
    let l = STOCKS * STEPS;
    let h = uniform(l, d, 1.0, &mut rng);
    let r = uniform(l, d, 1.0, &mut rng);
    let mut out = Vec::new();

    // Layer 0 reads the static prior; layer 1 refines edges from its input.
    for layer in 0..2 {
        let params = check(&model.store, BLOCK_TOLERANCE, seed, |s, tape| {
            let hv = tape.leaf(h.clone());
            let bias = model.edge_bias(tape, s, layer, hv, STOCKS, STEPS).map_err(model_error)?;
            let y = model.attention_layer(tape, s, layer, hv, bias, None).map_err(model_error)?;
            projection(tape, y, &r)
        })?;
        let tag = format!("p.layer{layer}.");
        let attention = ["query", "key", "value", "output", "norm1"];
        let ffn = ["ff_in", "ff_out", "norm2"];
        let within = |n: &str, parts: &[&str]| {
            n.strip_prefix(&tag).is_some_and(|rest| parts.iter().any(|p| rest.starts_with(p)))
        };
        out.push(block(&format!("attention layer {layer}"), BLOCK_TOLERANCE, &params, |n| within(n, &attention)));
        out.push(block(&format!("feed-forward layer {layer}"), BLOCK_TOLERANCE, &params, |n| within(n, &ffn)));
        if layer == 1 {
            out.push(block("edge refinement", BLOCK_TOLERANCE, &params, |n| n.starts_with("p.edge.")));
        }
    }

    let input = window(Variant::Event, &mut rng);
    let r_in = uniform(l, d, 1.0, &mut rng);
    let params = check(&model.store, BLOCK_TOLERANCE, seed, |s, tape| {
        let x = model.embed(tape, s, &input).map_err(model_error)?;
        projection(tape, x, &r_in)
    })?;
    out.push(block("event embedding", BLOCK_TOLERANCE, &params, |n| {
        n.starts_with("p.regime_embedding") || n.starts_with("p.stock_embedding") || n.starts_with("p.input.")
    }));

    let hz = model.n_horizons();
    let goal = targets(l, hz, &mut rng);
    let head = model.head();
    let params = check(&model.store, BLOCK_TOLERANCE, seed, |s, tape| {
        let hv = tape.leaf(h.clone());
        let y = head.forward(tape, s, hv)?;
        let pred = tape.slice_cols(y, 0, hz)?;
        let logits = tape.slice_cols(y, hz, 2 * hz)?;
        let prob = tape.sigmoid(logits)?;
        let mut regularised = vec![tape.param(s, head.weight)];
        regularised.extend(head.bias.map(|b| tape.param(s, b)));
        let out = PathwayOutput { pred, prob };
        let (loss, _) = composite_loss(tape, &out, &goal, &regularised, &LossWeights::default()).map_err(model_error)?;
        Ok(loss)
    })?;
    out.push(block("prediction head", BLOCK_TOLERANCE, &params, |n| n.starts_with("p.head.")));
    Ok(out)
}

fn full_pathways(seed: u64) -> numcore::Result<Vec<BlockCheck>> {
    let mut out = Vec::new();
    for variant in [Variant::Normal, Variant::Event, Variant::Conditioned] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = PathwayModel::new(variant, config(), edges(&mut rng), "p", &mut rng).map_err(model_error)?;
        randomize_head(&mut model, &mut rng);
        let input = window(variant, &mut rng);
        let goal = targets(STOCKS * STEPS, model.n_horizons(), &mut rng);
        let params = check(&model.store, PATHWAY_TOLERANCE, seed, |s, tape| {
            let y = model.forward(tape, s, &input, None).map_err(model_error)?;
            let all: Vec<_> = s.ids().map(|id| tape.param(s, id)).collect();
            let (loss, _) = composite_loss(tape, &y, &goal, &all, &LossWeights::default()).map_err(model_error)?;
            Ok(loss)
        })?;
        out.push(block(&format!("{} pathway (stacked)", variant.label()), PATHWAY_TOLERANCE, &params, |_| true));
    }
    Ok(out)
}

fn controller(seed: u64) -> numcore::Result<Vec<BlockCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SacConfig {
        hidden: vec![16, 16],
        ..SacConfig::default()
    };
    let action_dim = 2;
    let agent = SacAgent::new(STATE_DIM, action_dim, cfg, &mut rng);
    let batch = 8;
    let states = uniform(batch, STATE_DIM, 1.0, &mut rng);
    let actions = uniform(batch, action_dim, 1.0, &mut rng);
    let goal = uniform(batch, 1, 1.0, &mut rng);
    let noise_seed: u64 = rng.random();

    let actor = check(&agent.actor, BLOCK_TOLERANCE, seed, |s, tape| {
        // Same reparameterisation noise on every evaluation.
        let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
        let (loss, _) = agent.actor_loss_on(tape, &states, Some(s), &mut noise).map_err(control_error)?;
        Ok(loss)
    })?;
    let mut out = vec![block("controller actor", BLOCK_TOLERANCE, &actor, |_| true)];
    for (name, store) in [("controller critic 1", &agent.critic1), ("controller critic 2", &agent.critic2)] {
        let params = check(store, BLOCK_TOLERANCE, seed, |s, tape| {
            agent.critic_loss_on(tape, s, &states, &actions, &goal)
        })?;
        out.push(block(name, BLOCK_TOLERANCE, &params, |_| true));
    }
    Ok(out)
}

/// Runs every block check; the report lists one entry per block.
pub fn check_all_blocks(seed: u64) -> numcore::Result<Vec<BlockCheck>> {
    let mut out = autoencoder(seed)?;
    out.extend(transformer_blocks(seed)?);
    out.extend(full_pathways(seed)?);
    out.extend(controller(seed)?);
    Ok(out)
}
