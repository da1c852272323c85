//! One pathway: input projection, post-norm attention layers, two-part head.

use numcore::{glorot, Linear, ParamId, ParamStore, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use super::context::EventContext;
use super::encoding::temporal_encoding_table;
use super::{
    ModelConfig, ModelError, CONTEXT_DIM, EDGE_EPS, REGIME_EMBED_DIM, REGIME_SIGNAL_DIM, STOCK_EMBED_DIM,
    VIX_LEVELS,
};
use crate::marketdata::N_FEATURES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Plain features; trained on low-error stock-days.
    Normal,
    /// Features plus the 12-dimensional event context; trained on high-error stock-days.
    Event,
    /// Features plus `[e/τ₀, regime flag]`; the single pathway of the no-dual ablation.
    Conditioned,
}

impl Variant {
    pub fn extra_inputs(self) -> usize {
        match self {
            Variant::Normal => 0,
            Variant::Event => CONTEXT_DIM,
            Variant::Conditioned => REGIME_SIGNAL_DIM,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Normal => "normal",
            Variant::Event => "event",
            Variant::Conditioned => "single",
        }
    }
}

/// One window of `n_stocks × steps` tokens, rows stock-major.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowInput {
    pub n_stocks: usize,
    pub steps: usize,
    /// `[N·T, 17]` normalised features.
    pub features: Tensor,
    /// Per token; event pathway only.
    pub context: Option<Vec<EventContext>>,
    /// `[N·T, 2]`; conditioned pathway only.
    pub regime_signal: Option<Tensor>,
    /// Per token normalised close added to the head deltas when anchoring.
    pub anchor: Option<Vec<f64>>,
}

impl WindowInput {
    pub fn tokens(&self) -> usize {
        self.n_stocks * self.steps
    }
}

/// Tape handles for a forward pass, both `[N·T, |H|]`.
#[derive(Clone, Copy, Debug)]
pub struct PathwayOutput {
    pub pred: Var,
    pub prob: Var,
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    norm1: (ParamId, ParamId),
    ff_in: Linear,
    ff_out: Linear,
    norm2: (ParamId, ParamId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathwayModel {
    pub variant: Variant,
    pub config: ModelConfig,
    pub store: ParamStore,
    /// Static `N×N` prior feeding the first layer.
    pub edges: Tensor,
    stock_embedding: ParamId,
    regime_embedding: Option<ParamId>,
    input: Linear,
    layers: Vec<Layer>,
    edge_weight: ParamId,
    edge_offset: ParamId,
    head: Linear,
}

fn layer_norm_params(store: &mut ParamStore, name: &str, d: usize) -> (ParamId, ParamId) {
    (
        store.add(format!("{name}.gain"), Tensor::full(1, d, 1.0)),
        store.add(format!("{name}.bias"), Tensor::zeros(1, d)),
    )
}

fn dropout(tape: &mut Tape, x: Var, p: f64, rng: &mut Option<&mut ChaCha8Rng>) -> numcore::Result<Var> {
    match rng {
        Some(r) if p > 0.0 => tape.dropout(x, p, &mut **r),
        _ => Ok(x),
    }
}

impl PathwayModel {
    pub fn new(
        variant: Variant,
        config: ModelConfig,
        edges: Tensor,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let n = edges.rows();
        if edges.shape() != [n, n] || n == 0 {
            return Err(ModelError::Shape(format!("edge prior must be square, got {:?}", edges.shape())));
        }
        let d = config.d_model;
        let mut store = ParamStore::new();
        let stock_embedding = store.add(format!("{prefix}.stock_embedding"), glorot(n, STOCK_EMBED_DIM, rng));
        let regime_embedding = (variant == Variant::Event)
            .then(|| store.add(format!("{prefix}.regime_embedding"), glorot(VIX_LEVELS, REGIME_EMBED_DIM, rng)));
        let in_dim = N_FEATURES + d + STOCK_EMBED_DIM + variant.extra_inputs();
        let input = Linear::new(&mut store, &format!("{prefix}.input"), in_dim, d, true, rng);
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let name = format!("{prefix}.layer{l}");
            layers.push(Layer {
                query: Linear::new(&mut store, &format!("{name}.query"), d, d, false, rng),
                key: Linear::new(&mut store, &format!("{name}.key"), d, d, false, rng),
                value: Linear::new(&mut store, &format!("{name}.value"), d, d, false, rng),
                output: Linear::new(&mut store, &format!("{name}.output"), d, d, true, rng),
                norm1: layer_norm_params(&mut store, &format!("{name}.norm1"), d),
                ff_in: Linear::new(&mut store, &format!("{name}.ff_in"), d, config.d_ff, true, rng),
                ff_out: Linear::new(&mut store, &format!("{name}.ff_out"), config.d_ff, d, true, rng),
                norm2: layer_norm_params(&mut store, &format!("{name}.norm2"), d),
            });
        }
        let edge_weight = store.add(format!("{prefix}.edge.weight"), glorot(d, 2, rng));
        let edge_offset = store.add(format!("{prefix}.edge.bias"), Tensor::zeros(1, 1));
        let hz = config.horizons.len();
        let head = Linear::new(&mut store, &format!("{prefix}.head"), d, 2 * hz, true, rng);
        if config.anchor {
            // Anchored deltas start at zero: an untrained pathway forecasts persistence.
            let w = store.get_mut(head.weight);
            for r in 0..d {
                for c in 0..hz {
                    w.set(r, c, 0.0);
                }
            }
        }
        Ok(Self {
            variant,
            config,
            store,
            edges,
            stock_embedding,
            regime_embedding,
            input,
            layers,
            edge_weight,
            edge_offset,
            head,
        })
    }

    pub fn n_stocks(&self) -> usize {
        self.edges.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.input.fan_in
    }

    pub fn n_horizons(&self) -> usize {
        self.config.horizons.len()
    }

    pub fn head(&self) -> Linear {
        self.head
    }

    pub fn stock_embedding(&self) -> ParamId {
        self.stock_embedding
    }

    pub fn regime_embedding(&self) -> Option<ParamId> {
        self.regime_embedding
    }

    /// `(w_e, b_e)` of the edge refinement; `w_e` is `[d_model, 2]`, columns
    /// acting on the attending and the attended node.
    pub fn edge_params(&self) -> (ParamId, ParamId) {
        (self.edge_weight, self.edge_offset)
    }

    fn check(&self, input: &WindowInput) -> Result<(), ModelError> {
        let l = input.tokens();
        if input.n_stocks != self.n_stocks() {
            return Err(ModelError::Shape(format!(
                "window has {} stocks, model {}",
                input.n_stocks,
                self.n_stocks()
            )));
        }
        if input.steps == 0 || input.steps > self.config.seq_len {
            return Err(ModelError::Shape(format!(
                "window length {} outside 1..={}",
                input.steps, self.config.seq_len
            )));
        }
        if input.features.shape() != [l, N_FEATURES] {
            return Err(ModelError::Shape(format!(
                "features {:?}, expected [{l}, {N_FEATURES}]",
                input.features.shape()
            )));
        }
        let mismatch = |problem| Err(ModelError::VariantMismatch { variant: self.variant, problem });
        match (self.variant, &input.context, &input.regime_signal) {
            (Variant::Event, None, _) => return mismatch("requires event context"),
            (Variant::Normal | Variant::Conditioned, Some(_), _) => return mismatch("does not take event context"),
            (Variant::Conditioned, _, None) => return mismatch("requires the regime signal"),
            (Variant::Normal | Variant::Event, _, Some(_)) => return mismatch("does not take a regime signal"),
            _ => {}
        }
        if input.context.as_ref().is_some_and(|c| c.len() != l) {
            return Err(ModelError::Shape(format!("event context needs {l} tokens")));
        }
        if input.regime_signal.as_ref().is_some_and(|s| s.shape() != [l, REGIME_SIGNAL_DIM]) {
            return Err(ModelError::Shape(format!("regime signal must be [{l}, {REGIME_SIGNAL_DIM}]")));
        }
        match (&input.anchor, self.config.anchor) {
            (Some(a), true) if a.len() == l => Ok(()),
            (None, false) => Ok(()),
            _ => Err(ModelError::Shape(format!(
                "anchored = {} needs exactly one anchor per token",
                self.config.anchor
            ))),
        }
    }

    /// Log-domain causal bias `[N·T, N·T]` for layer `layer` given its input states.
    pub fn edge_bias(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        layer: usize,
        h: Var,
        n: usize,
        steps: usize,
    ) -> Result<Var, ModelError> {
        let e = if layer == 0 {
            let mut data = Vec::with_capacity(n * steps * n);
            for i in 0..n {
                for _ in 0..steps {
                    data.extend_from_slice(self.edges.row_slice(i));
                }
            }
            tape.leaf(Tensor::matrix(n * steps, n, data)?)
        } else {
            let w = tape.param(store, self.edge_weight);
            let b = tape.param(store, self.edge_offset);
            let hw = tape.matmul(h, w)?;
            let from = tape.slice_cols(hw, 0, 1)?;
            let to = tape.slice_cols(hw, 1, 2)?;
            let z = tape.pair_sum(from, to, n, steps)?;
            let z = tape.add_scalar(z, b)?;
            tape.sigmoid(z)?
        };
        Ok(tape.edge_bias(e, n, steps, EDGE_EPS)?)
    }

    /// Multi-head attention plus feed-forward, each followed by dropout,
    /// residual addition and layer normalisation.
    pub fn attention_layer(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        layer: usize,
        h: Var,
        bias: Var,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, ModelError> {
        let p = &self.layers[layer];
        let dk = self.config.head_dim();
        let q = p.query.forward(tape, store, h)?;
        let k = p.key.forward(tape, store, h)?;
        let v = p.value.forward(tape, store, h)?;
        let mut heads = Vec::with_capacity(self.config.n_heads);
        for head in 0..self.config.n_heads {
            let (a, b) = (head * dk, (head + 1) * dk);
            let qh = tape.slice_cols(q, a, b)?;
            let kh = tape.slice_cols(k, a, b)?;
            let vh = tape.slice_cols(v, a, b)?;
            let s = tape.matmul_nt(qh, kh)?;
            let s = tape.scale(s, 1.0 / (dk as f64).sqrt())?;
            let s = tape.add(s, bias)?;
            let w = tape.softmax_rows(s)?;
            heads.push(tape.matmul(w, vh)?);
        }
        let att = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        let att = p.output.forward(tape, store, att)?;
        let att = dropout(tape, att, self.config.dropout, &mut rng)?;
        let x = tape.add(h, att)?;
        let (g1, b1) = (tape.param(store, p.norm1.0), tape.param(store, p.norm1.1));
        let x = tape.layer_norm(x, g1, b1)?;
        let f = p.ff_in.forward(tape, store, x)?;
        let f = tape.relu(f)?;
        let f = p.ff_out.forward(tape, store, f)?;
        let f = dropout(tape, f, self.config.dropout, &mut rng)?;
        let y = tape.add(x, f)?;
        let (g2, b2) = (tape.param(store, p.norm2.0), tape.param(store, p.norm2.1));
        Ok(tape.layer_norm(y, g2, b2)?)
    }

    /// Token states entering layer 0.
    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, input: &WindowInput) -> Result<Var, ModelError> {
        self.check(input)?;
        let (n, steps) = (input.n_stocks, input.steps);
        let l = n * steps;
        let mut parts = vec![
            tape.leaf(input.features.clone()),
            tape.leaf(temporal_encoding_table(n, steps, self.config.d_model)),
        ];
        let table = tape.param(store, self.stock_embedding);
        parts.push(tape.gather_rows(table, (0..l).map(|r| r / steps).collect())?);
        if let (Some(ctx), Some(id)) = (&input.context, self.regime_embedding) {
            let table = tape.param(store, id);
            parts.push(tape.gather_rows(table, ctx.iter().map(|c| c.vix_level).collect())?);
            let fixed: Vec<f64> = ctx.iter().flat_map(|c| c.fixed).collect();
            parts.push(tape.leaf(Tensor::matrix(l, super::FIXED_CONTEXT_DIM, fixed)?));
        }
        if let Some(sig) = &input.regime_signal {
            parts.push(tape.leaf(sig.clone()));
        }
        let x = tape.concat_cols(&parts)?;
        Ok(self.input.forward(tape, store, x)?)
    }

    /// Full pass. Dropout is active iff `rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: &WindowInput,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<PathwayOutput, ModelError> {
        let mut h = self.embed(tape, store, input)?;
        let (n, steps) = (input.n_stocks, input.steps);
        for layer in 0..self.layers.len() {
            let bias = self.edge_bias(tape, store, layer, h, n, steps)?;
            h = self.attention_layer(tape, store, layer, h, bias, rng.as_deref_mut())?;
        }
        let out = self.head.forward(tape, store, h)?;
        let hz = self.n_horizons();
        let delta = tape.slice_cols(out, 0, hz)?;
        let logits = tape.slice_cols(out, hz, 2 * hz)?;
        let prob = tape.sigmoid(logits)?;
        let pred = match &input.anchor {
            Some(a) => {
                let data = a.iter().flat_map(|&v| std::iter::repeat_n(v, hz)).collect();
                let anchor = tape.leaf(Tensor::matrix(a.len(), hz, data)?);
                tape.add(delta, anchor)?
            }
            None => delta,
        };
        Ok(PathwayOutput { pred, prob })
    }

    /// Inference without dropout: `(pred, prob)` values `[N·T, |H|]`.
    pub fn predict(&self, input: &WindowInput) -> Result<(Tensor, Tensor), ModelError> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &self.store, input, None)?;
        Ok((tape.value(out.pred).clone(), tape.value(out.prob).clone()))
    }
}
