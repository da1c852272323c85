//! Reverse-mode differentiation over a linear record of primitive operations.
//!
//! A [`Tape`] owns every intermediate value. Each primitive method computes
//! its output eagerly, appends the operation to the record and returns a
//! [`Var`] handle. Because inputs always exist before the operation that
//! consumes them, the record is topologically ordered by construction and the
//! backward pass is a single reverse sweep.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{NumError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Layout, Tensor};

/// Additive logit used for disallowed attention pairs.
pub const MASKED_LOGIT: f64 = -1e9;

/// Epsilon inside layer normalisation.
pub const LAYER_NORM_EPS: f64 = 1e-10;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    /// `x[m,n] + b[1,n]` broadcast over rows.
    AddRow(Var, Var),
    /// `x · s` with `s` a `[1,1]` value.
    MulScalarVar(Var, Var),
    /// `x + s` with `s` a `[1,1]` value.
    AddScalarVar(Var, Var),
    Scale(Var, f64),
    Offset(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var },
    Dropout { x: Var, mask: Vec<f64> },
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize, usize),
    Sum(Var),
    Mean(Var),
    /// Row sums, `[m,n] → [m,1]`.
    SumCols(Var),
    GatherRows(Var, Vec<usize>),
    /// `out[(i,t), j] = u[(i,t)] + v[(j,t)]` over node-major tokens.
    PairSum { u: Var, v: Var, nodes: usize, steps: usize },
    /// Causal graph bias: `ln(e[(i,t), j] + eps)` when `t' ≤ t`, else [`MASKED_LOGIT`].
    EdgeBias { e: Var, nodes: usize, steps: usize, eps: f64 },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf | Param(_) => vec![],
            MatMul(a, b) | MatMulNT(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Min(a, b)
            | AddRow(a, b) | MulScalarVar(a, b) | AddScalarVar(a, b) => vec![*a, *b],
            Scale(x, _) | Offset(x, _) | Relu(x) | Sigmoid(x) | Tanh(x) | Exp(x) | Log(x)
            | Square(x) | Clamp(x, _, _) | SoftmaxRows(x) | SliceCols(x, _, _)
            | SliceRows(x, _, _) | Sum(x) | Mean(x) | SumCols(x) | GatherRows(x, _) => vec![*x],
            Dropout { x, .. } => vec![*x],
            LayerNorm { x, gain, bias } => vec![*x, *gain, *bias],
            ConcatCols(v) | ConcatRows(v) => v.clone(),
            PairSum { u, v, .. } => vec![*u, *v],
            EdgeBias { e, .. } => vec![*e],
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            Param(_) => "param",
            MatMul(..) => "matmul",
            MatMulNT(..) => "matmul_nt",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Min(..) => "min",
            AddRow(..) => "add_row",
            MulScalarVar(..) => "mul_scalar",
            AddScalarVar(..) => "add_scalar",
            Scale(..) => "scale",
            Offset(..) => "offset",
            Relu(_) => "relu",
            Sigmoid(_) => "sigmoid",
            Tanh(_) => "tanh",
            Exp(_) => "exp",
            Log(_) => "log",
            Square(_) => "square",
            Clamp(..) => "clamp",
            SoftmaxRows(_) => "softmax_rows",
            LayerNorm { .. } => "layer_norm",
            Dropout { .. } => "dropout",
            ConcatCols(_) => "concat_cols",
            SliceCols(..) => "slice_cols",
            ConcatRows(_) => "concat_rows",
            SliceRows(..) => "slice_rows",
            Sum(_) => "sum",
            Mean(_) => "mean",
            SumCols(_) => "sum_cols",
            GatherRows(..) => "gather_rows",
            PairSum { .. } => "pair_sum",
            EdgeBias { .. } => "edge_bias",
        }
    }
}

/// Per-row statistics kept by layer normalisation for its backward pass.
#[derive(Clone, Debug)]
struct NormCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

#[derive(Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Tensor>,
    norm_cache: BTreeMap<usize, NormCache>,
    param_vars: BTreeMap<ParamId, Var>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NumError {
    NumError::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, a, b));
    }
    Ok(())
}

fn scalar_shape(op: &'static str, x: &Tensor, s: &Tensor) -> Result<()> {
    if s.len() != 1 {
        return Err(shape_err(op, x, s));
    }
    Ok(())
}

/// Forward evaluation shared by recording and replay.
fn compute(op: &Op, vals: &[Tensor]) -> Result<(Tensor, Option<NormCache>)> {
    use Op::*;
    let v = |x: &Var| &vals[x.0];
    let out = match op {
        Leaf | Param(_) => unreachable!("leaves are not recomputed"),
        MatMul(a, b) => {
            let (a, b) = (v(a), v(b));
            let (m, k) = a.require_matrix("matmul")?;
            let (k2, n) = b.require_matrix("matmul")?;
            if k != k2 {
                return Err(shape_err("matmul", a, b));
            }
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, a.data(), Layout::Normal, b.data(), Layout::Normal, &mut out, false);
            Tensor::from_parts(vec![m, n], out)
        }
        MatMulNT(a, b) => {
            let (a, b) = (v(a), v(b));
            let (m, k) = a.require_matrix("matmul_nt")?;
            let (n, k2) = b.require_matrix("matmul_nt")?;
            if k != k2 {
                return Err(shape_err("matmul_nt", a, b));
            }
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, a.data(), Layout::Normal, b.data(), Layout::Transposed, &mut out, false);
            Tensor::from_parts(vec![m, n], out)
        }
        Add(a, b) | Sub(a, b) | Mul(a, b) | Min(a, b) => {
            let (ta, tb) = (v(a), v(b));
            same_shape(op.name(), ta, tb)?;
            let f: fn(f64, f64) -> f64 = match op {
                Add(..) => |x, y| x + y,
                Sub(..) => |x, y| x - y,
                Mul(..) => |x, y| x * y,
                _ => f64::min,
            };
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_parts(ta.shape().to_vec(), data)
        }
        AddRow(x, b) => {
            let (tx, tb) = (v(x), v(b));
            let (m, n) = tx.require_matrix("add_row")?;
            if tb.len() != n {
                return Err(shape_err("add_row", tx, tb));
            }
            let mut data = tx.data().to_vec();
            for r in 0..m {
                for (d, bb) in data[r * n..(r + 1) * n].iter_mut().zip(tb.data()) {
                    *d += bb;
                }
            }
            Tensor::from_parts(vec![m, n], data)
        }
        MulScalarVar(x, s) => {
            let (tx, ts) = (v(x), v(s));
            scalar_shape("mul_scalar", tx, ts)?;
            tx.map(|a| a * ts.item())
        }
        AddScalarVar(x, s) => {
            let (tx, ts) = (v(x), v(s));
            scalar_shape("add_scalar", tx, ts)?;
            tx.map(|a| a + ts.item())
        }
        Scale(x, c) => v(x).map(|a| a * c),
        Offset(x, c) => v(x).map(|a| a + c),
        Relu(x) => v(x).map(|a| a.max(0.0)),
        Sigmoid(x) => v(x).map(sigmoid),
        Tanh(x) => v(x).map(f64::tanh),
        Exp(x) => v(x).map(f64::exp),
        Log(x) => {
            let tx = v(x);
            if tx.data().iter().any(|&a| a <= 0.0) {
                return Err(NumError::NonFinite { op: "log" });
            }
            tx.map(f64::ln)
        }
        Square(x) => v(x).map(|a| a * a),
        Clamp(x, lo, hi) => v(x).map(|a| a.clamp(*lo, *hi)),
        SoftmaxRows(x) => {
            let tx = v(x);
            let (m, n) = tx.require_matrix("softmax_rows")?;
            let mut data = tx.data().to_vec();
            for r in 0..m {
                softmax_in_place(&mut data[r * n..(r + 1) * n]);
            }
            Tensor::from_parts(vec![m, n], data)
        }
        LayerNorm { x, gain, bias } => {
            let (tx, tg, tb) = (v(x), v(gain), v(bias));
            let (m, n) = tx.require_matrix("layer_norm")?;
            if tg.len() != n || tb.len() != n {
                return Err(shape_err("layer_norm", tx, tg));
            }
            let mut xhat = vec![0.0; m * n];
            let mut rstd = vec![0.0; m];
            let mut out = vec![0.0; m * n];
            for r in 0..m {
                let row = &tx.data()[r * n..(r + 1) * n];
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
                let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                rstd[r] = rs;
                for c in 0..n {
                    let h = (row[c] - mean) * rs;
                    xhat[r * n + c] = h;
                    out[r * n + c] = h * tg.data()[c] + tb.data()[c];
                }
            }
            return Ok((
                Tensor::from_parts(vec![m, n], out),
                Some(NormCache { xhat, rstd }),
            ));
        }
        Dropout { x, mask } => {
            let tx = v(x);
            let data = tx.data().iter().zip(mask).map(|(a, m)| a * m).collect();
            Tensor::from_parts(tx.shape().to_vec(), data)
        }
        ConcatCols(parts) => {
            let m = v(&parts[0]).rows();
            let mut widths = Vec::with_capacity(parts.len());
            for p in parts {
                let t = v(p);
                t.require_matrix("concat_cols")?;
                if t.rows() != m {
                    return Err(shape_err("concat_cols", v(&parts[0]), t));
                }
                widths.push(t.cols());
            }
            let n: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(m * n);
            for r in 0..m {
                for p in parts {
                    data.extend_from_slice(v(p).row_slice(r));
                }
            }
            Tensor::from_parts(vec![m, n], data)
        }
        SliceCols(x, s, e) => {
            let tx = v(x);
            let (m, n) = tx.require_matrix("slice_cols")?;
            if s >= e || *e > n {
                return Err(NumError::Invalid(format!("slice_cols {s}..{e} of {n}")));
            }
            let mut data = Vec::with_capacity(m * (e - s));
            for r in 0..m {
                data.extend_from_slice(&tx.row_slice(r)[*s..*e]);
            }
            Tensor::from_parts(vec![m, e - s], data)
        }
        ConcatRows(parts) => {
            let n = v(&parts[0]).cols();
            let mut data = Vec::new();
            let mut m = 0;
            for p in parts {
                let t = v(p);
                t.require_matrix("concat_rows")?;
                if t.cols() != n {
                    return Err(shape_err("concat_rows", v(&parts[0]), t));
                }
                m += t.rows();
                data.extend_from_slice(t.data());
            }
            Tensor::from_parts(vec![m, n], data)
        }
        SliceRows(x, s, e) => {
            let tx = v(x);
            let (m, n) = tx.require_matrix("slice_rows")?;
            if s >= e || *e > m {
                return Err(NumError::Invalid(format!("slice_rows {s}..{e} of {m}")));
            }
            Tensor::from_parts(vec![e - s, n], tx.data()[s * n..e * n].to_vec())
        }
        Sum(x) => Tensor::scalar(v(x).sum()),
        Mean(x) => {
            let tx = v(x);
            Tensor::scalar(tx.sum() / tx.len() as f64)
        }
        SumCols(x) => {
            let tx = v(x);
            let (m, _) = tx.require_matrix("sum_cols")?;
            let data = (0..m).map(|r| tx.row_slice(r).iter().sum()).collect();
            Tensor::from_parts(vec![m, 1], data)
        }
        GatherRows(table, idx) => {
            let t = v(table);
            let (rows, n) = t.require_matrix("gather_rows")?;
            let mut data = Vec::with_capacity(idx.len() * n);
            for &i in idx {
                if i >= rows {
                    return Err(NumError::Invalid(format!("gather index {i} >= {rows}")));
                }
                data.extend_from_slice(t.row_slice(i));
            }
            Tensor::from_parts(vec![idx.len(), n], data)
        }
        PairSum { u, v: vv, nodes, steps } => {
            let (tu, tv) = (v(u), v(vv));
            let l = nodes * steps;
            if tu.len() != l || tv.len() != l {
                return Err(shape_err("pair_sum", tu, tv));
            }
            let mut data = vec![0.0; l * nodes];
            for i in 0..*nodes {
                for t in 0..*steps {
                    let row = i * steps + t;
                    for j in 0..*nodes {
                        data[row * nodes + j] = tu.data()[row] + tv.data()[j * steps + t];
                    }
                }
            }
            Tensor::from_parts(vec![l, *nodes], data)
        }
        EdgeBias { e, nodes, steps, eps } => {
            let te = v(e);
            let l = nodes * steps;
            if te.shape() != [l, *nodes] {
                return Err(NumError::Shape {
                    op: "edge_bias",
                    lhs: te.shape().to_vec(),
                    rhs: vec![l, *nodes],
                });
            }
            if te.data().iter().any(|&a| a + eps <= 0.0) {
                return Err(NumError::NonFinite { op: "edge_bias" });
            }
            let mut data = vec![MASKED_LOGIT; l * l];
            for i in 0..*nodes {
                for t in 0..*steps {
                    let q = i * steps + t;
                    let out_row = &mut data[q * l..(q + 1) * l];
                    for j in 0..*nodes {
                        let b = (te.data()[q * nodes + j] + eps).ln();
                        out_row[j * steps..=j * steps + t].fill(b);
                    }
                }
            }
            Tensor::from_parts(vec![l, l], data)
        }
    };
    Ok((out, None))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for a in row.iter_mut() {
        *a = (*a - max).exp();
        total += *a;
    }
    for a in row.iter_mut() {
        *a /= total;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor> {
        self.values.get(v.0).ok_or(NumError::UnknownVar(v.0))
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.ops[v.0]
    }

    fn push(&mut self, op: Op, value: Tensor, cache: Option<NormCache>) -> Var {
        let id = self.values.len();
        if let Some(c) = cache {
            self.norm_cache.insert(id, c);
        }
        self.ops.push(op);
        self.values.push(value);
        Var(id)
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        for input in op.inputs() {
            if input.0 >= self.values.len() {
                return Err(NumError::UnknownVar(input.0));
            }
        }
        let (value, cache) = compute(&op, &self.values)?;
        let value = value.check_finite(op.name())?;
        Ok(self.push(op, value, cache))
    }

    /// Records a constant input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, None)
    }

    /// Records a trainable parameter; repeated calls return the same handle.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(Op::Param(id), store.get(id).clone(), None);
        self.param_vars.insert(id, v);
        v
    }

    pub fn param_vars(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.param_vars.iter().map(|(p, v)| (*p, *v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMulNT(a, b))
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul(a, b))
    }
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Min(a, b))
    }
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.record(Op::AddRow(x, bias))
    }
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        self.record(Op::MulScalarVar(x, s))
    }
    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        self.record(Op::AddScalarVar(x, s))
    }
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.record(Op::Scale(x, c))
    }
    pub fn offset(&mut self, x: Var, c: f64) -> Result<Var> {
        self.record(Op::Offset(x, c))
    }
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Relu(x))
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Sigmoid(x))
    }
    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Tanh(x))
    }
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Exp(x))
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Log(x))
    }
    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Square(x))
    }
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.record(Op::Clamp(x, lo, hi))
    }
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.record(Op::SoftmaxRows(x))
    }
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        self.record(Op::LayerNorm { x, gain, bias })
    }
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(NumError::Invalid("concat of nothing".into()));
        }
        self.record(Op::ConcatCols(parts.to_vec()))
    }
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.record(Op::SliceCols(x, start, end))
    }
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(NumError::Invalid("concat of nothing".into()));
        }
        self.record(Op::ConcatRows(parts.to_vec()))
    }
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.record(Op::SliceRows(x, start, end))
    }
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Sum(x))
    }
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Mean(x))
    }
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        self.record(Op::SumCols(x))
    }
    pub fn gather_rows(&mut self, table: Var, idx: Vec<usize>) -> Result<Var> {
        self.record(Op::GatherRows(table, idx))
    }
    pub fn pair_sum(&mut self, u: Var, v: Var, nodes: usize, steps: usize) -> Result<Var> {
        self.record(Op::PairSum { u, v, nodes, steps })
    }
    pub fn edge_bias(&mut self, e: Var, nodes: usize, steps: usize, eps: f64) -> Result<Var> {
        self.record(Op::EdgeBias { e, nodes, steps, eps })
    }

    /// Inverted dropout: kept entries are scaled by `1/(1−p)`.
    /// `p == 0` records nothing and returns `x`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(NumError::Invalid(format!("dropout rate {p}")));
        }
        let n = self.try_value(x)?.len();
        let keep = 1.0 / (1.0 - p);
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.record(Op::Dropout { x, mask })
    }

    /// Dropout with an explicit mask of per-entry multipliers.
    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.try_value(x)?.len() {
            return Err(NumError::Invalid("dropout mask length".into()));
        }
        self.record(Op::Dropout { x, mask })
    }

    /// Re-evaluates every recorded operation from the leaves and parameters.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut vals: Vec<Tensor> = Vec::with_capacity(self.values.len());
        for (i, op) in self.ops.iter().enumerate() {
            match op {
                Op::Leaf | Op::Param(_) => vals.push(self.values[i].clone()),
                _ => vals.push(compute(op, &vals)?.0),
            }
        }
        Ok(vals)
    }

    /// Backward pass from a scalar output with unit seed.
    pub fn backward_scalar(&self, out: Var) -> Result<Gradients> {
        self.backward(out, Tensor::scalar(1.0))
    }

    /// Propagates `seed = ∂L/∂out` back to every recorded value.
    pub fn backward(&self, out: Var, seed: Tensor) -> Result<Gradients> {
        let ov = self.try_value(out)?;
        if ov.len() != seed.len() {
            return Err(shape_err("backward", ov, &seed));
        }
        let seed = Tensor::from_parts(ov.shape().to_vec(), seed.into_data());
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.param_vars.clone(),
            shapes: self.param_vars.iter().map(|(p, v)| (*p, self.values[v.0].shape().to_vec())).collect(),
        })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        use Op::*;
        let val = |v: &Var| &self.values[v.0];
        let out = &self.values[i];
        match &self.ops[i] {
            Leaf | Param(_) => {}
            MatMul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                let ga = slot(grads, *a, ta);
                gemm(m, n, k, g.data(), Layout::Normal, tb.data(), Layout::Transposed, ga.data_mut(), true);
                let gb = slot(grads, *b, tb);
                gemm(k, m, n, ta.data(), Layout::Transposed, g.data(), Layout::Normal, gb.data_mut(), true);
            }
            MatMulNT(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                let ga = slot(grads, *a, ta);
                gemm(m, n, k, g.data(), Layout::Normal, tb.data(), Layout::Normal, ga.data_mut(), true);
                let gb = slot(grads, *b, tb);
                gemm(n, m, k, g.data(), Layout::Transposed, ta.data(), Layout::Normal, gb.data_mut(), true);
            }
            Add(a, b) => {
                slot(grads, *a, val(a)).add_assign(g);
                slot(grads, *b, val(b)).add_assign(g);
            }
            Sub(a, b) => {
                slot(grads, *a, val(a)).add_assign(g);
                let gb = slot(grads, *b, val(b));
                for (d, s) in gb.data_mut().iter_mut().zip(g.data()) {
                    *d -= s;
                }
            }
            Mul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                zip_acc(slot(grads, *a, ta), g, tb, |gg, y| gg * y);
                zip_acc(slot(grads, *b, tb), g, ta, |gg, x| gg * x);
            }
            Min(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let ga = slot(grads, *a, ta);
                for ((d, gg), (x, y)) in ga.data_mut().iter_mut().zip(g.data()).zip(ta.data().iter().zip(tb.data())) {
                    if x <= y {
                        *d += gg;
                    }
                }
                let gb = slot(grads, *b, tb);
                for ((d, gg), (x, y)) in gb.data_mut().iter_mut().zip(g.data()).zip(ta.data().iter().zip(tb.data())) {
                    if y < x {
                        *d += gg;
                    }
                }
            }
            AddRow(x, b) => {
                slot(grads, *x, val(x)).add_assign(g);
                let n = g.cols();
                let gb = slot(grads, *b, val(b));
                for r in 0..g.rows() {
                    for (d, s) in gb.data_mut().iter_mut().zip(&g.data()[r * n..(r + 1) * n]) {
                        *d += s;
                    }
                }
            }
            MulScalarVar(x, s) => {
                let (tx, ts) = (val(x), val(s));
                let sv = ts.item();
                zip_acc(slot(grads, *x, tx), g, tx, |gg, _| gg * sv);
                let dot: f64 = g.data().iter().zip(tx.data()).map(|(a, b)| a * b).sum();
                slot(grads, *s, ts).data_mut()[0] += dot;
            }
            AddScalarVar(x, s) => {
                slot(grads, *x, val(x)).add_assign(g);
                slot(grads, *s, val(s)).data_mut()[0] += g.sum();
            }
            Scale(x, c) => zip_acc(slot(grads, *x, val(x)), g, out, |gg, _| gg * c),
            Offset(x, _) => slot(grads, *x, val(x)).add_assign(g),
            Relu(x) => {
                let tx = val(x);
                zip_acc(slot(grads, *x, tx), g, tx, |gg, a| if a > 0.0 { gg } else { 0.0 });
            }
            Sigmoid(x) => zip_acc(slot(grads, *x, val(x)), g, out, |gg, y| gg * y * (1.0 - y)),
            Tanh(x) => zip_acc(slot(grads, *x, val(x)), g, out, |gg, y| gg * (1.0 - y * y)),
            Exp(x) => zip_acc(slot(grads, *x, val(x)), g, out, |gg, y| gg * y),
            Log(x) => {
                let tx = val(x);
                zip_acc(slot(grads, *x, tx), g, tx, |gg, a| gg / a);
            }
            Square(x) => {
                let tx = val(x);
                zip_acc(slot(grads, *x, tx), g, tx, |gg, a| 2.0 * gg * a);
            }
            Clamp(x, lo, hi) => {
                let tx = val(x);
                let (lo, hi) = (*lo, *hi);
                zip_acc(slot(grads, *x, tx), g, tx, |gg, a| if a >= lo && a <= hi { gg } else { 0.0 });
            }
            SoftmaxRows(x) => {
                let (m, n) = (out.rows(), out.cols());
                let gx = slot(grads, *x, val(x));
                for r in 0..m {
                    let y = &out.data()[r * n..(r + 1) * n];
                    let gr = &g.data()[r * n..(r + 1) * n];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..n {
                        gx.data_mut()[r * n + c] += y[c] * (gr[c] - dot);
                    }
                }
            }
            LayerNorm { x, gain, bias } => {
                let cache = &self.norm_cache[&i];
                let (m, n) = (out.rows(), out.cols());
                let tg = val(gain);
                {
                    let gg = slot(grads, *gain, tg);
                    for r in 0..m {
                        for c in 0..n {
                            gg.data_mut()[c] += g.data()[r * n + c] * cache.xhat[r * n + c];
                        }
                    }
                }
                {
                    let gb = slot(grads, *bias, val(bias));
                    for r in 0..m {
                        for c in 0..n {
                            gb.data_mut()[c] += g.data()[r * n + c];
                        }
                    }
                }
                let gx = slot(grads, *x, val(x));
                let nf = n as f64;
                let mut dxhat = vec![0.0; n];
                for r in 0..m {
                    let xh = &cache.xhat[r * n..(r + 1) * n];
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for c in 0..n {
                        dxhat[c] = g.data()[r * n + c] * tg.data()[c];
                        s1 += dxhat[c];
                        s2 += dxhat[c] * xh[c];
                    }
                    let rs = cache.rstd[r];
                    for c in 0..n {
                        gx.data_mut()[r * n + c] += rs / nf * (nf * dxhat[c] - s1 - xh[c] * s2);
                    }
                }
            }
            Dropout { x, mask } => {
                let gx = slot(grads, *x, val(x));
                for ((d, gg), m) in gx.data_mut().iter_mut().zip(g.data()).zip(mask) {
                    *d += gg * m;
                }
            }
            ConcatCols(parts) => {
                let (m, n) = (g.rows(), g.cols());
                let mut offset = 0;
                for p in parts {
                    let w = val(p).cols();
                    let gp = slot(grads, *p, val(p));
                    for r in 0..m {
                        for c in 0..w {
                            gp.data_mut()[r * w + c] += g.data()[r * n + offset + c];
                        }
                    }
                    offset += w;
                }
            }
            SliceCols(x, s, _) => {
                let tx = val(x);
                let (m, n, w) = (tx.rows(), tx.cols(), g.cols());
                let gx = slot(grads, *x, tx);
                for r in 0..m {
                    for c in 0..w {
                        gx.data_mut()[r * n + s + c] += g.data()[r * w + c];
                    }
                }
            }
            ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = val(p).len();
                    let gp = slot(grads, *p, val(p));
                    for (d, s) in gp.data_mut().iter_mut().zip(&g.data()[offset..offset + len]) {
                        *d += s;
                    }
                    offset += len;
                }
            }
            SliceRows(x, s, _) => {
                let tx = val(x);
                let n = tx.cols();
                let gx = slot(grads, *x, tx);
                for (d, src) in gx.data_mut()[s * n..s * n + g.len()].iter_mut().zip(g.data()) {
                    *d += src;
                }
            }
            Sum(x) => {
                let gv = g.item();
                slot(grads, *x, val(x)).data_mut().iter_mut().for_each(|d| *d += gv);
            }
            Mean(x) => {
                let tx = val(x);
                let gv = g.item() / tx.len() as f64;
                slot(grads, *x, tx).data_mut().iter_mut().for_each(|d| *d += gv);
            }
            SumCols(x) => {
                let tx = val(x);
                let n = tx.cols();
                let gx = slot(grads, *x, tx);
                for r in 0..g.rows() {
                    let gv = g.data()[r];
                    gx.data_mut()[r * n..(r + 1) * n].iter_mut().for_each(|d| *d += gv);
                }
            }
            GatherRows(table, idx) => {
                let tt = val(table);
                let n = tt.cols();
                let gt = slot(grads, *table, tt);
                for (r, &src) in idx.iter().enumerate() {
                    for c in 0..n {
                        gt.data_mut()[src * n + c] += g.data()[r * n + c];
                    }
                }
            }
            PairSum { u, v, nodes, steps } => {
                let (nodes, steps) = (*nodes, *steps);
                {
                    let gu = slot(grads, *u, val(u));
                    for row in 0..nodes * steps {
                        gu.data_mut()[row] += g.data()[row * nodes..(row + 1) * nodes].iter().sum::<f64>();
                    }
                }
                let gv = slot(grads, *v, val(v));
                for i in 0..nodes {
                    for t in 0..steps {
                        let row = i * steps + t;
                        for j in 0..nodes {
                            gv.data_mut()[j * steps + t] += g.data()[row * nodes + j];
                        }
                    }
                }
            }
            EdgeBias { e, nodes, steps, eps } => {
                let (nodes, steps) = (*nodes, *steps);
                let l = nodes * steps;
                let te = val(e);
                let ge = slot(grads, *e, te);
                for i in 0..nodes {
                    for t in 0..steps {
                        let q = i * steps + t;
                        let grow = &g.data()[q * l..(q + 1) * l];
                        for j in 0..nodes {
                            let s: f64 = grow[j * steps..=j * steps + t].iter().sum();
                            ge.data_mut()[q * nodes + j] += s / (te.data()[q * nodes + j] + eps);
                        }
                    }
                }
            }
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, like: &Tensor) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| like.zeros_like())
}

fn zip_acc(dst: &mut Tensor, g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) {
    for ((d, gg), o) in dst.data_mut().iter_mut().zip(g.data()).zip(other.data()) {
        *d += f(*gg, *o);
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<ParamId, Var>,
    shapes: BTreeMap<ParamId, Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to any recorded value, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every parameter recorded on the tape; unreached ones are zero.
    pub fn into_param_grads(self) -> ParamGrads {
        let mut grads = self.grads;
        let mut map = BTreeMap::new();
        for (p, v) in &self.params {
            let g = grads[v.0].take().unwrap_or_else(|| {
                let shape = self.shapes[p].clone();
                let n = shape.iter().product();
                Tensor::from_parts(shape, vec![0.0; n])
            });
            map.insert(*p, g);
        }
        ParamGrads(map)
    }
}

/// Parameter gradients keyed by [`ParamId`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGrads(pub BTreeMap<ParamId, Tensor>);

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.0.get(&id)
    }

    pub fn accumulate(&mut self, other: &ParamGrads) {
        for (id, g) in &other.0 {
            match self.0.get_mut(id) {
                Some(t) => t.add_assign(g),
                None => {
                    self.0.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.0.values_mut() {
            g.scale_assign(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().all(Tensor::is_finite)
    }

    pub fn sq_norm(&self) -> f64 {
        self.0.values().map(Tensor::sq_norm).sum()
    }

    /// Rescales so the global L2 norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.sq_norm().sqrt();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}
