use rand::Rng;

use super::kernels::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, sigmoid};
use super::lstm::{self, LstmCache};
use super::{ParamSet, Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Backward rule for an operation whose forward pass was computed outside
/// the tape (see [`Tape::custom`]).
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Gradients for each input given the gradient of the output. Entries may
    /// be `None` for inputs that do not need one.
    fn backward(&self, inputs: &[&Tensor], grad_output: &[f64]) -> Vec<Option<Vec<f64>>>;
}

#[derive(Clone, Copy)]
enum Bcast {
    Same,
    LeftScalar,
    RightScalar,
}

enum Op {
    Leaf { param: Option<String> },
    MatMul,
    Affine,
    Add(Bcast),
    Sub(Bcast),
    Mul(Bcast),
    Scale(f64),
    AddScalar,
    Sigmoid,
    Tanh,
    Relu,
    Log,
    Exp,
    Square,
    Sum,
    Mean,
    SoftmaxRows,
    LogSoftmaxRows,
    ConcatCols,
    SliceCols { start: usize },
    ScaleShiftCols { scale: Vec<f64> },
    CrossEntropy { targets: Vec<usize>, weights: Vec<f64>, total: f64 },
    Lstm(Box<LstmCache>),
    Custom(Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
    inputs: Vec<usize>,
    needs_grad: bool,
}

/// Records operations in execution order; nodes only ever reference
/// earlier nodes, so the record is topologically sorted by construction.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn dim_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Dimension { op, detail }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(TensorError::Numeric { op, detail: "non-finite value produced".into() })
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], idx: usize, delta: &[f64]) {
    match &mut grads[idx] {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last [`Tape::backward`] target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: Vec<usize>) -> Var {
        let needs_grad = match &op {
            Op::Leaf { .. } => value.requires_grad(),
            _ => inputs.iter().any(|&i| self.nodes[i].needs_grad),
        };
        self.nodes.push(Node { value, op, inputs, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn checked(&mut self, name: &'static str, value: Tensor, op: Op, inputs: Vec<usize>) -> Result<Var> {
        check_finite(name, &value)?;
        Ok(self.push(value, op, inputs))
    }

    /// Constant input; gradients are never propagated into it.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.push(t, Op::Leaf { param: None }, Vec::new())
    }

    /// Leaf that tracks gradients without being tied to a [`ParamSet`].
    pub fn leaf(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(true);
        self.push(t, Op::Leaf { param: None }, Vec::new())
    }

    /// Copies parameter `name` onto the tape.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        let t = params.get(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        Ok(self.push(t.detached(), Op::Leaf { param: Some(name.to_string()) }, Vec::new()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(dim_err("matmul", format!("{:?} · {:?}", ta.shape(), tb.shape())));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        gemm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        self.checked("matmul", value, Op::MatMul, vec![a.0, b.0])
    }

    /// `x · w + b` where `b` holds one value per output column.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tx.shape().len() != 2 || tw.shape().len() != 2 || tx.cols() != tw.rows() || tb.numel() != tw.cols() {
            return Err(dim_err(
                "affine",
                format!("{:?} · {:?} + {:?}", tx.shape(), tw.shape(), tb.shape()),
            ));
        }
        let (m, k, n) = (tx.rows(), tx.cols(), tw.cols());
        let mut out: Vec<f64> = (0..m).flat_map(|_| tb.data().iter().copied()).collect();
        gemm_acc(tx.data(), tw.data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        self.checked("affine", value, Op::Affine, vec![x.0, w.0, b.0])
    }

    fn binary_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(Bcast, Vec<usize>)> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            Ok((Bcast::Same, ta.shape().to_vec()))
        } else if ta.numel() == 1 {
            Ok((Bcast::LeftScalar, tb.shape().to_vec()))
        } else if tb.numel() == 1 {
            Ok((Bcast::RightScalar, ta.shape().to_vec()))
        } else {
            Err(dim_err(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())))
        }
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64) -> Result<(Tensor, Bcast)> {
        let (bc, shape) = self.binary_shape(name, a, b)?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let out: Vec<f64> = match bc {
            Bcast::Same => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::LeftScalar => db.iter().map(|&y| f(da[0], y)).collect(),
            Bcast::RightScalar => da.iter().map(|&x| f(x, db[0])).collect(),
        };
        Ok((Tensor::new(shape, out)?, bc))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, bc) = self.binary("add", a, b, |x, y| x + y)?;
        self.checked("add", v, Op::Add(bc), vec![a.0, b.0])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, bc) = self.binary("sub", a, b, |x, y| x - y)?;
        self.checked("sub", v, Op::Sub(bc), vec![a.0, b.0])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, bc) = self.binary("mul", a, b, |x, y| x * y)?;
        self.checked("mul", v, Op::Mul(bc), vec![a.0, b.0])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let t = self.value(a);
        let v = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * factor).collect())?;
        self.checked("scale", v, Op::Scale(factor), vec![a.0])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a);
        let v = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x + c).collect())?;
        self.checked("add_scalar", v, Op::AddScalar, vec![a.0])
    }

    fn unary(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let t = self.value(a);
        let v = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())?;
        self.checked(name, v, op, vec![a.0])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, Op::Sigmoid, sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, Op::Tanh, f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, Op::Relu, |x| x.max(0.0))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary("square", a, Op::Square, |x| x * x)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0 || !x.is_finite()) {
            return Err(TensorError::Numeric { op: "log", detail: format!("argument {bad} outside (0, inf)") });
        }
        self.unary("log", a, Op::Log, f64::ln)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, Op::Exp, f64::exp)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.checked("sum", Tensor::scalar(s), Op::Sum, vec![a.0])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.checked("mean", Tensor::scalar(s), Op::Mean, vec![a.0])
    }

    fn require_matrix(&self, op: &'static str, a: Var) -> Result<(usize, usize)> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(dim_err(op, format!("expected a matrix, got {:?}", t.shape())));
        }
        Ok((t.rows(), t.cols()))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.require_matrix("softmax_rows", a)?;
        check_finite("softmax_rows", self.value(a))?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let v = Tensor::new(vec![rows, cols], out)?;
        self.checked("softmax_rows", v, Op::SoftmaxRows, vec![a.0])
    }

    /// Row-wise log-softmax (log-sum-exp with max subtraction).
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.require_matrix("log_softmax_rows", a)?;
        check_finite("log_softmax_rows", self.value(a))?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let v = Tensor::new(vec![rows, cols], out)?;
        self.checked("log_softmax_rows", v, Op::LogSoftmaxRows, vec![a.0])
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(dim_err("concat_cols", "no inputs".into()));
        }
        let rows = self.require_matrix("concat_cols", parts[0])?.0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.require_matrix("concat_cols", p)?;
            if r != rows {
                return Err(dim_err("concat_cols", format!("row counts {rows} vs {r}")));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let v = Tensor::new(vec![rows, total], out)?;
        self.checked("concat_cols", v, Op::ConcatCols, parts.iter().map(|p| p.0).collect())
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (rows, cols) = self.require_matrix("slice_cols", a)?;
        if start + width > cols {
            return Err(dim_err("slice_cols", format!("{start}+{width} > {cols}")));
        }
        let t = self.value(a);
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            out.extend_from_slice(&t.row(r)[start..start + width]);
        }
        let v = Tensor::new(vec![rows, width], out)?;
        self.checked("slice_cols", v, Op::SliceCols { start }, vec![a.0])
    }

    /// `y[r, c] = x[r, c] · scale[c] + shift[c]` with constant `scale`/`shift`.
    pub fn scale_shift_cols(&mut self, a: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let (rows, cols) = self.require_matrix("scale_shift_cols", a)?;
        if scale.len() != cols || shift.len() != cols {
            return Err(dim_err("scale_shift_cols", format!("{cols} columns vs {} / {}", scale.len(), shift.len())));
        }
        let t = self.value(a);
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(cols) {
            for ((v, s), o) in row.iter_mut().zip(scale).zip(shift) {
                *v = *v * s + o;
            }
        }
        let v = Tensor::new(vec![rows, cols], out)?;
        self.checked("scale_shift_cols", v, Op::ScaleShiftCols { scale: scale.to_vec() }, vec![a.0])
    }

    /// Frame-averaged negative log-likelihood of `targets` under `logp`
    /// (a `T × C` matrix of log-posteriors). With weights the average is
    /// `Σ w_t·nll_t / Σ w_t`.
    pub fn cross_entropy(&mut self, logp: Var, targets: &[usize], weights: Option<&[f64]>) -> Result<Var> {
        let (rows, cols) = self.require_matrix("cross_entropy", logp)?;
        if targets.len() != rows {
            return Err(dim_err("cross_entropy", format!("{} targets for {rows} frames", targets.len())));
        }
        if let Some(&label) = targets.iter().find(|&&l| l >= cols) {
            return Err(TensorError::Label { label, classes: cols });
        }
        let weights = match weights {
            Some(w) if w.len() != rows => {
                return Err(dim_err("cross_entropy", format!("{} weights for {rows} frames", w.len())))
            }
            Some(w) => w.to_vec(),
            None => vec![1.0; rows],
        };
        let total: f64 = weights.iter().sum();
        let t = self.value(logp);
        let nll: f64 = targets.iter().enumerate().map(|(r, &y)| -weights[r] * t.at(r, y)).sum();
        let loss = if total > 0.0 { nll / total } else { 0.0 };
        self.checked(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy { targets: targets.to_vec(), weights, total },
            vec![logp.0],
        )
    }

    /// Inverted dropout: keeps each value with probability `1 − rate` and
    /// rescales survivors by `1 / (1 − rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(a);
        }
        let t = self.value(a);
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..t.numel()).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let mask = Tensor::new(t.shape().to_vec(), mask)?;
        let m = self.constant(mask);
        self.mul(a, m)
    }

    /// Single-direction LSTM over the rows of `x`; see [`super::recurrent_layer_forward`].
    pub fn lstm(&mut self, x: Var, wx: Var, wh: Var, b: Var, reverse: bool) -> Result<Var> {
        let (out, cache) = lstm::forward(self.value(x), self.value(wx), self.value(wh), self.value(b), reverse)?;
        self.checked("lstm", out, Op::Lstm(Box::new(cache)), vec![x.0, wx.0, wh.0, b.0])
    }

    /// Records an externally computed `output` of `inputs` with its backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Result<Var> {
        let name = op.name();
        self.checked(name, output, Op::Custom(op), inputs.iter().map(|v| v.0).collect())
    }

    /// Reverse sweep from a single-element `output`. Every node is visited
    /// once, in reverse recording order.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let out_value = &self.nodes[output.0].value;
        if out_value.numel() != 1 {
            return Err(TensorError::NonScalar(out_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.backward_node(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let inp = |k: usize| &self.nodes[node.inputs[k]];
        let wants = |k: usize| self.nodes[node.inputs[k]].needs_grad;
        let y = node.value.data();
        match &node.op {
            Op::Leaf { .. } => {}
            Op::MatMul | Op::Affine => {
                let (a, b) = (&inp(0).value, &inp(1).value);
                let (m, k, n) = (a.rows(), a.cols(), b.cols());
                if wants(0) {
                    let mut ga = vec![0.0; m * k];
                    gemm_a_bt_acc(g, b.data(), &mut ga, m, n, k);
                    acc(grads, node.inputs[0], &ga);
                }
                if wants(1) {
                    let mut gb = vec![0.0; k * n];
                    gemm_at_b_acc(a.data(), g, &mut gb, m, k, n);
                    acc(grads, node.inputs[1], &gb);
                }
                if matches!(node.op, Op::Affine) && wants(2) {
                    let mut gbias = vec![0.0; n];
                    for row in g.chunks(n) {
                        gbias.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                    }
                    acc(grads, node.inputs[2], &gbias);
                }
            }
            Op::Add(bc) | Op::Sub(bc) => {
                let sign = if matches!(node.op, Op::Sub(_)) { -1.0 } else { 1.0 };
                let reduce = |v: &[f64]| vec![v.iter().sum::<f64>()];
                if wants(0) {
                    let ga = match bc {
                        Bcast::LeftScalar => reduce(g),
                        _ => g.to_vec(),
                    };
                    acc(grads, node.inputs[0], &ga);
                }
                if wants(1) {
                    let gb: Vec<f64> = match bc {
                        Bcast::RightScalar => vec![sign * g.iter().sum::<f64>()],
                        _ => g.iter().map(|v| sign * v).collect(),
                    };
                    acc(grads, node.inputs[1], &gb);
                }
            }
            Op::Mul(bc) => {
                let (a, b) = (inp(0).value.data(), inp(1).value.data());
                if wants(0) {
                    let ga: Vec<f64> = match bc {
                        Bcast::Same => g.iter().zip(b).map(|(x, y)| x * y).collect(),
                        Bcast::LeftScalar => vec![g.iter().zip(b).map(|(x, y)| x * y).sum()],
                        Bcast::RightScalar => g.iter().map(|x| x * b[0]).collect(),
                    };
                    acc(grads, node.inputs[0], &ga);
                }
                if wants(1) {
                    let gb: Vec<f64> = match bc {
                        Bcast::Same => g.iter().zip(a).map(|(x, y)| x * y).collect(),
                        Bcast::RightScalar => vec![g.iter().zip(a).map(|(x, y)| x * y).sum()],
                        Bcast::LeftScalar => g.iter().map(|x| x * a[0]).collect(),
                    };
                    acc(grads, node.inputs[1], &gb);
                }
            }
            Op::Scale(c) => {
                let ga: Vec<f64> = g.iter().map(|v| v * c).collect();
                acc(grads, node.inputs[0], &ga);
            }
            Op::AddScalar => acc(grads, node.inputs[0], g),
            Op::Sigmoid => {
                let ga: Vec<f64> = g.iter().zip(y).map(|(gv, s)| gv * s * (1.0 - s)).collect();
                acc(grads, node.inputs[0], &ga);
            }
            Op::Tanh => {
                let ga: Vec<f64> = g.iter().zip(y).map(|(gv, t)| gv * (1.0 - t * t)).collect();
                acc(grads, node.inputs[0], &ga);
            }
            Op::Relu => {
                let x = inp(0).value.data();
                let ga: Vec<f64> = g.iter().zip(x).map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 }).collect();
                acc(grads, node.inputs[0], &ga);
            }
            Op::Log => {
                let x = inp(0).value.data();
                let ga: Vec<f64> = g.iter().zip(x).map(|(gv, xv)| gv / xv).collect();
                acc(grads, node.inputs[0], &ga);
            }
            Op::Exp => {
                let ga: Vec<f64> = g.iter().zip(y).map(|(gv, e)| gv * e).collect();
                acc(grads, node.inputs[0], &ga);
            }
            Op::Square => {
                let x = inp(0).value.data();
                let ga: Vec<f64> = g.iter().zip(x).map(|(gv, xv)| 2.0 * gv * xv).collect();
                acc(grads, node.inputs[0], &ga);
            }
            Op::Sum => {
                let n = inp(0).value.numel();
                acc(grads, node.inputs[0], &vec![g[0]; n]);
            }
            Op::Mean => {
                let n = inp(0).value.numel();
                acc(grads, node.inputs[0], &vec![g[0] / n as f64; n]);
            }
            Op::SoftmaxRows => {
                let cols = node.value.cols();
                let mut ga = vec![0.0; y.len()];
                for ((gr, yr), out) in g.chunks(cols).zip(y.chunks(cols)).zip(ga.chunks_mut(cols)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in out.iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - dot);
                    }
                }
                acc(grads, node.inputs[0], &ga);
            }
            Op::LogSoftmaxRows => {
                let cols = node.value.cols();
                let mut ga = vec![0.0; y.len()];
                for ((gr, yr), out) in g.chunks(cols).zip(y.chunks(cols)).zip(ga.chunks_mut(cols)) {
                    let total: f64 = gr.iter().sum();
                    for ((o, gv), yv) in out.iter_mut().zip(gr).zip(yr) {
                        *o = gv - yv.exp() * total;
                    }
                }
                acc(grads, node.inputs[0], &ga);
            }
            Op::ConcatCols => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for (k, &idx) in node.inputs.iter().enumerate() {
                    let c = inp(k).value.cols();
                    if self.nodes[idx].needs_grad {
                        let mut part = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            part.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                        }
                        acc(grads, idx, &part);
                    }
                    offset += c;
                }
            }
            Op::SliceCols { start } => {
                let src = &inp(0).value;
                let (rows, cols) = (src.rows(), src.cols());
                let width = node.value.cols();
                let mut ga = vec![0.0; rows * cols];
                for r in 0..rows {
                    ga[r * cols + start..r * cols + start + width].copy_from_slice(&g[r * width..(r + 1) * width]);
                }
                acc(grads, node.inputs[0], &ga);
            }
            Op::ScaleShiftCols { scale } => {
                let cols = scale.len();
                let mut ga = g.to_vec();
                for row in ga.chunks_mut(cols) {
                    row.iter_mut().zip(scale).for_each(|(v, s)| *v *= s);
                }
                acc(grads, node.inputs[0], &ga);
            }
            Op::CrossEntropy { targets, weights, total } => {
                let cols = inp(0).value.cols();
                let mut ga = vec![0.0; inp(0).value.numel()];
                if *total > 0.0 {
                    for (r, &t) in targets.iter().enumerate() {
                        ga[r * cols + t] = -g[0] * weights[r] / total;
                    }
                }
                acc(grads, node.inputs[0], &ga);
            }
            Op::Lstm(cache) => {
                let (x, wx, wh) = (&inp(0).value, &inp(1).value, &inp(2).value);
                let lg = lstm::backward(cache, x, wx, wh, g);
                for (k, grad) in [lg.x, lg.wx, lg.wh, lg.b].into_iter().enumerate() {
                    if wants(k) {
                        acc(grads, node.inputs[k], &grad);
                    }
                }
            }
            Op::Custom(op) => {
                let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
                for (k, grad) in op.backward(&inputs, g).into_iter().enumerate() {
                    if let Some(grad) = grad {
                        if wants(k) {
                            acc(grads, node.inputs[k], &grad);
                        }
                    }
                }
            }
        }
    }

    /// Adds the gradients of parameter leaves into `params`. Calling this
    /// after several backward passes without zeroing accumulates.
    pub fn accumulate_into(&self, params: &mut ParamSet) {
        for (node, grad) in self.nodes.iter().zip(&self.grads) {
            if let (Op::Leaf { param: Some(name) }, Some(g)) = (&node.op, grad) {
                if let Some(t) = params.get_mut(name) {
                    if t.requires_grad() {
                        t.accumulate_grad(g);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let i = tape.constant(mat(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let a = tape.constant(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let c = tape.matmul(i, a).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn row_times_column() {
        let mut tape = Tape::new();
        let a = tape.constant(mat(1, 2, &[1.0, 2.0]));
        let b = tape.constant(mat(2, 1, &[3.0, 4.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_is_dimension_error() {
        let mut tape = Tape::new();
        let a = tape.constant(mat(1, 2, &[1.0, 2.0]));
        let b = tape.constant(mat(3, 1, &[3.0, 4.0, 5.0]));
        assert!(matches!(tape.matmul(a, b), Err(TensorError::Dimension { .. })));
    }

    #[test]
    fn elementwise_closed_forms() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z).unwrap();
        let t = tape.tanh(z).unwrap();
        assert_eq!(tape.value(s).item(), 0.5);
        assert_eq!(tape.value(t).item(), 0.0);
    }

    #[test]
    fn binary_ops_reject_mismatched_shapes_but_allow_scalars() {
        let mut tape = Tape::new();
        let a = tape.constant(mat(2, 2, &[1.0; 4]));
        let b = tape.constant(mat(1, 3, &[1.0; 3]));
        assert!(tape.add(a, b).is_err());
        let s = tape.constant(Tensor::scalar(2.0));
        let c = tape.mul(a, s).unwrap();
        assert_eq!(tape.value(c).data(), &[2.0; 4]);
    }

    #[test]
    fn log_and_exp_domain_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(mat(1, 2, &[1.0, -1.0]));
        assert!(matches!(tape.log(a), Err(TensorError::Numeric { .. })));
        let big = tape.constant(Tensor::scalar(1000.0));
        assert!(matches!(tape.exp(big), Err(TensorError::Numeric { .. })));
    }

    #[test]
    fn softmax_closed_forms() {
        let mut tape = Tape::new();
        let eq = tape.constant(mat(1, 4, &[0.7; 4]));
        let p = tape.softmax_rows(eq).unwrap();
        for v in tape.value(p).data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let l = tape.constant(mat(1, 2, &[1f64.ln(), 3f64.ln()]));
        let p = tape.softmax_rows(l).unwrap();
        let d = tape.value(p).data();
        assert!((d[0] - 0.25).abs() < 1e-15 && (d[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_shift_invariance() {
        let row = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = row.iter().map(|v| v + 1000.0).collect();
        let mut tape = Tape::new();
        let a = tape.constant(mat(1, 4, &row));
        let b = tape.constant(mat(1, 4, &shifted));
        let pa = tape.softmax_rows(a).unwrap();
        let pb = tape.softmax_rows(b).unwrap();
        for (x, y) in tape.value(pa).data().iter().zip(tape.value(pb).data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let mut tape = Tape::new();
        let uniform = tape.constant(mat(3, 9, &[(1.0f64 / 9.0).ln(); 27]));
        let ce = tape.cross_entropy(uniform, &[0, 4, 8], None).unwrap();
        assert!((tape.value(ce).item() - 9f64.ln()).abs() < 1e-12);

        let onehot = tape.constant(mat(2, 2, &[0.0, -1e300, -1e300, 0.0]));
        let ce = tape.cross_entropy(onehot, &[0, 1], None).unwrap();
        assert_eq!(tape.value(ce).item(), 0.0);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let mut tape = Tape::new();
        let l = tape.constant(mat(1, 3, &[0.0; 3]));
        assert_eq!(tape.cross_entropy(l, &[3], None), Err(TensorError::Label { label: 3, classes: 3 }));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let a = tape.leaf(mat(1, 2, &[1.0, 2.0]));
        assert!(matches!(tape.backward(a), Err(TensorError::NonScalar(_))));
    }

    #[test]
    fn repeated_backward_accumulates_into_params() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap().requiring_grad());
        for _ in 0..2 {
            let mut tape = Tape::new();
            let w = tape.param(&params, "w").unwrap();
            let s = tape.sum(w).unwrap();
            tape.backward(s).unwrap();
            tape.accumulate_into(&mut params);
        }
        assert_eq!(params.get("w").unwrap().grad().unwrap(), &[2.0, 2.0]);
        params.zero_grad();
        assert_eq!(params.get("w").unwrap().grad().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
        let mut tape = Tape::new();
        let w = tape.param(&params, "w").unwrap();
        let s = tape.sum(w).unwrap();
        tape.backward(s).unwrap();
        tape.accumulate_into(&mut params);
        assert!(params.get("w").unwrap().grad().is_none());
    }
}
