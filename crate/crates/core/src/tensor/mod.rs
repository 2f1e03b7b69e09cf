//! Dense f64 tensors with reverse-mode differentiation on an eager tape.
//!
//! The tape owns every tensor created during a forward pass; [`Var`] is an
//! index into it. Operations record themselves as they execute, so the node
//! order is already topological and a backward pass is a single reverse sweep.
//! Everything is 64-bit: the models here are tiny and gradient checks want
//! the headroom.

mod gradcheck;

pub use gradcheck::{finite_diff_check, finite_diff_check_multi};

use crate::error::{Error, Result};
use std::str::FromStr;

/// Standard SELU constants (self-normalizing networks).
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;

/// A dense value array that lives outside any tape: model parameters,
/// checkpoint payloads, probe points for gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    trainable: bool,
}

impl Tensor {
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                values.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), values, grad: None, trainable: false })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), values: vec![0.0; numel], grad: None, trainable: false }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], values: vec![v], grad: None, trainable: false }
    }

    pub fn trainable(mut self) -> Self {
        self.trainable = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) {
        debug_assert_eq!(grad.len(), self.values.len());
        self.grad = Some(grad);
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
            && self.grad.as_ref().map_or(true, |g| g.iter().all(|v| v.is_finite()))
    }
}

/// Element-wise non-linearity.
///
/// ReLU's derivative at exactly 0 is defined as 0; SELU's at exactly 0 uses
/// the `x <= 0` branch (lambda * alpha). Both conventions are fixed so that
/// repeated runs are bit-identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Selu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative given the input `x` and the already-computed output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    // d/dx lambda*alpha*(e^x - 1) = y + lambda*alpha
                    y + SELU_LAMBDA * SELU_ALPHA
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "selu" => Ok(Activation::Selu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!("unknown activation kind '{other}'"))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(sigmoid(x)) without overflow for any finite x.
pub fn log_sigmoid(x: f64) -> f64 {
    // -softplus(-x), softplus(z) = max(z, 0) + ln(1 + e^{-|z|})
    let z = -x;
    -(z.max(0.0) + (-z.abs()).exp().ln_1p())
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// A[m,k] @ B[k,n]
    Matmul { a: Var, b: Var, m: usize, k: usize, n: usize },
    /// Grouped matmul over leading axis: A[g,m,k] @ B[g,k,n] (or B[g,n,k] if
    /// trans_b, computing A @ B^T per group).
    Bmm { a: Var, b: Var, g: usize, m: usize, k: usize, n: usize, trans_b: bool },
    Activation { x: Var, kind: Activation },
    SoftmaxRows { x: Var, n: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, eps: f64, n: usize },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    /// x[..., n] + bias[n], broadcast over leading rows.
    AddRowBias { x: Var, bias: Var, n: usize },
    Scale { x: Var, c: f64 },
    /// out[i, :] = table[indices[i], :]
    GatherRows { table: Var, indices: Vec<usize>, e: usize },
    /// [(B,E); P] -> (B,P,E)
    StackTokens { parts: Vec<Var>, b: usize, e: usize },
    /// [(B,Ni,E)] -> (B, sum Ni, E)
    ConcatTokens { parts: Vec<Var>, b: usize, e: usize, ns: Vec<usize> },
    Reshape { x: Var },
    /// (d0,d1,d2,d3) -> (d0,d2,d1,d3)
    SwapAxes12 { x: Var, dims: [usize; 4] },
    /// (B,N,E) -> (B,E), arithmetic mean over the token axis.
    MeanTokens { x: Var, b: usize, n: usize, e: usize },
    MeanAll { x: Var },
    SumAll { x: Var },
    LogSigmoid { x: Var },
    Exp { x: Var },
    ClampMin { x: Var, min: f64 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul { .. } => "matmul",
            Op::Bmm { .. } => "bmm",
            Op::Activation { .. } => "activation",
            Op::SoftmaxRows { .. } => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::AddRowBias { .. } => "add_row_bias",
            Op::Scale { .. } => "scale",
            Op::GatherRows { .. } => "gather_rows",
            Op::StackTokens { .. } => "stack_tokens",
            Op::ConcatTokens { .. } => "concat_tokens",
            Op::Reshape { .. } => "reshape",
            Op::SwapAxes12 { .. } => "swap_axes_12",
            Op::MeanTokens { .. } => "mean_tokens",
            Op::MeanAll { .. } => "mean_all",
            Op::SumAll { .. } => "sum_all",
            Op::LogSigmoid { .. } => "log_sigmoid",
            Op::Exp { .. } => "exp",
            Op::ClampMin { .. } => "clamp_min",
        }
    }
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    trainable: bool,
    op: Op,
    label: Option<String>,
}

/// Ordered record of executed primitive operations. Owned by one worker;
/// create a fresh tape per forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.nodes.push(Node { shape, values, grad: Vec::new(), trainable: false, op, label: None });
        Var(self.nodes.len() - 1)
    }

    /// Copies a tensor onto the tape, preserving its trainable flag.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let v = self.push(t.shape.clone(), t.values.clone(), Op::Leaf);
        self.nodes[v.0].trainable = t.trainable;
        v
    }

    pub fn named_leaf(&mut self, t: &Tensor, label: impl Into<String>) -> Var {
        let v = self.leaf(t);
        self.nodes[v.0].label = Some(label.into());
        v
    }

    /// Non-trainable input data.
    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, values)?;
        Ok(self.push(t.shape, t.values, Op::Leaf))
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(vec![1], vec![v], Op::Leaf)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].values
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].values.len(), 1);
        self.nodes[v.0].values[0]
    }

    /// Gradient of the last `backward` target w.r.t. `v`. Empty before
    /// backward has run.
    pub fn grad(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].grad
    }

    /// Trainable leaves in creation order.
    pub fn trainable_leaves(&self) -> Vec<Var> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.trainable && matches!(n.op, Op::Leaf))
            .map(|(i, _)| Var(i))
            .collect()
    }

    /// First node holding a non-finite value, labelled for diagnostics.
    pub fn first_nonfinite(&self) -> Option<String> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.values.iter().any(|v| !v.is_finite()) {
                let label = n.label.clone().unwrap_or_else(|| n.op.name().to_string());
                return Some(format!("node {i} ({label})"));
            }
        }
        None
    }

    // ── operations ──────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::Dimension(format!(
                "matmul expects 2-d operands, got {sa:?} and {sb:?}"
            )));
        }
        let (m, k, k2, n) = (sa[0], sa[1], sb[0], sb[1]);
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions disagree: {sa:?} vs {sb:?}"
            )));
        }
        let out = mm_nn(self.value(a), self.value(b), m, k, n);
        Ok(self.push(vec![m, n], out, Op::Matmul { a, b, m, k, n }))
    }

    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::Dimension(format!(
                "bmm expects 3-d operands with equal group count, got {sa:?} and {sb:?}"
            )));
        }
        let (g, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != kb {
            return Err(Error::Dimension(format!(
                "bmm inner dimensions disagree: {sa:?} vs {sb:?} (trans_b={trans_b})"
            )));
        }
        let mut out = vec![0.0; g * m * n];
        for gi in 0..g {
            let av = &self.value(a)[gi * m * k..(gi + 1) * m * k];
            let bslice = if trans_b {
                &self.value(b)[gi * n * k..(gi + 1) * n * k]
            } else {
                &self.value(b)[gi * k * n..(gi + 1) * k * n]
            };
            let part = if trans_b {
                mm_nt(av, bslice, m, k, n)
            } else {
                mm_nn(av, bslice, m, k, n)
            };
            out[gi * m * n..(gi + 1) * m * n].copy_from_slice(&part);
        }
        Ok(self.push(vec![g, m, n], out, Op::Bmm { a, b, g, m, k, n, trans_b }))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let values: Vec<f64> = self.value(x).iter().map(|&v| kind.apply(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, values, Op::Activation { x, kind })
    }

    /// Row softmax over the last axis, stabilized by max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().expect("tensor shapes are non-empty");
        let mut values = self.value(x).to_vec();
        for row in values.chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(shape, values, Op::SoftmaxRows { x, n })
    }

    /// Zero-mean/unit-variance normalization over the last axis, then affine.
    /// Uses the population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Parameter(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let shape = self.shape(x).to_vec();
        let n = *shape.last().expect("tensor shapes are non-empty");
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(Error::Dimension(format!(
                "layer_norm affine shapes {:?}/{:?} do not match last axis {n}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let mut values = self.value(x).to_vec();
        let gainv = self.value(gain).to_vec();
        let biasv = self.value(bias).to_vec();
        for row in values.chunks_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * gainv[j] + biasv[j];
            }
        }
        Ok(self.push(shape, values, Op::LayerNorm { x, gain, bias, eps, n }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "add shapes disagree: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let values: Vec<f64> =
            self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, values, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "mul shapes disagree: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let values: Vec<f64> =
            self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, values, Op::Mul { a, b }))
    }

    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().expect("tensor shapes are non-empty");
        if self.shape(bias) != [n] {
            return Err(Error::Dimension(format!(
                "bias shape {:?} does not match last axis {n}",
                self.shape(bias)
            )));
        }
        let biasv = self.value(bias).to_vec();
        let values: Vec<f64> = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + biasv[i % n])
            .collect();
        Ok(self.push(shape, values, Op::AddRowBias { x, bias, n }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let values: Vec<f64> = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, values, Op::Scale { x, c })
    }

    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(Error::Dimension(format!("gather_rows expects a 2-d table, got {st:?}")));
        }
        let (rows, e) = (st[0], st[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Contract(format!(
                "gather_rows index {bad} out of range for table with {rows} rows"
            )));
        }
        if indices.is_empty() {
            return Err(Error::Contract("gather_rows needs at least one index".into()));
        }
        let tv = self.value(table);
        let mut values = Vec::with_capacity(indices.len() * e);
        for &i in indices {
            values.extend_from_slice(&tv[i * e..(i + 1) * e]);
        }
        Ok(self.push(
            vec![indices.len(), e],
            values,
            Op::GatherRows { table, indices: indices.to_vec(), e },
        ))
    }

    /// Stacks P tensors of shape (B,E) into (B,P,E).
    pub fn stack_tokens(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("stack_tokens needs at least one part".into()));
        }
        let first = self.shape(parts[0]).to_vec();
        if first.len() != 2 {
            return Err(Error::Dimension(format!("stack_tokens expects (B,E) parts, got {first:?}")));
        }
        let (b, e) = (first[0], first[1]);
        for &p in parts {
            if self.shape(p) != [b, e] {
                return Err(Error::Dimension(format!(
                    "stack_tokens parts disagree: {:?} vs {:?}",
                    self.shape(p),
                    [b, e]
                )));
            }
        }
        let pn = parts.len();
        let mut values = vec![0.0; b * pn * e];
        for (pi, &p) in parts.iter().enumerate() {
            let pv = self.value(p);
            for bi in 0..b {
                values[(bi * pn + pi) * e..(bi * pn + pi + 1) * e]
                    .copy_from_slice(&pv[bi * e..(bi + 1) * e]);
            }
        }
        Ok(self.push(vec![b, pn, e], values, Op::StackTokens { parts: parts.to_vec(), b, e }))
    }

    /// Concatenates token tensors (B,Ni,E) along the token axis.
    pub fn concat_tokens(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_tokens needs at least one part".into()));
        }
        let first = self.shape(parts[0]).to_vec();
        if first.len() != 3 {
            return Err(Error::Dimension(format!(
                "concat_tokens expects (B,N,E) parts, got {first:?}"
            )));
        }
        let (b, e) = (first[0], first[2]);
        let mut ns = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 3 || s[0] != b || s[2] != e {
                return Err(Error::Dimension(format!(
                    "concat_tokens parts disagree on batch or embedding axis: {s:?} vs {first:?}"
                )));
            }
            ns.push(s[1]);
        }
        let total: usize = ns.iter().sum();
        let mut values = vec![0.0; b * total * e];
        for bi in 0..b {
            let mut offset = 0;
            for (pi, &p) in parts.iter().enumerate() {
                let ni = ns[pi];
                let pv = self.value(p);
                values[(bi * total + offset) * e..(bi * total + offset + ni) * e]
                    .copy_from_slice(&pv[bi * ni * e..(bi + 1) * ni * e]);
                offset += ni;
            }
        }
        Ok(self.push(
            vec![b, total, e],
            values,
            Op::ConcatTokens { parts: parts.to_vec(), b, e, ns },
        ))
    }

    pub fn reshape(&mut self, x: Var, new_shape: &[usize]) -> Result<Var> {
        let numel: usize = new_shape.iter().product();
        if new_shape.iter().any(|&d| d == 0) || numel != self.value(x).len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {new_shape:?}",
                self.shape(x)
            )));
        }
        let values = self.value(x).to_vec();
        Ok(self.push(new_shape.to_vec(), values, Op::Reshape { x }))
    }

    /// Transposes axes 1 and 2 of a 4-d tensor.
    pub fn swap_axes_12(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::Dimension(format!("swap_axes_12 expects a 4-d tensor, got {s:?}")));
        }
        let dims = [s[0], s[1], s[2], s[3]];
        let values = transpose_12(self.value(x), dims);
        Ok(self.push(vec![s[0], s[2], s[1], s[3]], values, Op::SwapAxes12 { x, dims }))
    }

    /// Global average pooling over the token axis: (B,N,E) -> (B,E).
    pub fn mean_tokens(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::Dimension(format!("mean_tokens expects (B,N,E), got {s:?}")));
        }
        let (b, n, e) = (s[0], s[1], s[2]);
        let xv = self.value(x);
        let mut values = vec![0.0; b * e];
        for bi in 0..b {
            for ni in 0..n {
                for ei in 0..e {
                    values[bi * e + ei] += xv[(bi * n + ni) * e + ei];
                }
            }
        }
        for v in values.iter_mut() {
            *v /= n as f64;
        }
        Ok(self.push(vec![b, e], values, Op::MeanTokens { x, b, n, e }))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mean = xv.iter().sum::<f64>() / xv.len() as f64;
        self.push(vec![1], vec![mean], Op::MeanAll { x })
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let sum = self.value(x).iter().sum();
        self.push(vec![1], vec![sum], Op::SumAll { x })
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let values: Vec<f64> = self.value(x).iter().map(|&v| log_sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, values, Op::LogSigmoid { x })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let values: Vec<f64> = self.value(x).iter().map(|v| v.exp()).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, values, Op::Exp { x })
    }

    /// max(x, min) element-wise; derivative 0 where clamped (and at equality).
    pub fn clamp_min(&mut self, x: Var, min: f64) -> Var {
        let values: Vec<f64> = self.value(x).iter().map(|v| v.max(min)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, values, Op::ClampMin { x, min })
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Populates gradients of `loss` w.r.t. every node, visiting each
    /// recorded operation exactly once in reverse order.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::Contract(format!(
                "backward target must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in self.nodes.iter_mut() {
            node.grad = vec![0.0; node.values.len()];
        }
        self.nodes[loss.0].grad[0] = 1.0;

        for i in (0..=loss.0).rev() {
            let op = self.nodes[i].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            let g = std::mem::take(&mut self.nodes[i].grad);
            self.propagate(&op, i, &g);
            self.nodes[i].grad = g;
        }
        Ok(())
    }

    fn add_to_grad(&mut self, v: Var, contrib: &[f64]) {
        let grad = &mut self.nodes[v.0].grad;
        debug_assert_eq!(grad.len(), contrib.len());
        for (gv, c) in grad.iter_mut().zip(contrib) {
            *gv += c;
        }
    }

    fn propagate(&mut self, op: &Op, out: usize, g: &[f64]) {
        match *op {
            Op::Leaf => {}
            Op::Matmul { a, b, m, k, n } => {
                let da = mm_nt(g, self.value(b), m, n, k); // G (m,n) @ B^T (n,k)
                let db = mm_tn(self.value(a), g, k, m, n); // A^T (k,m) @ G (m,n)
                self.add_to_grad(a, &da);
                self.add_to_grad(b, &db);
            }
            Op::Bmm { a, b, g: groups, m, k, n, trans_b } => {
                let mut da = vec![0.0; groups * m * k];
                let mut db = vec![0.0; self.value(b).len()];
                for gi in 0..groups {
                    let go = &g[gi * m * n..(gi + 1) * m * n];
                    let av = &self.value(a)[gi * m * k..(gi + 1) * m * k];
                    if trans_b {
                        let bv = &self.value(b)[gi * n * k..(gi + 1) * n * k];
                        // C = A B^T: dA = G B, dB = G^T A
                        da[gi * m * k..(gi + 1) * m * k]
                            .copy_from_slice(&mm_nn(go, bv, m, n, k));
                        db[gi * n * k..(gi + 1) * n * k]
                            .copy_from_slice(&mm_tn(go, av, n, m, k));
                    } else {
                        let bv = &self.value(b)[gi * k * n..(gi + 1) * k * n];
                        da[gi * m * k..(gi + 1) * m * k]
                            .copy_from_slice(&mm_nt(go, bv, m, n, k));
                        db[gi * k * n..(gi + 1) * k * n]
                            .copy_from_slice(&mm_tn(av, go, k, m, n));
                    }
                }
                self.add_to_grad(a, &da);
                self.add_to_grad(b, &db);
            }
            Op::Activation { x, kind } => {
                let dx: Vec<f64> = self
                    .value(x)
                    .iter()
                    .zip(self.nodes[out].values.iter())
                    .zip(g)
                    .map(|((&xi, &yi), &gi)| gi * kind.derivative(xi, yi))
                    .collect();
                self.add_to_grad(x, &dx);
            }
            Op::SoftmaxRows { x, n } => {
                let s = &self.nodes[out].values;
                let mut dx = vec![0.0; s.len()];
                for (row, (srow, grow)) in s.chunks(n).zip(g.chunks(n)).enumerate() {
                    let dot: f64 = srow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[row * n + j] = srow[j] * (grow[j] - dot);
                    }
                }
                self.add_to_grad(x, &dx);
            }
            Op::LayerNorm { x, gain, bias, eps, n } => {
                let xv = self.value(x);
                let gainv = self.value(gain).to_vec();
                let rows = xv.len() / n;
                let mut dx = vec![0.0; xv.len()];
                let mut dgain = vec![0.0; n];
                let mut dbias = vec![0.0; n];
                for r in 0..rows {
                    let xr = &xv[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let mean = xr.iter().sum::<f64>() / n as f64;
                    let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = xr.iter().map(|v| (v - mean) * inv).collect();
                    let h: Vec<f64> = gr.iter().zip(&gainv).map(|(a, b)| a * b).collect();
                    let mean_h = h.iter().sum::<f64>() / n as f64;
                    let mean_hx = h.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for j in 0..n {
                        dx[r * n + j] = inv * (h[j] - mean_h - xhat[j] * mean_hx);
                        dgain[j] += gr[j] * xhat[j];
                        dbias[j] += gr[j];
                    }
                }
                self.add_to_grad(x, &dx);
                self.add_to_grad(gain, &dgain);
                self.add_to_grad(bias, &dbias);
            }
            Op::Add { a, b } => {
                self.add_to_grad(a, g);
                self.add_to_grad(b, g);
            }
            Op::Mul { a, b } => {
                let da: Vec<f64> = g.iter().zip(self.value(b)).map(|(gi, bv)| gi * bv).collect();
                let db: Vec<f64> = g.iter().zip(self.value(a)).map(|(gi, av)| gi * av).collect();
                self.add_to_grad(a, &da);
                self.add_to_grad(b, &db);
            }
            Op::AddRowBias { x, bias, n } => {
                let mut dbias = vec![0.0; n];
                for (i, gi) in g.iter().enumerate() {
                    dbias[i % n] += gi;
                }
                self.add_to_grad(x, g);
                self.add_to_grad(bias, &dbias);
            }
            Op::Scale { x, c } => {
                let dx: Vec<f64> = g.iter().map(|gi| gi * c).collect();
                self.add_to_grad(x, &dx);
            }
            Op::GatherRows { table, ref indices, e } => {
                let mut dt = vec![0.0; self.value(table).len()];
                for (i, &row) in indices.iter().enumerate() {
                    for j in 0..e {
                        dt[row * e + j] += g[i * e + j];
                    }
                }
                self.add_to_grad(table, &dt);
            }
            Op::StackTokens { ref parts, b, e } => {
                let pn = parts.len();
                for (pi, &p) in parts.iter().enumerate() {
                    let mut dp = vec![0.0; b * e];
                    for bi in 0..b {
                        dp[bi * e..(bi + 1) * e]
                            .copy_from_slice(&g[(bi * pn + pi) * e..(bi * pn + pi + 1) * e]);
                    }
                    self.add_to_grad(p, &dp);
                }
            }
            Op::ConcatTokens { ref parts, b, e, ref ns } => {
                let total: usize = ns.iter().sum();
                let mut offset = 0;
                for (pi, &p) in parts.iter().enumerate() {
                    let ni = ns[pi];
                    let mut dp = vec![0.0; b * ni * e];
                    for bi in 0..b {
                        dp[bi * ni * e..(bi + 1) * ni * e].copy_from_slice(
                            &g[(bi * total + offset) * e..(bi * total + offset + ni) * e],
                        );
                    }
                    self.add_to_grad(p, &dp);
                    offset += ni;
                }
            }
            Op::Reshape { x } => {
                self.add_to_grad(x, g);
            }
            Op::SwapAxes12 { x, dims } => {
                let swapped = [dims[0], dims[2], dims[1], dims[3]];
                let dx = transpose_12(g, swapped);
                self.add_to_grad(x, &dx);
            }
            Op::MeanTokens { x, b, n, e } => {
                let mut dx = vec![0.0; b * n * e];
                let inv = 1.0 / n as f64;
                for bi in 0..b {
                    for ni in 0..n {
                        for ei in 0..e {
                            dx[(bi * n + ni) * e + ei] = g[bi * e + ei] * inv;
                        }
                    }
                }
                self.add_to_grad(x, &dx);
            }
            Op::MeanAll { x } => {
                let n = self.value(x).len() as f64;
                let dx = vec![g[0] / n; self.value(x).len()];
                self.add_to_grad(x, &dx);
            }
            Op::SumAll { x } => {
                let dx = vec![g[0]; self.value(x).len()];
                self.add_to_grad(x, &dx);
            }
            Op::LogSigmoid { x } => {
                // d/dx log sigmoid(x) = sigmoid(-x)
                let dx: Vec<f64> =
                    g.iter().zip(self.value(x)).map(|(gi, &xv)| gi * sigmoid(-xv)).collect();
                self.add_to_grad(x, &dx);
            }
            Op::Exp { x } => {
                let dx: Vec<f64> =
                    g.iter().zip(self.nodes[out].values.iter()).map(|(gi, yv)| gi * yv).collect();
                self.add_to_grad(x, &dx);
            }
            Op::ClampMin { x, min } => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(self.value(x))
                    .map(|(gi, &xv)| if xv > min { *gi } else { 0.0 })
                    .collect();
                self.add_to_grad(x, &dx);
            }
        }
    }
}

// ── raw kernels ─────────────────────────────────────────────────────────

/// C[m,n] = A[m,k] B[k,n]
fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// C[m,n] = A[m,k] B[n,k]^T
fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// C[m,n] = A[k,m]^T B[k,n]
fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = arow[i];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// (d0,d1,d2,d3) -> (d0,d2,d1,d3)
fn transpose_12(x: &[f64], dims: [usize; 4]) -> Vec<f64> {
    let [d0, d1, d2, d3] = dims;
    let mut out = vec![0.0; x.len()];
    for a in 0..d0 {
        for b in 0..d1 {
            for c in 0..d2 {
                let src = ((a * d1 + b) * d2 + c) * d3;
                let dst = ((a * d2 + c) * d1 + b) * d3;
                out[dst..dst + d3].copy_from_slice(&x[src..src + d3]);
            }
        }
    }
    out
}
