//! Tape-based computation graph.
//!
//! Nodes are appended in evaluation order, so node indices are a topological
//! order and the provenance graph is acyclic by construction. A node records
//! its provenance only when recording is on and at least one operand requires
//! a gradient; everything else is stored as a constant.
//!
//! Every backward rule is written in terms of the graph's own primitives. When
//! [`Graph::grad`] runs with `differentiable = true` those primitives are
//! recorded like any forward op, so the returned gradients can be
//! differentiated again (Hessian-vector products through a gradient step).

use std::collections::HashMap;

use crate::error::{AutodiffError, Result};
use crate::tensor::{self, is_suffix, numel, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Recip(Var),
    Exp(Var),
    Tanh(Var),
    Sin(Var),
    Cos(Var),
    Sqrt(Var),
    MatMul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    SumAxis(Var, usize),
    ExpandAxis(Var, usize),
    SumLeading(Var),
    ExpandLeading(Var),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    Pad { x: Var, axis: usize, before: usize },
    Unfold { x: Var, kernel: usize, stride: usize, padding: usize },
    Fold { x: Var, kernel: usize, stride: usize, padding: usize },
    Softmax(Var),
    SmoothL1(Var, f64),
    Clamp(Var, f64, f64),
}

impl Op {
    fn operands(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => Vec::new(),
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) => vec![*a, *b],
            Scale(a, _) | AddScalar(a) | Recip(a) | Exp(a) | Tanh(a) | Sin(a) | Cos(a)
            | Sqrt(a) | Permute(a, _) | Reshape(a) | SumAxis(a, _) | ExpandAxis(a, _)
            | SumLeading(a) | ExpandLeading(a) | Softmax(a) | SmoothL1(a, _)
            | Clamp(a, _, _) => vec![*a],
            Concat(parts, _) => parts.clone(),
            Slice { x, .. } | Pad { x, .. } | Unfold { x, .. } | Fold { x, .. } => vec![*x],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients keyed by the node they were requested for.
#[derive(Debug, Clone, Default)]
pub struct GradientMap {
    entries: HashMap<Var, Var>,
}

impl GradientMap {
    pub fn get(&self, v: Var) -> Option<Var> {
        self.entries.get(&v).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, v: Var) -> bool {
        self.entries.contains_key(&v)
    }
}

/// A single-threaded computation tape.
pub struct Graph {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn invalid(op: &'static str, detail: impl Into<String>) -> AutodiffError {
    AutodiffError::InvalidArgument {
        op,
        detail: detail.into(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad =
            self.recording && op.operands().iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf node. Gradients can be requested for it when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf)
    }

    /// Operands of `v`, empty for leaves and constants.
    pub fn operands(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.operands()
    }

    /// Same value as `v`, but no derivative ever flows through the result.
    pub fn stop_gradient(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    /// Runs `f` with recording disabled: every node it creates is a constant.
    pub fn no_grad<T>(&mut self, f: impl FnOnce(&mut Self) -> T) -> T {
        let prev = self.recording;
        self.recording = false;
        let out = f(self);
        self.recording = prev;
        out
    }

    // ------------------------------------------------------------------
    // Elementwise
    // ------------------------------------------------------------------

    fn check_broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if is_suffix(sa, sb) {
            Ok(())
        } else {
            Err(mismatch(op, sa, sb))
        }
    }

    /// `a + b`, where `b` may have a shape that is a suffix of `a`'s
    /// (broadcast over the leading axes).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast("add", a, b)?;
        let v = tensor::zip_broadcast(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Alias of [`Graph::add`] for the bias-style broadcast.
    pub fn broadcast_add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.add(a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast("sub", a, b)?;
        let v = tensor::zip_broadcast(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast("mul", a, b)?;
        let v = tensor::zip_broadcast(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let r = self.recip(b);
        self.mul(a, r)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("same shape")
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / x);
        self.push(v, Op::Recip(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sin);
        self.push(v, Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::cos);
        self.push(v, Op::Cos(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    /// Clamp into `[lo, hi]`; the derivative is 1 strictly inside and 0 outside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// GELU, tanh approximation, composed from primitives.
    pub fn gelu(&mut self, x: Var) -> Var {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        let x2 = self.mul(x, x).expect("same shape");
        let x3 = self.mul(x2, x).expect("same shape");
        let cubic = self.scale(x3, 0.044715);
        let inner = self.add(x, cubic).expect("same shape");
        let inner = self.scale(inner, C);
        let t = self.tanh(inner);
        let one_plus = self.add_scalar(t, 1.0);
        let half_x = self.scale(x, 0.5);
        self.mul(half_x, one_plus).expect("same shape")
    }

    /// Elementwise smooth-L1 distance between `a` and `b` with transition `delta`.
    pub fn smooth_l1(&mut self, a: Var, b: Var, delta: f64) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("smooth_l1", self.shape(a), self.shape(b)));
        }
        if !(delta > 0.0) {
            return Err(invalid("smooth_l1", format!("delta must be positive, got {delta}")));
        }
        let d = self.sub(a, b)?;
        let v = self.value(d).map(|x| tensor::smooth_l1_scalar(x, delta));
        Ok(self.push(v, Op::SmoothL1(d, delta)))
    }

    // ------------------------------------------------------------------
    // Linear algebra and layout
    // ------------------------------------------------------------------

    /// Matrix product over the last two axes. `b` may be rank 2 (shared
    /// weight) or carry the same leading axes as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sa.len() >= 2
            && sb.len() >= 2
            && sa[sa.len() - 1] == sb[sb.len() - 2]
            && (sb.len() == 2 || (sb.len() == sa.len() && sa[..sa.len() - 2] == sb[..sb.len() - 2]));
        if !ok {
            return Err(mismatch("matmul", sa, sb));
        }
        let v = tensor::matmul(self.value(a), self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let rank = self.shape(a).len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(invalid("permute", format!("{perm:?} is not a permutation of rank {rank}")));
        }
        let v = tensor::permute(self.value(a), perm);
        Ok(self.push(v, Op::Permute(a, perm.to_vec())))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let rank = self.shape(a).len();
        if rank < 2 {
            return Err(invalid("transpose", format!("rank {rank} < 2")));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(a, &perm)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshaped(shape).map_err(|_| mismatch("reshape", self.shape(a), shape))?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<()> {
        let rank = self.shape(a).len();
        if axis >= rank {
            return Err(invalid(op, format!("axis {axis} out of range for rank {rank}")));
        }
        Ok(())
    }

    /// Sum along `axis`; with `keepdim` the axis stays with extent 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize, keepdim: bool) -> Result<Var> {
        self.check_axis("sum", a, axis)?;
        let v = tensor::sum_axis(self.value(a), axis);
        let s = self.push(v, Op::SumAxis(a, axis));
        if keepdim {
            Ok(s)
        } else {
            let mut shape = self.shape(s).to_vec();
            shape.remove(axis);
            self.reshape(s, &shape)
        }
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize, keepdim: bool) -> Result<Var> {
        self.check_axis("mean", a, axis)?;
        let n = self.shape(a)[axis];
        let s = self.sum_axis(a, axis, keepdim)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(&mut self, a: Var) -> Var {
        self.sum_to(a, &[]).expect("scalar is a suffix of any shape")
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Repeat an extent-1 axis `n` times.
    pub fn expand_axis(&mut self, a: Var, axis: usize, n: usize) -> Result<Var> {
        self.check_axis("expand", a, axis)?;
        if self.shape(a)[axis] != 1 {
            return Err(invalid("expand", format!("axis {axis} of {:?} is not 1", self.shape(a))));
        }
        let v = tensor::expand_axis(self.value(a), axis, n);
        Ok(self.push(v, Op::ExpandAxis(a, axis)))
    }

    /// Sum leading axes away so the result has shape `to` (a suffix of `a`'s shape).
    pub fn sum_to(&mut self, a: Var, to: &[usize]) -> Result<Var> {
        if !is_suffix(self.shape(a), to) {
            return Err(mismatch("sum_to", self.shape(a), to));
        }
        if self.shape(a) == to {
            return Ok(a);
        }
        let v = tensor::sum_leading(self.value(a), to);
        Ok(self.push(v, Op::SumLeading(a)))
    }

    /// Broadcast `a` over new leading axes to reach `to`.
    pub fn expand_to(&mut self, a: Var, to: &[usize]) -> Result<Var> {
        if !is_suffix(to, self.shape(a)) {
            return Err(mismatch("expand_to", self.shape(a), to));
        }
        if self.shape(a) == to {
            return Ok(a);
        }
        let v = tensor::expand_leading(self.value(a), to);
        Ok(self.push(v, Op::ExpandLeading(a)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| invalid("concat", "no operands"))?;
        self.check_axis("concat", *first, axis)?;
        let base = self.shape(*first).to_vec();
        for p in &parts[1..] {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
        }
        let values: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let v = tensor::concat(&values, axis);
        Ok(self.push(v, Op::Concat(parts.to_vec(), axis)))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("slice", a, axis)?;
        let n = self.shape(a)[axis];
        if start + len > n {
            return Err(invalid("slice", format!("[{start}, {}) exceeds extent {n}", start + len)));
        }
        let v = tensor::slice(self.value(a), axis, start, len);
        Ok(self.push(v, Op::Slice { x: a, axis, start }))
    }

    /// Zero padding along `axis`.
    pub fn pad(&mut self, a: Var, axis: usize, before: usize, after: usize) -> Result<Var> {
        self.check_axis("pad", a, axis)?;
        let v = tensor::pad(self.value(a), axis, before, after);
        Ok(self.push(v, Op::Pad { x: a, axis, before }))
    }

    /// `[batch, len, ch]` → `[batch, out_len, kernel*ch]` sliding windows.
    pub fn unfold(&mut self, a: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 3 || kernel == 0 || stride == 0 || s[1] + 2 * padding < kernel {
            return Err(invalid(
                "unfold",
                format!("input {s:?}, kernel {kernel}, stride {stride}, padding {padding}"),
            ));
        }
        let v = tensor::unfold(self.value(a), kernel, stride, padding);
        Ok(self.push(v, Op::Unfold { x: a, kernel, stride, padding }))
    }

    /// Adjoint of [`Graph::unfold`] back to a signal of length `len`.
    pub fn fold(&mut self, a: Var, len: usize, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 3 || kernel == 0 || !s[2].is_multiple_of(kernel) || tensor::conv_out_len(len, kernel, stride, padding) != s[1] {
            return Err(invalid("fold", format!("input {s:?} cannot fold to length {len}")));
        }
        let v = tensor::fold(self.value(a), len, kernel, stride, padding);
        Ok(self.push(v, Op::Fold { x: a, kernel, stride, padding }))
    }

    /// Strided 1-D convolution over `[batch, len, c_in]` with weight
    /// `[kernel*c_in, c_out]` (window-major) and bias `[c_out]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Var,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let cols = self.unfold(x, kernel, stride, padding)?;
        let y = self.matmul(cols, weight)?;
        self.add(y, bias)
    }

    // ------------------------------------------------------------------
    // Normalisation
    // ------------------------------------------------------------------

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).is_empty() {
            return Err(invalid("softmax", "rank-0 input"));
        }
        let v = tensor::softmax_last(self.value(a));
        if !v.is_finite() {
            return Err(AutodiffError::NonFinite {
                op: "softmax",
                shape: v.shape().to_vec(),
            });
        }
        Ok(self.push(v, Op::Softmax(a)))
    }

    /// Layer normalisation over the last axis, without affine parameters.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let axis = shape.len().checked_sub(1).ok_or_else(|| invalid("layer_norm", "rank-0 input"))?;
        let n = shape[axis];
        let mu = self.mean_axis(x, axis, true)?;
        let mu = self.expand_axis(mu, axis, n)?;
        let centred = self.sub(x, mu)?;
        let sq = self.mul(centred, centred)?;
        let var = self.mean_axis(sq, axis, true)?;
        let var = self.add_scalar(var, eps);
        let std = self.sqrt(var);
        let inv = self.recip(std);
        let inv = self.expand_axis(inv, axis, n)?;
        let y = self.mul(centred, inv)?;
        if !self.value(y).is_finite() {
            return Err(AutodiffError::NonFinite {
                op: "layer_norm",
                shape,
            });
        }
        Ok(y)
    }

    // ------------------------------------------------------------------
    // Reverse mode
    // ------------------------------------------------------------------

    /// Reverse-mode gradients of the scalar `output` with respect to `wrt`.
    ///
    /// With `differentiable` the gradient computation is itself recorded, so
    /// any scalar function of the returned gradients can be differentiated
    /// again. Otherwise the returned gradients are constants and the scratch
    /// nodes of the backward pass are discarded.
    pub fn grad(&mut self, output: Var, wrt: &[Var], differentiable: bool) -> Result<GradientMap> {
        if !self.value(output).shape().is_empty() {
            return Err(AutodiffError::NotScalar(self.shape(output).to_vec()));
        }
        let mut map = GradientMap::default();
        if wrt.is_empty() {
            return Ok(map);
        }
        let start_len = self.nodes.len();
        let out = output.0;
        let lo = wrt.iter().map(|v| v.0).min().unwrap_or(0).min(out);

        // Nodes in [lo, out] that depend on some requested node.
        let mut relevant = vec![false; out + 1 - lo];
        for w in wrt {
            if w.0 <= out {
                relevant[w.0 - lo] = true;
            }
        }
        for i in lo..=out {
            if relevant[i - lo] || !self.nodes[i].requires_grad {
                continue;
            }
            relevant[i - lo] = self.nodes[i]
                .op
                .operands()
                .iter()
                .any(|v| v.0 >= lo && relevant[v.0 - lo]);
        }

        let prev = self.recording;
        self.recording = differentiable;
        let result = self.backward(output, lo, &relevant);
        self.recording = prev;
        let adjoints = result?;

        let grads: Vec<(Var, Tensor, Option<Var>)> = wrt
            .iter()
            .map(|&w| {
                let adj = if w.0 <= out { adjoints[w.0 - lo] } else { None };
                let value = match adj {
                    Some(a) => self.nodes[a.0].value.clone(),
                    None => Tensor::zeros(self.shape(w)),
                };
                (w, value, adj)
            })
            .collect();

        if differentiable {
            for (w, value, adj) in grads {
                let g = match adj {
                    Some(a) => a,
                    None => self.constant(value),
                };
                map.entries.insert(w, g);
            }
        } else {
            self.nodes.truncate(start_len);
            for (w, value, _) in grads {
                let g = self.constant(value);
                map.entries.insert(w, g);
            }
        }
        Ok(map)
    }

    fn backward(&mut self, output: Var, lo: usize, relevant: &[bool]) -> Result<Vec<Option<Var>>> {
        let out = output.0;
        let mut adj: Vec<Option<Var>> = vec![None; out + 1 - lo];
        if !relevant[out - lo] {
            return Ok(adj);
        }
        let seed = self.constant(Tensor::scalar(1.0));
        adj[out - lo] = Some(seed);
        for i in (lo..=out).rev() {
            let Some(g) = adj[i - lo] else { continue };
            if !relevant[i - lo] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            let want = |v: Var| v.0 >= lo && relevant[v.0 - lo];
            for (input, contrib) in self.vjp(&op, Var(i), g, &want)? {
                let slot = &mut adj[input.0 - lo];
                *slot = Some(match *slot {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib)?,
                });
            }
        }
        Ok(adj)
    }

    /// Vector-Jacobian product of one node, built from graph primitives.
    fn vjp(&mut self, op: &Op, y: Var, g: Var, want: &dyn Fn(Var) -> bool) -> Result<Vec<(Var, Var)>> {
        let mut out = Vec::with_capacity(2);
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if want(a) {
                    out.push((a, g));
                }
                if want(b) {
                    let sb = self.shape(b).to_vec();
                    out.push((b, self.sum_to(g, &sb)?));
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    out.push((a, g));
                }
                if want(b) {
                    let sb = self.shape(b).to_vec();
                    let s = self.sum_to(g, &sb)?;
                    out.push((b, self.neg(s)));
                }
            }
            Op::Mul(a, b) => {
                if want(a) {
                    out.push((a, self.mul(g, b)?));
                }
                if want(b) {
                    let sb = self.shape(b).to_vec();
                    let ga = self.mul(g, a)?;
                    out.push((b, self.sum_to(ga, &sb)?));
                }
            }
            Op::Scale(a, c) => {
                if want(a) {
                    out.push((a, self.scale(g, c)));
                }
            }
            Op::AddScalar(a) => {
                if want(a) {
                    out.push((a, g));
                }
            }
            Op::Recip(a) => {
                if want(a) {
                    let yy = self.mul(y, y)?;
                    let t = self.mul(g, yy)?;
                    out.push((a, self.neg(t)));
                }
            }
            Op::Exp(a) => {
                if want(a) {
                    out.push((a, self.mul(g, y)?));
                }
            }
            Op::Tanh(a) => {
                if want(a) {
                    let yy = self.mul(y, y)?;
                    let gyy = self.mul(g, yy)?;
                    out.push((a, self.sub(g, gyy)?));
                }
            }
            Op::Sin(a) => {
                if want(a) {
                    let c = self.cos(a);
                    out.push((a, self.mul(g, c)?));
                }
            }
            Op::Cos(a) => {
                if want(a) {
                    let s = self.sin(a);
                    let t = self.mul(g, s)?;
                    out.push((a, self.neg(t)));
                }
            }
            Op::Sqrt(a) => {
                if want(a) {
                    let r = self.recip(y);
                    let t = self.mul(g, r)?;
                    out.push((a, self.scale(t, 0.5)));
                }
            }
            Op::MatMul(a, b) => {
                if want(a) {
                    let bt = self.transpose(b)?;
                    out.push((a, self.matmul(g, bt)?));
                }
                if want(b) {
                    if self.shape(b).len() == 2 {
                        let sa = self.shape(a).to_vec();
                        let (k, n) = (sa[sa.len() - 1], self.shape(b)[1]);
                        let rows = numel(&sa) / k.max(1);
                        let a2 = self.reshape(a, &[rows, k])?;
                        let g2 = self.reshape(g, &[rows, n])?;
                        let at = self.transpose(a2)?;
                        out.push((b, self.matmul(at, g2)?));
                    } else {
                        let at = self.transpose(a)?;
                        out.push((b, self.matmul(at, g)?));
                    }
                }
            }
            Op::Permute(a, ref perm) => {
                if want(a) {
                    let mut inv = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inv[p] = i;
                    }
                    out.push((a, self.permute(g, &inv)?));
                }
            }
            Op::Reshape(a) => {
                if want(a) {
                    let sa = self.shape(a).to_vec();
                    out.push((a, self.reshape(g, &sa)?));
                }
            }
            Op::SumAxis(a, axis) => {
                if want(a) {
                    let n = self.shape(a)[axis];
                    out.push((a, self.expand_axis(g, axis, n)?));
                }
            }
            Op::ExpandAxis(a, axis) => {
                if want(a) {
                    out.push((a, self.sum_axis(g, axis, true)?));
                }
            }
            Op::SumLeading(a) => {
                if want(a) {
                    let sa = self.shape(a).to_vec();
                    out.push((a, self.expand_to(g, &sa)?));
                }
            }
            Op::ExpandLeading(a) => {
                if want(a) {
                    let sa = self.shape(a).to_vec();
                    out.push((a, self.sum_to(g, &sa)?));
                }
            }
            Op::Concat(ref parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[axis];
                    if want(p) {
                        out.push((p, self.slice(g, axis, offset, len)?));
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                if want(x) {
                    let n = self.shape(x)[axis];
                    let len = self.shape(y)[axis];
                    out.push((x, self.pad(g, axis, start, n - start - len)?));
                }
            }
            Op::Pad { x, axis, before } => {
                if want(x) {
                    let n = self.shape(x)[axis];
                    out.push((x, self.slice(g, axis, before, n)?));
                }
            }
            Op::Unfold { x, kernel, stride, padding } => {
                if want(x) {
                    let len = self.shape(x)[1];
                    out.push((x, self.fold(g, len, kernel, stride, padding)?));
                }
            }
            Op::Fold { x, kernel, stride, padding } => {
                if want(x) {
                    out.push((x, self.unfold(g, kernel, stride, padding)?));
                }
            }
            Op::Softmax(a) => {
                if want(a) {
                    let axis = self.shape(a).len() - 1;
                    let n = self.shape(a)[axis];
                    let gy = self.mul(g, y)?;
                    let s = self.sum_axis(gy, axis, true)?;
                    let s = self.expand_axis(s, axis, n)?;
                    let centred = self.sub(g, s)?;
                    out.push((a, self.mul(y, centred)?));
                }
            }
            Op::SmoothL1(d, delta) => {
                if want(d) {
                    let scaled = self.scale(d, 1.0 / delta);
                    let slope = self.clamp(scaled, -1.0, 1.0);
                    out.push((d, self.mul(g, slope)?));
                }
            }
            Op::Clamp(a, lo, hi) => {
                if want(a) {
                    let mask = self.value(a).map(|x| if x > lo && x < hi { 1.0 } else { 0.0 });
                    let mask = self.constant(mask);
                    out.push((a, self.mul(g, mask)?));
                }
            }
        }
        Ok(out)
    }
}
