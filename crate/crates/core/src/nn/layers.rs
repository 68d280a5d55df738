//! Layers built on the autodiff graph. Each layer owns only [`ParamId`]s; the
//! values live in a [`ParamStore`] and are bound per graph.

use pad_autodiff::{Graph, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};
use crate::nn::{Bound, ParamId, ParamStore};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Attention logits for masked (future) positions. Finite, but far below
/// anything reachable, so the softmax weight underflows to exactly zero.
const MASKED_LOGIT: f64 = -1e30;

fn normal_tensor(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("sized")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Gelu => g.gelu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Identity => x,
        }
    }
}

/// Affine map over the last axis: `x · W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Weights `~ N(0, gain² / fan_in)`, zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let std = gain / (in_dim as f64).sqrt();
        let weight = store.register(format!("{name}.w"), normal_tensor(rng, &[in_dim, out_dim], std))?;
        let bias = store.register(format!("{name}.b"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let last = *g.shape(x).last().unwrap_or(&0);
        if last != self.in_dim {
            return Err(PadError::Invalid(format!(
                "linear expects input dim {}, got shape {:?}",
                self.in_dim,
                g.shape(x)
            )));
        }
        // flatten leading axes so the weight is shared by a single GEMM
        let shape = g.shape(x).to_vec();
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let flat = if shape.len() == 2 { x } else { g.reshape(x, &[rows, self.in_dim])? };
        let y = g.matmul(flat, p.var(self.weight))?;
        let y = g.add(y, p.var(self.bias))?;
        if shape.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.out_dim;
        Ok(g.reshape(y, &out_shape)?)
    }
}

/// Applies `layers` in order with `activation` between consecutive affine
/// maps and none after the last.
pub fn mlp_forward(g: &mut Graph, p: &Bound, layers: &[Linear], activation: Activation, x: Var) -> Result<Var> {
    for pair in layers.windows(2) {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(PadError::Invalid(format!(
                "mlp layers do not chain: {} -> {}",
                pair[0].out_dim, pair[1].in_dim
            )));
        }
    }
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        h = layer.forward(g, p, h)?;
        if i + 1 < layers.len() {
            h = activation.apply(g, h);
        }
    }
    Ok(h)
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(PadError::Config(format!("mlp {name} needs at least two dims")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], 1.0, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers, activation })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        mlp_forward(g, p, &self.layers, self.activation, x)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }
}

/// LayerNorm over the last axis with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let gain = store.register(format!("{name}.g"), Tensor::ones(&[dim]))?;
        let bias = store.register(format!("{name}.b"), Tensor::zeros(&[dim]))?;
        Ok(Self { gain, bias, dim })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.layer_norm(x, LAYER_NORM_EPS)?;
        let y = g.mul(y, p.var(self.gain))?;
        Ok(g.add(y, p.var(self.bias))?)
    }
}

/// Strided 1-D convolution over `[batch, len, c_in]`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fan_in = kernel * in_ch;
        let weight = store.register(
            format!("{name}.w"),
            normal_tensor(rng, &[fan_in, out_ch], 1.0 / (fan_in as f64).sqrt()),
        )?;
        let bias = store.register(format!("{name}.b"), Tensor::zeros(&[out_ch]))?;
        Ok(Self {
            weight,
            bias,
            kernel,
            stride,
            padding,
            in_ch,
            out_ch,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        Ok(g.conv1d(x, p.var(self.weight), p.var(self.bias), self.kernel, self.stride, self.padding)?)
    }
}

/// Multi-head self-attention where token `t` attends only to tokens `≤ t`.
#[derive(Clone, Debug)]
pub struct CausalSelfAttention {
    pub qkv: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl CausalSelfAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        out_gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(PadError::Config(format!("width {dim} not divisible into {heads} heads")));
        }
        Ok(Self {
            qkv: Linear::new(store, &format!("{name}.qkv"), dim, 3 * dim, 1.0, rng)?,
            out: Linear::new(store, &format!("{name}.out"), dim, dim, out_gain, rng)?,
            heads,
            dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        Ok(self.forward_with_weights(g, p, x)?.0)
    }

    /// Output `[batch, tokens, dim]` and attention weights `[batch*heads, tokens, tokens]`.
    pub fn forward_with_weights(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<(Var, Var)> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.dim {
            return Err(PadError::Invalid(format!(
                "attention expects [batch, tokens, {}], got {shape:?}",
                self.dim
            )));
        }
        let (b, t, h) = (shape[0], shape[1], self.heads);
        let dh = self.dim / h;
        let qkv = self.qkv.forward(g, p, x)?;
        let qkv = g.reshape(qkv, &[b, t, 3, h, dh])?;
        let qkv = g.permute(qkv, &[2, 0, 3, 1, 4])?; // [3, b, h, t, dh]
        let pick = |g: &mut Graph, i: usize| -> Result<Var> {
            let s = g.slice(qkv, 0, i, 1)?;
            Ok(g.reshape(s, &[b * h, t, dh])?)
        };
        let q = pick(g, 0)?;
        let k = pick(g, 1)?;
        let v = pick(g, 2)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let mask = g.constant(causal_mask(t));
        let scores = g.add(scores, mask)?;
        let weights = g.softmax(scores)?;
        let ctx = g.matmul(weights, v)?; // [b*h, t, dh]
        let ctx = g.reshape(ctx, &[b, h, t, dh])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b, t, self.dim])?;
        Ok((self.out.forward(g, p, ctx)?, weights))
    }
}

fn causal_mask(t: usize) -> Tensor {
    let mut m = Tensor::zeros(&[t, t]);
    for i in 0..t {
        for j in i + 1..t {
            m.data_mut()[i * t + j] = MASKED_LOGIT;
        }
    }
    m
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: CausalSelfAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        out_gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim)?,
            attn: CausalSelfAttention::new(store, &format!("{name}.attn"), dim, heads, out_gain, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), &[dim, 4 * dim, dim], Activation::Gelu, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.ln1.forward(g, p, x)?;
        let h = self.attn.forward(g, p, h)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, p, x)?;
        let h = self.mlp.forward(g, p, h)?;
        Ok(g.add(x, h)?)
    }
}

/// A learned tensor added to inputs (e.g. positional embeddings).
pub fn learned_table(store: &mut ParamStore, name: &str, shape: &[usize], std: f64, rng: &mut impl Rng) -> Result<ParamId> {
    store.register(name, normal_tensor(rng, shape, std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{purpose, stream};
    use crate::nn::param_grad_check;
    use pad_autodiff::finite_difference_check;

    fn rng() -> crate::rng::StreamRng {
        stream(11, &[purpose::TEST])
    }

    #[test]
    fn zero_mlp_outputs_zero() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 4, 2], Activation::Gelu, &mut rng()).unwrap();
        for (id, _, t) in store.clone().iter() {
            store.set(id, Tensor::zeros(t.shape())).unwrap();
        }
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::ones(&[5, 3]));
        let y = mlp.forward(&mut g, &p, x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_layer_is_affine() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 2], Activation::Gelu, &mut rng()).unwrap();
        store.set(mlp.layers[0].bias, Tensor::vector(vec![0.5, -1.0])).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 0.5]).unwrap());
        let y = mlp.forward(&mut g, &p, x).unwrap();
        let manual = g.matmul(x, p.var(mlp.layers[0].weight)).unwrap();
        let manual = g.add(manual, p.var(mlp.layers[0].bias)).unwrap();
        assert_eq!(g.value(y), g.value(manual));
    }

    #[test]
    fn chain_mismatch_rejected() {
        let mut store = ParamStore::new();
        let a = Linear::new(&mut store, "a", 2, 3, 1.0, &mut rng()).unwrap();
        let b = Linear::new(&mut store, "b", 4, 1, 1.0, &mut rng()).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::ones(&[1, 2]));
        assert!(mlp_forward(&mut g, &p, &[a, b], Activation::Gelu, x).is_err());
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 6, 2], Activation::Gelu, &mut rng()).unwrap();
        let x = Tensor::new(vec![2, 3], vec![0.3, -0.7, 1.1, 0.0, 0.4, -1.2]).unwrap();
        // input gradient
        let report = finite_difference_check(
            |g, v| {
                let p = store.bind(g, false);
                let y = mlp.forward(g, &p, v).map_err(|e| match e {
                    PadError::Autodiff(a) => a,
                    other => panic!("{other}"),
                })?;
                let y = g.mul(y, y)?;
                Ok(g.sum_all(y))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error() <= 1e-6);
        for layer in &mlp.layers {
            for id in [layer.weight, layer.bias] {
                let report = param_grad_check(
                    &store,
                    id,
                    |g, p| {
                        let xv = g.constant(x.clone());
                        let y = mlp.forward(g, p, xv)?;
                        let y = g.mul(y, y)?;
                        Ok(g.sum_all(y))
                    },
                    1e-5,
                )
                .unwrap();
                assert!(report.max_rel_error() <= 1e-6, "{}", store.name(id));
            }
        }
    }

    #[test]
    fn attention_is_causal_and_row_stochastic() {
        let mut store = ParamStore::new();
        let attn = CausalSelfAttention::new(&mut store, "a", 8, 4, 1.0, &mut rng()).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = normal_tensor(&mut rng(), &[2, 5, 8], 1.0);
        let xv = g.constant(x.clone());
        let (out, w) = attn.forward_with_weights(&mut g, &p, xv).unwrap();
        assert_eq!(g.shape(out), &[2, 5, 8]);
        let wt = g.value(w).clone();
        for row in 0..wt.len() / 5 {
            let r = &wt.data()[row * 5..row * 5 + 5];
            let i = row % 5;
            for (j, &a) in r.iter().enumerate() {
                if j > i {
                    assert_eq!(a, 0.0);
                }
            }
            assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        // zeroing the future leaves the past untouched
        for t in 0..5 {
            let mut masked = x.clone();
            for b in 0..2 {
                for s in t + 1..5 {
                    for c in 0..8 {
                        masked.data_mut()[(b * 5 + s) * 8 + c] = 0.0;
                    }
                }
            }
            let mv = g.constant(masked);
            let out2 = attn.forward(&mut g, &p, mv).unwrap();
            for b in 0..2 {
                for s in 0..=t {
                    let i = (b * 5 + s) * 8;
                    assert_eq!(g.value(out).data()[i..i + 8], g.value(out2).data()[i..i + 8]);
                }
            }
        }
    }

    #[test]
    fn single_token_attends_to_itself() {
        let mut store = ParamStore::new();
        let attn = CausalSelfAttention::new(&mut store, "a", 4, 2, 1.0, &mut rng()).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(normal_tensor(&mut rng(), &[1, 1, 4], 1.0));
        let (_, w) = attn.forward_with_weights(&mut g, &p, x).unwrap();
        assert_eq!(g.value(w).data(), &[1.0, 1.0]);
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut store = ParamStore::new();
        assert!(CausalSelfAttention::new(&mut store, "a", 6, 4, 1.0, &mut rng()).is_err());
    }
}
