//! A catalog of scalar test functions, one or more per primitive, used to
//! verify backward rules against finite differences.
//!
//! Each case reduces the primitive's output to a scalar through a fixed random
//! weighting so that every output element contributes to the gradient.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub type ScalarFn = Box<dyn Fn(&mut Graph, Var) -> Result<Var>>;

pub struct GradCase {
    pub name: &'static str,
    pub x: Tensor,
    pub f: ScalarFn,
}

/// splitmix64; enough for generating test inputs without extra dependencies.
struct Gen(u64);

impl Gen {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next() >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    }

    fn dim(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next() % (hi - lo + 1) as u64) as usize
    }

    fn tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| self.uniform(lo, hi)).collect()).unwrap()
    }
}

fn ok(v: Var) -> Result<Var> {
    Ok(v)
}

/// `Σ w ⊙ y` with `w` a fixed constant of `y`'s shape.
fn weighted(g: &mut Graph, y: Var, w: &Tensor) -> Result<Var> {
    let wv = g.constant(w.clone());
    let p = g.mul(y, wv)?;
    Ok(g.sum_all(p))
}

macro_rules! case {
    ($name:expr, $x:expr, $w:expr, |$g:ident, $v:ident| $body:expr) => {{
        let w: Tensor = $w;
        GradCase {
            name: $name,
            x: $x,
            f: Box::new(move |$g: &mut Graph, $v: Var| {
                let y = $body?;
                weighted($g, y, &w)
            }),
        }
    }};
}

/// One instance of every primitive case, with shapes and values drawn from `seed`.
pub fn primitive_cases(seed: u64) -> Vec<GradCase> {
    let mut r = Gen(seed ^ 0x5EED_CA5E);
    let (a, b, c) = (r.dim(1, 3), r.dim(1, 4), r.dim(1, 4));
    let mut cases = Vec::new();

    let x = r.tensor(&[a, b], -1.5, 1.5);
    let other = r.tensor(&[a, b], -1.5, 1.5);
    let bias_like = r.tensor(&[b], -1.5, 1.5);
    let w = r.tensor(&[a, b], -1.0, 1.0);

    {
        let o = other.clone();
        cases.push(case!("add", x.clone(), w.clone(), |g, v| {
            let k = g.constant(o.clone());
            g.add(v, k)
        }));
    }
    {
        let o = other.clone();
        cases.push(case!("broadcast-add/rhs", bias_like.clone(), w.clone(), |g, v| {
            let k = g.constant(o.clone());
            g.broadcast_add(k, v)
        }));
    }
    {
        let o = other.clone();
        cases.push(case!("sub/lhs", x.clone(), w.clone(), |g, v| {
            let k = g.constant(o.clone());
            g.sub(v, k)
        }));
        let o = other.clone();
        cases.push(case!("sub/rhs-broadcast", bias_like.clone(), w.clone(), |g, v| {
            let k = g.constant(o.clone());
            g.sub(k, v)
        }));
    }
    {
        let o = other.clone();
        cases.push(case!("mul", x.clone(), w.clone(), |g, v| {
            let k = g.constant(o.clone());
            let p = g.mul(v, k)?;
            g.mul(p, v)
        }));
        let o = other.clone();
        cases.push(case!("mul/rhs-broadcast", bias_like.clone(), w.clone(), |g, v| {
            let k = g.constant(o.clone());
            g.mul(k, v)
        }));
        let xk = x.clone();
        cases.push(case!("mul/scalar", Tensor::scalar(r.uniform(-2.0, 2.0)), w.clone(), |g, v| {
            let k = g.constant(xk.clone());
            let p = g.mul(k, v)?;
            g.mul(p, v)
        }));
    }
    cases.push(case!("scalar-mul", x.clone(), w.clone(), |g, v| ok(g.scale(v, -1.75))));
    cases.push(case!("add-scalar", x.clone(), w.clone(), |g, v| {
        let s = g.add_scalar(v, 0.3);
        g.mul(s, v)
    }));
    cases.push(case!("recip", r.tensor(&[a, b], 0.5, 2.0), w.clone(), |g, v| ok(g.recip(v))));
    cases.push(case!("exp", x.clone(), w.clone(), |g, v| ok(g.exp(v))));
    cases.push(case!("tanh", x.clone(), w.clone(), |g, v| ok(g.tanh(v))));
    cases.push(case!("sin", x.clone(), w.clone(), |g, v| ok(g.sin(v))));
    cases.push(case!("cos", x.clone(), w.clone(), |g, v| ok(g.cos(v))));
    cases.push(case!("sqrt", r.tensor(&[a, b], 0.3, 2.0), w.clone(), |g, v| ok(g.sqrt(v))));
    cases.push(case!("gelu", x.clone(), w.clone(), |g, v| ok(g.gelu(v))));
    // Keep away from the clamp edges where the derivative jumps.
    let clampable = x.map(|v| if (v.abs() - 1.0).abs() < 0.05 { v * 0.8 } else { v });
    cases.push(case!("clamp", clampable.clone(), w.clone(), |g, v| {
        let c = g.clamp(v, -1.0, 1.0);
        g.mul(c, v)
    }));
    {
        let o = other.map(|v| v * 0.5);
        // keep the difference away from the |d| = 1 kink
        let xs = Tensor::new(
            x.shape().to_vec(),
            x.data()
                .iter()
                .zip(o.data())
                .map(|(&v, &t)| if ((v - t).abs() - 1.0).abs() < 0.05 { t + 0.5 } else { v })
                .collect(),
        )
        .unwrap();
        cases.push(case!("smooth-l1", xs, w.clone(), |g, v| {
            let k = g.constant(o.clone());
            g.smooth_l1(v, k, 1.0)
        }));
    }

    // Matrix products.
    {
        let (m, k, n) = (r.dim(1, 4), r.dim(1, 4), r.dim(1, 4));
        let am = r.tensor(&[a, m, k], -1.0, 1.0);
        let bm = r.tensor(&[k, n], -1.0, 1.0);
        let bb = r.tensor(&[a, k, n], -1.0, 1.0);
        let wmn = r.tensor(&[a, m, n], -1.0, 1.0);
        let bm2 = bm.clone();
        cases.push(case!("matmul/lhs", am.clone(), wmn.clone(), |g, v| {
            let k = g.constant(bm2.clone());
            g.matmul(v, k)
        }));
        let am2 = am.clone();
        cases.push(case!("matmul/shared-rhs", bm.clone(), wmn.clone(), |g, v| {
            let k = g.constant(am2.clone());
            g.matmul(k, v)
        }));
        let am3 = am.clone();
        cases.push(case!("matmul/batched-rhs", bb, wmn.clone(), |g, v| {
            let k = g.constant(am3.clone());
            g.matmul(k, v)
        }));
        let wt = r.tensor(&[a, k, m], -1.0, 1.0);
        cases.push(case!("transpose", am.clone(), wt, |g, v| g.transpose(v)));
    }

    // Layout.
    {
        let x3 = r.tensor(&[a, b, c], -1.0, 1.0);
        let wp = r.tensor(&[c, a, b], -1.0, 1.0);
        cases.push(case!("permute", x3.clone(), wp, |g, v| g.permute(v, &[2, 0, 1])));
        let wr = r.tensor(&[a * b * c], -1.0, 1.0);
        cases.push(case!("reshape", x3.clone(), wr, |g, v| g.reshape(v, &[a * b * c])));
        let ws = r.tensor(&[a, 1, c], -1.0, 1.0);
        cases.push(case!("sum", x3.clone(), ws.clone(), |g, v| {
            let s = g.mul(v, v)?;
            g.sum_axis(s, 1, true)
        }));
        cases.push(case!("mean", x3.clone(), ws.clone(), |g, v| {
            let s = g.mul(v, v)?;
            g.mean_axis(s, 1, true)
        }));
        let wsl = r.tensor(&[a, c], -1.0, 1.0);
        let x1 = r.tensor(&[a, 1, c], -1.0, 1.0);
        let we = r.tensor(&[a, 3, c], -1.0, 1.0);
        cases.push(case!("expand", x1, we, |g, v| {
            let e = g.expand_axis(v, 1, 3)?;
            g.mul(e, e)
        }));
        cases.push(case!("sum-to", x3.clone(), wsl, |g, v| {
            let s = g.mul(v, v)?;
            let p = g.permute(s, &[1, 0, 2])?;
            g.sum_to(p, &[a, c])
        }));
        let wl = r.tensor(&[2, b, c], -1.0, 1.0);
        cases.push(case!("expand-to", r.tensor(&[b, c], -1.0, 1.0), wl, |g, v| {
            let e = g.expand_to(v, &[2, b, c])?;
            g.mul(e, e)
        }));
        let other3 = r.tensor(&[a, 2, c], -1.0, 1.0);
        let wc = r.tensor(&[a, b + 2, c], -1.0, 1.0);
        cases.push(case!("concat", x3.clone(), wc, |g, v| {
            let k = g.constant(other3.clone());
            let s = g.mul(v, v)?;
            g.concat(&[k, s], 1)
        }));
        let start = r.dim(0, b - 1);
        let len = b - start;
        let wsl2 = r.tensor(&[a, len, c], -1.0, 1.0);
        cases.push(case!("slice", x3.clone(), wsl2, |g, v| {
            let s = g.mul(v, v)?;
            g.slice(s, 1, start, len)
        }));
        let wpad = r.tensor(&[a, b + 3, c], -1.0, 1.0);
        cases.push(case!("pad", x3.clone(), wpad, |g, v| {
            let s = g.mul(v, v)?;
            g.pad(s, 1, 1, 2)
        }));
    }

    // Convolution and its building blocks.
    {
        let (len, cin, cout) = (r.dim(3, 9), r.dim(1, 3), r.dim(1, 3));
        let out_len = crate::conv_out_len(len, 3, 2, 1);
        let xs = r.tensor(&[a, len, cin], -1.0, 1.0);
        let wk = r.tensor(&[3 * cin, cout], -1.0, 1.0);
        let bias = r.tensor(&[cout], -1.0, 1.0);
        let wo = r.tensor(&[a, out_len, cout], -1.0, 1.0);
        let (wk2, bias2) = (wk.clone(), bias.clone());
        cases.push(case!("conv1d/input", xs.clone(), wo.clone(), |g, v| {
            let wv = g.constant(wk2.clone());
            let bv = g.constant(bias2.clone());
            g.conv1d(v, wv, bv, 3, 2, 1)
        }));
        let xs2 = xs.clone();
        let bias3 = bias.clone();
        cases.push(case!("conv1d/weight", wk.clone(), wo.clone(), |g, v| {
            let xv = g.constant(xs2.clone());
            let bv = g.constant(bias3.clone());
            let y = g.conv1d(xv, v, bv, 3, 2, 1)?;
            g.mul(y, y)
        }));
        let wu = r.tensor(&[a, out_len, 3 * cin], -1.0, 1.0);
        cases.push(case!("unfold", xs.clone(), wu.clone(), |g, v| {
            let s = g.mul(v, v)?;
            g.unfold(s, 3, 2, 1)
        }));
        let wf = r.tensor(&[a, len, cin], -1.0, 1.0);
        cases.push(case!("fold", r.tensor(&[a, out_len, 3 * cin], -1.0, 1.0), wf, |g, v| {
            let s = g.mul(v, v)?;
            g.fold(s, len, 3, 2, 1)
        }));
    }

    // Normalisation.
    {
        let n = r.dim(2, 6);
        let xs = r.tensor(&[a, n], -2.0, 2.0);
        let wn = r.tensor(&[a, n], -1.0, 1.0);
        cases.push(case!("softmax", xs.clone(), wn.clone(), |g, v| g.softmax(v)));
        cases.push(case!("layer-norm", xs.clone(), wn.clone(), |g, v| g.layer_norm(v, 1e-5)));
    }
    cases
}
