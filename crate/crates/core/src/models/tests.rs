use pad_autodiff::{finite_difference_check, Graph, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::nn::{param_grad_check, ParamStore};
use crate::rng::{purpose, stream};

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = stream(seed, &[purpose::TEST]);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

fn tiny() -> PadModel {
    PadModel::new(PadConfig::tiny(3, 2), 7).unwrap()
}

struct Inputs {
    z_future: Tensor,
    z_past: Tensor,
    goal: Tensor,
    lambdas: Vec<f64>,
}

fn inputs(m: &PadModel, b: usize, seed: u64) -> Inputs {
    let c = &m.config;
    Inputs {
        z_future: random(&[b, c.horizon, c.latent_dim], seed),
        z_past: random(&[b, c.past_len, c.latent_dim], seed + 1),
        goal: random(&[b, c.state_dim], seed + 2),
        lambdas: (0..b).map(|i| (i as f64 + 0.5) / b as f64).collect(),
    }
}

fn context(g: &mut Graph, x: &Inputs) -> Context {
    Context {
        z_past: g.constant(x.z_past.clone()),
        goal: g.constant(x.goal.clone()),
        lambdas: x.lambdas.clone(),
    }
}

fn energies(m: &PadModel, x: &Inputs) -> Vec<f64> {
    let mut g = Graph::new();
    let p = m.params().bind(&mut g, false);
    let ctx = context(&mut g, x);
    let z = g.constant(x.z_future.clone());
    let e = m.energy(&mut g, &p, z, &ctx).unwrap();
    g.value(e).data().to_vec()
}

#[test]
fn encode_is_per_state() {
    let m = tiny();
    let states = random(&[2, 3], 1);
    let mut g = Graph::new();
    let p = m.params().bind(&mut g, false);
    let both = g.constant(states.clone());
    let both = m.encode(&mut g, &p, both).unwrap();
    for i in 0..2 {
        let one = Tensor::new(vec![1, 3], states.data()[i * 3..i * 3 + 3].to_vec()).unwrap();
        let one = g.constant(one);
        let one = m.encode(&mut g, &p, one).unwrap();
        assert_eq!(g.value(one).data(), &g.value(both).data()[i * 4..i * 4 + 4]);
    }
}

#[test]
fn encoded_latents_are_normalized() {
    let m = PadModel::new(PadConfig::desk(5, 2), 3).unwrap();
    let mut g = Graph::new();
    let p = m.params().bind(&mut g, false);
    let s = g.constant(random(&[16, 5], 2));
    let z = m.encode(&mut g, &p, s).unwrap();
    for row in g.value(z).data().chunks(32) {
        let mean = row.iter().sum::<f64>() / 32.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
        assert!(mean.abs() < 1e-6, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-6, "var {var}");
    }
}

#[test]
fn encode_rejects_wrong_dim() {
    let m = tiny();
    let mut g = Graph::new();
    let p = m.params().bind(&mut g, false);
    let s = g.constant(random(&[2, 4], 1));
    assert!(m.encode(&mut g, &p, s).is_err());
}

#[test]
fn construction_is_deterministic() {
    let a = tiny();
    let b = tiny();
    for ((_, _, x), (_, _, y)) in a.params().iter().zip(b.params().iter()) {
        assert_eq!(x, y);
    }
    let x = inputs(&a, 2, 10);
    assert_eq!(energies(&a, &x), energies(&b, &x));
}

#[test]
fn energy_is_finite_per_row() {
    let m = tiny();
    let e = energies(&m, &inputs(&m, 3, 20));
    assert_eq!(e.len(), 3);
    assert!(e.iter().all(|v| v.is_finite()));
}

#[test]
fn energy_rejects_wrong_horizon() {
    let m = tiny();
    let mut x = inputs(&m, 2, 20);
    x.z_future = random(&[2, 4, 4], 1);
    let mut g = Graph::new();
    let p = m.params().bind(&mut g, false);
    let ctx = context(&mut g, &x);
    let z = g.constant(x.z_future.clone());
    assert!(m.energy(&mut g, &p, z, &ctx).is_err());
}

#[test]
fn energy_depends_on_lambda() {
    let m = tiny();
    let mut x = inputs(&m, 1, 30);
    x.lambdas = vec![0.1];
    let lo = energies(&m, &x)[0];
    x.lambdas = vec![0.9];
    let hi = energies(&m, &x)[0];
    assert!((lo - hi).abs() > 1e-9, "{lo} vs {hi}");
}

#[test]
fn energy_rows_are_independent() {
    // a row's energy does not depend on other rows in the batch
    let m = tiny();
    let x = inputs(&m, 2, 40);
    let both = energies(&m, &x);
    let row = |t: &Tensor, n: usize| Tensor::new(
        [&[1][..], &t.shape()[1..]].concat(),
        t.data()[n * t.len() / 2..(n + 1) * t.len() / 2].to_vec(),
    ).unwrap();
    let one = Inputs {
        z_future: row(&x.z_future, 1),
        z_past: row(&x.z_past, 1),
        goal: row(&x.goal, 1),
        lambdas: vec![x.lambdas[1]],
    };
    assert!((energies(&m, &one)[0] - both[1]).abs() < 1e-12);
}

#[test]
fn energy_gradient_matches_finite_differences() {
    let m = tiny();
    assert_eq!((m.config.latent_dim, m.config.horizon), (4, 8));
    let x = inputs(&m, 1, 50);
    let f = |g: &mut Graph, z: Var| {
        let p = m.params().bind(g, false);
        let ctx = context(g, &x);
        let e = m.energy(g, &p, z, &ctx).expect("energy");
        Ok(g.sum_all(e))
    };
    let r = finite_difference_check(f, &x.z_future, 1e-5).unwrap();
    let norm: f64 = r.analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm > 0.0);
    assert!(r.max_rel_error() <= 1e-5, "{}", r.max_rel_error());
}

#[test]
fn energy_is_pure_in_values() {
    // the same values reached through different graphs give the same energy
    let m = tiny();
    let x = inputs(&m, 2, 60);
    let direct = energies(&m, &x);
    let mut g = Graph::new();
    let p = m.params().bind(&mut g, false);
    let ctx = context(&mut g, &x);
    let z = g.leaf(x.z_future.clone(), true);
    let z = g.scale(z, 2.0);
    let z = g.scale(z, 0.5);
    let e = m.energy(&mut g, &p, z, &ctx).unwrap();
    assert_eq!(g.value(e).data(), &direct[..]);
}

fn quadratic_stub(eta: f64) -> ScalarStub {
    // E = ½ z², p = identity
    ScalarStub::new(StubCoefficients { a: 1.0, w: 1.0, u: 0.0, v: 0.0, m: 1.0, c: 0.0, eta }).unwrap()
}

fn stub_context(g: &mut Graph, b: usize) -> Context {
    Context {
        z_past: g.constant(Tensor::zeros(&[b, 1, 1])),
        goal: g.constant(Tensor::zeros(&[b, 1])),
        lambdas: vec![0.5; b],
    }
}

#[test]
fn stub_step_scales_by_one_minus_eta() {
    let stub = quadratic_stub(0.1);
    let mut g = Graph::new();
    let p = stub.params().bind(&mut g, false);
    let ctx = stub_context(&mut g, 3);
    let z0 = Tensor::new(vec![3, 1, 1], vec![1.0, -2.0, 0.5]).unwrap();
    let z = g.constant(z0.clone());
    let out = refine_step(&mut g, &stub, &p, z, &ctx, true, GradMode::SecondOrder).unwrap();
    assert_eq!(g.shape(out.z), &[3, 1, 1]);
    for (a, b) in g.value(out.z).data().iter().zip(z0.data()) {
        assert_eq!(*a, 0.9 * b);
    }
}

#[test]
fn small_raw_step_descends() {
    let stub = ScalarStub::new(StubCoefficients { a: 1.0, w: 1.3, u: 0.4, v: -0.7, m: 1.0, c: 0.0, eta: 1e-3 }).unwrap();
    let mut g = Graph::new();
    let p = stub.params().bind(&mut g, false);
    let ctx = Context {
        z_past: g.constant(random(&[8, 2, 1], 3)),
        goal: g.constant(random(&[8, 1], 4)),
        lambdas: vec![0.5; 8],
    };
    let z = g.constant(random(&[8, 1, 1], 5));
    let out = refine_step(&mut g, &stub, &p, z, &ctx, false, GradMode::FirstOrderOnly).unwrap();
    let after = stub.energy(&mut g, &p, out.z, &ctx).unwrap();
    for (b, a) in g.value(out.energy).data().iter().zip(g.value(after).data()) {
        assert!(a < b, "{a} >= {b}");
    }
}

#[test]
fn zero_eta_is_identity_or_projection() {
    let mut m = tiny();
    let eta = m.eta();
    m.params_mut().set(eta, Tensor::scalar(0.0)).unwrap();
    let x = inputs(&m, 2, 70);
    let mut g = Graph::new();
    let p = m.params().bind(&mut g, false);
    let ctx = context(&mut g, &x);
    let z = g.constant(x.z_future.clone());
    let raw = refine_step(&mut g, &m, &p, z, &ctx, false, GradMode::FirstOrderOnly).unwrap();
    assert_eq!(g.value(raw.z), &x.z_future);
    let projected = refine_step(&mut g, &m, &p, z, &ctx, true, GradMode::FirstOrderOnly).unwrap();
    let direct = m.project(&mut g, &p, z).unwrap();
    assert_eq!(g.value(projected.z), g.value(direct));
}

#[test]
fn refine_rejects_non_finite_gradient() {
    let stub = quadratic_stub(0.1);
    let mut g = Graph::new();
    let p = stub.params().bind(&mut g, false);
    let ctx = stub_context(&mut g, 1);
    let z = g.constant(Tensor::new(vec![1, 1, 1], vec![f64::INFINITY]).unwrap());
    let err = refine_step(&mut g, &stub, &p, z, &ctx, true, GradMode::SecondOrder).unwrap_err();
    assert!(err.to_string().contains("grad norm"), "{err}");
}

#[test]
fn projector_is_position_wise() {
    let m = tiny();
    let z = random(&[1, 8, 4], 80);
    let mut g = Graph::new();
    let p = m.params().bind(&mut g, false);
    let zv = g.constant(z.clone());
    let out = m.project(&mut g, &p, zv).unwrap();
    let out = g.value(out).clone();
    // reverse the time axis before and after projecting
    let rev = |t: &Tensor| {
        let mut d = Vec::new();
        for i in (0..8).rev() {
            d.extend_from_slice(&t.data()[i * 4..i * 4 + 4]);
        }
        Tensor::new(vec![1, 8, 4], d).unwrap()
    };
    let zr = g.constant(rev(&z));
    let outr = m.project(&mut g, &p, zr).unwrap();
    assert_eq!(&rev(g.value(outr)), &out);
}

#[test]
fn zero_projector_output_layer_gives_bias() {
    let mut m = tiny();
    let (w, b) = m.projector_output();
    let bias = Tensor::vector(vec![0.1, -0.2, 0.3, 0.4]);
    let shape = m.params().get(w).shape().to_vec();
    m.params_mut().set(w, Tensor::zeros(&shape)).unwrap();
    m.params_mut().set(b, bias.clone()).unwrap();
    let mut g = Graph::new();
    let p = m.params().bind(&mut g, false);
    let z = g.constant(random(&[2, 8, 4], 90));
    let out = m.project(&mut g, &p, z).unwrap();
    for row in g.value(out).data().chunks(4) {
        assert_eq!(row, bias.data());
    }
}

#[test]
fn projector_gradients_match_finite_differences() {
    let m = tiny();
    let z = random(&[1, 8, 4], 100);
    let f = |g: &mut Graph, x: Var| {
        let p = m.params().bind(g, false);
        let y = m.project(g, &p, x).expect("project");
        let y = g.square(y);
        Ok(g.sum_all(y))
    };
    let r = finite_difference_check(f, &z, 1e-5).unwrap();
    assert!(r.max_rel_error() <= 1e-6, "{}", r.max_rel_error());
    let (w, _) = m.projector_output();
    let r = param_grad_check(
        m.params(),
        w,
        |g, p| {
            let x = g.constant(z.clone());
            let y = m.project(g, p, x)?;
            let y = g.square(y);
            Ok(g.sum_all(y))
        },
        1e-5,
    )
    .unwrap();
    assert!(r.max_rel_error() <= 1e-6, "{}", r.max_rel_error());
}

#[test]
fn decoded_actions_have_action_dim() {
    let c = PadConfig::tiny(3, 2);
    let inv = InverseDynamics::new(&c, 1).unwrap();
    let mut g = Graph::new();
    let p = inv.params().bind(&mut g, false);
    let a = g.constant(random(&[5, 4], 1));
    let b = g.constant(random(&[5, 4], 2));
    let out = inv.decode(&mut g, &p, a, b).unwrap();
    assert_eq!(g.shape(out), &[5, 2]);
    let again = inv.decode(&mut g, &p, a, b).unwrap();
    assert_eq!(g.value(out), g.value(again));
}

#[test]
fn decoding_gives_no_gradient_to_planner() {
    let m = tiny();
    let inv = InverseDynamics::new(&m.config, 1).unwrap();
    let mut g = Graph::new();
    let pm = m.params().bind(&mut g, true);
    let pi = inv.params().bind(&mut g, true);
    let s = g.constant(random(&[2, 2, 3], 9));
    let z = m.encode(&mut g, &pm, s).unwrap();
    let z0 = g.slice(z, 1, 0, 1).unwrap();
    let z1 = g.slice(z, 1, 1, 1).unwrap();
    let z1 = m.project(&mut g, &pm, z1).unwrap();
    let a = inv.decode(&mut g, &pi, z0, z1).unwrap();
    let a = g.square(a);
    let loss = g.sum_all(a);
    let grads = g.grad(loss, pm.vars(), false).unwrap();
    for v in pm.vars() {
        let gv = grads.get(*v).unwrap();
        assert!(g.value(gv).data().iter().all(|x| *x == 0.0));
    }
    let grads = g.grad(loss, pi.vars(), false).unwrap();
    assert!(pi.vars().iter().any(|v| g.value(grads.get(*v).unwrap()).norm() > 0.0));
}

#[test]
fn stub_parameters_are_named() {
    let stub = quadratic_stub(0.5);
    let store: &ParamStore = stub.params();
    assert_eq!(store.name(stub.eta()), "eta");
    assert_eq!(store.get(stub.eta()).item(), 0.5);
}
