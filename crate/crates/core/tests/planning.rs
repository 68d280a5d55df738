// oracles index several parallel arrays by position
#![allow(clippy::needless_range_loop)]

use pad_autodiff::{Graph, Tensor};
use pad_core::env::{Controller, PointMass2D, Regime, SUCCESS_EPS};
use pad_core::models::{InverseDynamics, PadConfig, PadModel, ScalarStub, StubCoefficients};
use pad_core::planning::*;
use pad_core::rng::{purpose, stream};
use pad_core::training::{train_invdyn, InvDynConfig};
use pad_core::PadError;
use proptest::prelude::*;
use rand::Rng;

fn settings(b: usize, k: usize, t: usize) -> PlanSettings {
    PlanSettings {
        candidates: b,
        top_k: k,
        refine_steps: t,
        use_projector: true,
    }
}

fn stub(w: f64, eta: f64) -> ScalarStub {
    ScalarStub::new(StubCoefficients {
        a: 1.0,
        w,
        u: 0.0,
        v: 0.0,
        m: 1.0,
        c: 0.0,
        eta,
    })
    .unwrap()
}

fn tiny() -> (PadConfig, PadModel, InverseDynamics) {
    let cfg = PadConfig::tiny(2, 2);
    let model = PadModel::new(cfg.clone(), 3).unwrap();
    let inv = InverseDynamics::new(&cfg, 4).unwrap();
    (cfg, model, inv)
}

#[test]
fn top_k_examples() {
    assert_eq!(select_top_k(&[5.0, 1.0, 3.0, 2.0, 4.0], 2).unwrap(), vec![1, 3]);
    assert_eq!(select_top_k(&[7.0; 4], 2).unwrap(), vec![0, 1]);
    assert_eq!(select_top_k(&[0.1, 0.2, 0.3, 0.4], 3).unwrap(), vec![0, 1, 2]);
    assert_eq!(select_top_k(&[f64::NAN, 2.0, f64::INFINITY, 1.0], 2).unwrap(), vec![3, 1]);
    assert!(matches!(select_top_k(&[1.0, f64::NAN], 2), Err(PadError::Planning(_))));
    assert!(select_top_k(&[1.0], 0).is_err());
}

#[test]
fn top_k_matches_full_sort_oracle() {
    for seed in 0..1000u64 {
        let mut rng = stream(seed, &[purpose::TEST]);
        // coarse values force plenty of ties
        let e: Vec<f64> = (0..100).map(|_| f64::from(rng.random_range(0..40u8))).collect();
        let k = rng.random_range(1..=100);
        let mut order: Vec<usize> = (0..100).collect();
        order.sort_by(|&a, &b| e[a].partial_cmp(&e[b]).unwrap().then(a.cmp(&b)));
        assert_eq!(select_top_k(&e, k).unwrap(), order[..k].to_vec(), "seed {seed}");
    }
}

#[test]
fn lambda_biased_choice_matches_softmax() {
    let lambdas = [0.2, 0.8];
    let expected = (-0.2f64).exp() / ((-0.2f64).exp() + (-0.8f64).exp());
    assert!((expected - 0.646).abs() < 5e-4);
    let draws = 100_000;
    let mut hits = 0;
    for i in 0..draws {
        let mut rng = stream(17, &[purpose::SELECT, i]);
        hits += usize::from(sample_lambda_biased(&lambdas, &mut rng) == 0);
    }
    let freq = hits as f64 / draws as f64;
    assert!((freq - expected).abs() < 0.01, "{freq} vs {expected}");
}

#[test]
fn equal_lambdas_choose_uniformly() {
    let k = 5;
    let draws = 100_000u64;
    let mut counts = vec![0u64; k];
    for i in 0..draws {
        let mut rng = stream(5, &[purpose::SELECT, i]);
        counts[sample_lambda_biased(&[0.4; 5], &mut rng)] += 1;
    }
    let expected = draws as f64 / k as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99th percentile of chi-squared with 4 degrees of freedom
    assert!(chi2 < 13.277, "chi2 {chi2} for {counts:?}");
}

proptest! {
    #[test]
    fn probabilities_are_a_distribution(l in proptest::collection::vec(0.0f64..1.0, 1..20)) {
        let p = lambda_probabilities(&l);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..l.len() {
            for j in 0..l.len() {
                if l[i] < l[j] {
                    prop_assert!(p[i] > p[j]);
                }
            }
        }
    }
}

#[test]
fn past_is_replicate_padded_and_truncated() {
    let states = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
    let t = pad_past(&states, 4).unwrap();
    assert_eq!(t.shape(), &[4, 2]);
    assert_eq!(t.data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 3.0, 4.0]);
    let long: Vec<Vec<f64>> = (0..6).map(|i| vec![f64::from(i)]).collect();
    assert_eq!(pad_past(&long, 3).unwrap().data(), &[3.0, 4.0, 5.0]);
    assert!(pad_past(&[], 3).is_err());
}

#[test]
fn single_candidate_is_always_chosen() {
    let (_, model, _) = tiny();
    let req = PlanRequest {
        past: &[vec![0.1, 0.2]],
        goal: &[0.5, -0.5],
        settings: settings(1, 1, 2),
        seed: 9,
        call: 0,
    };
    let plan = plan(&model, &req).unwrap();
    assert_eq!((plan.chosen, plan.top.clone()), (0, vec![0]));
    assert_eq!(plan.candidates.len(), 1);
    assert!(plan.chosen().energy.is_finite());
}

#[test]
fn stub_plan_matches_closed_form() {
    // E = z²/2, η = 0.5, identity projector: each step halves z
    let model = stub(1.0, 0.5);
    let req = PlanRequest {
        past: &[vec![0.3]],
        goal: &[0.0],
        settings: settings(16, 4, 2),
        seed: 2,
        call: 5,
    };
    let plan = plan(&model, &req).unwrap();
    let mut energies = Vec::new();
    for b in 0..16 {
        let (lambda, z0) = candidate_init(2, 5, b, 1, 1);
        let z = 0.25 * z0.data()[0];
        let c = &plan.candidates[b];
        assert_eq!(c.lambda, lambda);
        assert!((c.z.data()[0] - z).abs() < 1e-15);
        assert!((c.energy - 0.5 * z * z).abs() < 1e-15);
        energies.push(0.5 * z * z);
    }
    let mut order: Vec<usize> = (0..16).collect();
    order.sort_by(|&a, &b| energies[a].partial_cmp(&energies[b]).unwrap());
    assert_eq!(plan.top, order[..4].to_vec());
    assert!(plan.top.contains(&plan.chosen));
}

#[test]
fn chosen_plan_is_among_the_k_lowest() {
    let (_, model, _) = tiny();
    for call in 0..10 {
        let req = PlanRequest {
            past: &[vec![0.0, 0.0], vec![0.05, 0.0]],
            goal: &[0.7, 0.7],
            settings: settings(12, 3, 2),
            seed: 1,
            call,
        };
        let plan = plan(&model, &req).unwrap();
        let mut e: Vec<f64> = plan.candidates.iter().map(|c| c.energy).collect();
        let chosen = plan.chosen().energy;
        e.sort_by(f64::total_cmp);
        assert!(chosen <= e[2], "call {call}");
        assert!(plan.candidates.iter().all(|c| (0.0..1.0).contains(&c.lambda)));
    }
}

#[test]
fn candidates_are_independent_of_the_batch() {
    let (cfg, model, _) = tiny();
    let past = [vec![0.2, -0.1]];
    let goal = [0.4, 0.1];
    let z_past = encode_states(&model, &pad_past(&past, cfg.past_len).unwrap()).unwrap();
    let inits: Vec<(f64, Tensor)> = (0..2).map(|b| candidate_init(8, 3, b, cfg.horizon, cfg.latent_dim)).collect();
    let mut both = inits[0].1.data().to_vec();
    both.extend_from_slice(inits[1].1.data());
    let z = Tensor::new(vec![2, cfg.horizon, cfg.latent_dim], both).unwrap();
    let lambdas = [inits[0].0, inits[1].0];
    let (zb, eb) = refine_candidates(&model, &z_past, &goal, &lambdas, z, 2, true).unwrap();
    let w = cfg.horizon * cfg.latent_dim;
    for (b, (lambda, z0)) in inits.iter().enumerate() {
        let z0 = z0.reshaped(&[1, cfg.horizon, cfg.latent_dim]).unwrap();
        let (zs, es) = refine_candidates(&model, &z_past, &goal, &[*lambda], z0, 2, true).unwrap();
        assert_eq!(zs.data(), &zb.data()[b * w..(b + 1) * w], "candidate {b}");
        assert_eq!(es[0].to_bits(), eb[b].to_bits());
    }
    // and planning with B = 2 reports the same latents
    let req = PlanRequest {
        past: &past,
        goal: &goal,
        settings: settings(2, 1, 2),
        seed: 8,
        call: 3,
    };
    let p = plan(&model, &req).unwrap();
    assert_eq!(p.candidates[1].z.data(), &zb.data()[w..]);
}

#[test]
fn lambdas_are_fresh_at_every_call() {
    let a = candidate_init(4, 0, 0, 2, 2);
    let b = candidate_init(4, 1, 0, 2, 2);
    assert_ne!(a.0, b.0);
    assert_ne!(a.1, b.1);
    assert_eq!(a, candidate_init(4, 0, 0, 2, 2));
}

#[test]
fn non_finite_candidates_are_excluded() {
    // E = w z²/2 overflows for |z| > ~1.34 at w = 1e308
    let model = stub(1e308, 0.0);
    let req = PlanRequest {
        past: &[vec![0.0]],
        goal: &[0.0],
        settings: settings(64, 60, 1),
        seed: 3,
        call: 0,
    };
    let p = plan(&model, &req).unwrap();
    let finite = p.candidates.iter().filter(|c| c.energy.is_finite()).count();
    assert!(finite > 0 && finite < 60, "{finite}");
    assert_eq!(p.top.len(), finite);
    assert!(p.chosen().energy.is_finite());

    let all_bad = stub(f64::INFINITY, 0.0);
    assert!(matches!(plan(&all_bad, &req), Err(PadError::Planning(_))));
}

#[test]
fn invalid_settings_are_rejected() {
    let (_, model, _) = tiny();
    for s in [settings(2, 3, 1), settings(2, 0, 1), settings(2, 1, 0)] {
        let req = PlanRequest {
            past: &[vec![0.0, 0.0]],
            goal: &[0.0, 0.0],
            settings: s,
            seed: 0,
            call: 0,
        };
        assert!(matches!(plan(&model, &req), Err(PadError::Config(_))));
    }
}

#[test]
fn decoding_pairs_consecutive_latents() {
    let (cfg, model, inv) = tiny();
    let (h, d) = (cfg.horizon, cfg.latent_dim);
    let z = candidate_init(0, 0, 0, h, d).1;
    let state = [0.3, -0.4];
    let one = decode_plan_actions(&model, &inv, &state, &z, 1).unwrap();
    let all = decode_plan_actions(&model, &inv, &state, &z, h).unwrap();
    assert_eq!((one.len(), all.len()), (1, h));
    assert_eq!(one[0], all[0]);
    assert!(all.iter().all(|a| a.len() == 2));
    // oracle: decode each pair on its own
    let s = Tensor::new(vec![1, 2], state.to_vec()).unwrap();
    let z_now = encode_states(&model, &s).unwrap();
    for i in 0..h {
        let from = if i == 0 { z_now.data().to_vec() } else { z.data()[(i - 1) * d..i * d].to_vec() };
        let to = z.data()[i * d..(i + 1) * d].to_vec();
        let mut g = Graph::new();
        let p = inv.params().bind(&mut g, false);
        let a = g.constant(Tensor::new(vec![1, d], from).unwrap());
        let b = g.constant(Tensor::new(vec![1, d], to).unwrap());
        let out = inv.decode(&mut g, &p, a, b).unwrap();
        for (x, y) in g.value(out).data().iter().zip(&all[i]) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    assert!(decode_plan_actions(&model, &inv, &state, &z, 0).is_err());
    assert!(decode_plan_actions(&model, &inv, &state, &z, h + 1).is_err());
}

#[test]
fn trained_decoder_reproduces_recorded_actions() {
    let env = PointMass2D::default();
    let (data, _, _) = pad_core::env::generate_dataset(&env, Regime::Noisy, 60, 12).unwrap();
    let mut cfg = PadConfig::tiny(2, 2);
    cfg.latent_dim = 16;
    cfg.invdyn_hidden = 64;
    let model = PadModel::new(cfg.clone(), 1).unwrap();
    let mut inv = InverseDynamics::new(&cfg, 2).unwrap();
    let icfg = InvDynConfig {
        steps: 600,
        batch_size: 64,
        ..InvDynConfig::default()
    };
    train_invdyn(&mut inv, &model, &data, &icfg).unwrap();
    let (held, _, _) = pad_core::env::generate_dataset(&env, Regime::Noisy, 5, 99).unwrap();
    let (mut se, mut n) = (0.0, 0);
    for t in held.trajectories() {
        // ground-truth latents: the encoded real future
        let future = Tensor::new(vec![cfg.horizon, 2], t.states().data()[2..2 + cfg.horizon * 2].to_vec()).unwrap();
        let z = encode_states(&model, &future).unwrap();
        let actions = decode_plan_actions(&model, &inv, t.state(0), &z, cfg.horizon).unwrap();
        for (i, a) in actions.iter().enumerate() {
            for (x, y) in a.iter().zip(t.action(i).unwrap()) {
                se += (x - y).powi(2);
                n += 1;
            }
        }
    }
    let mse = se / n as f64;
    assert!(mse < 1e-2, "{mse}");
}

fn controller<'a>(model: &'a PadModel, inv: &'a InverseDynamics, n: usize) -> PadController<'a, PadModel> {
    PadController {
        model,
        inverse: inv,
        settings: settings(4, 2, 1),
        schedule: ReplanController {
            interval: n,
            max_steps: 200,
        },
        record_diagnostics: true,
    }
}

#[test]
fn goal_at_start_needs_no_planning() {
    let (_, model, inv) = tiny();
    let env = PointMass2D::default();
    let r = controller(&model, &inv, 1).run_episode(&env, &[0.1, 0.1], &[0.1, 0.1], SUCCESS_EPS, 200, 0).unwrap();
    assert!(r.success);
    assert_eq!((r.steps, r.planner_calls), (0, 0));
}

#[test]
fn planner_invocations_follow_the_replan_interval() {
    let (cfg, model, inv) = tiny();
    let env = PointMass2D::default();
    for n in [1, 2, 3, 4, cfg.horizon] {
        let mut c = controller(&model, &inv, n);
        let r = c.run_episode(&env, &[-0.5, -0.5], &[0.9, 0.9], SUCCESS_EPS, 21, 4).unwrap();
        assert!(r.failure.is_none(), "{:?}", r.failure);
        assert_eq!(r.steps, 21);
        assert_eq!(r.planner_calls, r.steps.div_ceil(n), "N = {n}");
        assert_eq!(r.actions.len(), r.steps);
        // all B candidates are recorded at every call, one chosen each time
        assert_eq!(r.diagnostics.len(), 4 * r.planner_calls);
        assert_eq!(r.diagnostics.iter().filter(|d| d.chosen).count(), r.planner_calls);
    }
    let mut bad = controller(&model, &inv, cfg.horizon + 1);
    assert!(bad.run_episode(&env, &[0.0, 0.0], &[0.9, 0.9], SUCCESS_EPS, 10, 0).is_err());
}

#[test]
fn seeded_episodes_replay_exactly() {
    let (_, model, inv) = tiny();
    let env = PointMass2D::default();
    let run = |seed| controller(&model, &inv, 2).run_episode(&env, &[0.0, 0.3], &[-0.6, 0.2], SUCCESS_EPS, 15, seed).unwrap();
    let (a, b) = (run(6), run(6));
    assert_eq!(a, b);
    assert_ne!(a.actions, run(7).actions);
    assert!(a.actions.iter().all(|x| x.iter().all(|v| v.abs() <= 0.05)));
}

#[test]
fn diagnostics_files_are_consistent() {
    let (_, model, inv) = tiny();
    let env = PointMass2D::default();
    let r = controller(&model, &inv, 1).run_episode(&env, &[0.0, 0.3], &[-0.6, 0.2], SUCCESS_EPS, 3, 1).unwrap();
    let csv = diagnostics_csv(&r.diagnostics);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(DIAGNOSTICS_HEADER));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 4 * 3);
    for replan in 0..3 {
        let group: Vec<&Vec<String>> = rows.iter().filter(|r| r[0] == replan.to_string()).collect();
        assert_eq!(group.len(), 4);
        let mut e: Vec<f64> = group.iter().map(|r| r[3].parse().unwrap()).collect();
        let chosen: Vec<f64> = group.iter().filter(|r| r[4] == "1").map(|r| r[3].parse().unwrap()).collect();
        assert_eq!(chosen.len(), 1);
        e.sort_by(f64::total_cmp);
        assert!(chosen[0] <= e[1]);
    }
    let svg = diagnostics_svg(&r.diagnostics);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<circle").count(), 12);
}

#[test]
fn mismatched_inverse_dynamics_is_rejected() {
    let (_, model, _) = tiny();
    let inv = InverseDynamics::new(&PadConfig::tiny(2, 3), 0).unwrap();
    let env = PointMass2D::default();
    assert!(controller(&model, &inv, 1).run_episode(&env, &[0.0, 0.0], &[0.5, 0.5], SUCCESS_EPS, 5, 0).is_err());
}
