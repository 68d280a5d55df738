use pad_core::env::*;
use pad_core::rng::{purpose, stream};
use proptest::prelude::*;

fn envs() -> Vec<Box<dyn Env>> {
    vec![EnvKind::PointMass.build(), EnvKind::PickPlace.build()]
}

/// Pooled lag-1 autocorrelation of zero-mean noise channel `dim`.
fn lag1(episodes: &[GeneratedEpisode], dim: usize) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for e in episodes {
        let x: Vec<f64> = e.noise.iter().map(|n| n[dim]).collect();
        num += x.windows(2).map(|w| w[0] * w[1]).sum::<f64>();
        den += x[..x.len() - 1].iter().map(|v| v * v).sum::<f64>();
    }
    num / den
}

#[test]
fn zero_action_leaves_state_unchanged() {
    let pm = PointMass2D::default();
    assert_eq!(pm.step(&[0.3, -0.2], &[0.0, 0.0]).unwrap(), vec![0.3, -0.2]);
    let pp = PickPlace1D::default();
    // not holding, no grip: nothing moves
    assert_eq!(pp.step(&[0.3, -0.2, 0.0], &[0.0, 0.0]).unwrap(), vec![0.3, -0.2, 0.0]);
    // holding with a closed grip: still nothing moves
    assert_eq!(pp.step(&[0.3, 0.31, 1.0], &[0.0, 1.0]).unwrap(), vec![0.3, 0.31, 1.0]);
}

#[test]
fn pointmass_clamps_at_the_boundary() {
    let pm = PointMass2D::default();
    assert_eq!(pm.step(&[1.0, -1.0], &[0.05, -0.05]).unwrap(), vec![1.0, -1.0]);
    assert_eq!(pm.step(&[0.98, 0.0], &[0.05, 0.0]).unwrap(), vec![1.0, 0.0]);
    // oversized actions are clamped to a_max
    assert_eq!(pm.step(&[0.0, 0.0], &[3.0, -3.0]).unwrap(), vec![0.05, -0.05]);
}

#[test]
fn pickplace_rule_table() {
    let pp = PickPlace1D::default();
    // (state, action) -> expected holding flag after the step
    let cases = [
        ([0.0, 0.01, 0.0], [0.0, 1.0], 1.0),
        ([0.0, -0.01, 0.0], [0.0, 0.5], 1.0),
        ([0.0, 0.03, 0.0], [0.0, 1.0], 0.0),
        ([0.0, 0.01, 0.0], [0.0, -1.0], 0.0),
        ([0.0, 0.01, 0.0], [0.0, 0.0], 0.0),
        ([0.0, 0.0, 1.0], [0.0, -0.5], 0.0),
        ([0.0, 0.0, 1.0], [0.0, 0.0], 1.0),
        ([0.0, 0.0, 1.0], [0.0, 1.0], 1.0),
    ];
    for (s, a, holding) in cases {
        assert_eq!(pp.step(&s, &a).unwrap()[2], holding, "{s:?} {a:?}");
    }
}

#[test]
fn held_block_tracks_the_gripper_and_free_block_stays() {
    let pp = PickPlace1D::default();
    let s = pp.step(&[0.0, 0.01, 1.0], &[0.05, 1.0]).unwrap();
    assert!((s[0] - 0.05).abs() < 1e-15 && (s[1] - 0.06).abs() < 1e-15);
    let s = pp.step(&[0.0, 0.5, 0.0], &[0.05, -1.0]).unwrap();
    assert_eq!(s[1], 0.5);
}

#[test]
fn success_rules() {
    let pm = PointMass2D::default();
    assert!(pm.success(&[0.2, 0.3], &[0.2, 0.3], SUCCESS_EPS));
    // exactly eps away (dyadic values, no rounding) is not a success
    assert!(!pm.success(&[0.0, 0.0], &[0.25, 0.0], 0.25));
    assert!(pm.success(&[0.0, 0.0], &[0.0, 0.0625], 0.0625 + 1e-12));
    assert!(!pm.success(&[0.0, 0.0], &[0.0, 0.0625], 0.0625));
    let pp = PickPlace1D::default();
    // block at the goal, gripper far away, gripper coordinate of the goal ignored
    assert!(pp.success(&[-0.9, 0.4, 0.0], &[0.4, 0.4, 0.0], SUCCESS_EPS));
    assert!(pp.success(&[0.9, 0.4, 1.0], &[-0.3, 0.4, 0.0], SUCCESS_EPS));
    assert!(!pp.success(&[0.4, 0.65, 0.0], &[0.4, 0.4, 0.0], 0.25));
}

proptest! {
    #[test]
    fn transitions_are_pure_and_in_bounds(
        x in -1.0f64..1.0, y in -1.0f64..1.0, h in 0u8..2,
        a in -0.2f64..0.2, b in -1.5f64..1.5,
    ) {
        let pm = PointMass2D::default();
        let s = pm.step(&[x, y], &[a, b]).unwrap();
        prop_assert_eq!(&s, &pm.step(&[x, y], &[a, b]).unwrap());
        prop_assert!(s.iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert!((s[0] - x).abs() <= 0.05 + 1e-15);
        let pp = PickPlace1D::default();
        let st = [x, y, f64::from(h)];
        let s = pp.step(&st, &[a, b]).unwrap();
        prop_assert_eq!(&s, &pp.step(&st, &[a, b]).unwrap());
        prop_assert!(s[..2].iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert!(s[2] == 0.0 || s[2] == 1.0);
        // a block that ends the step free did not move
        if s[2] == 0.0 {
            prop_assert_eq!(s[1], y);
        }
    }
}

#[test]
fn wrong_dimensions_are_rejected() {
    for env in envs() {
        let s = vec![0.0; env.state_dim() + 1];
        let a = vec![0.0; env.action_dim()];
        assert!(env.step(&s, &a).is_err());
        let s = vec![0.0; env.state_dim()];
        assert!(env.step(&s, &[0.0; 5]).is_err());
    }
}

#[test]
fn scripted_expert_solves_every_family_within_budget() {
    for env in envs() {
        let report = evaluate(&mut ScriptedController, env.as_ref(), &[0, 1, 2, 3, 4], 20, &[0, 1]).unwrap();
        assert_eq!(report.rows.len(), 10);
        for row in &report.rows {
            assert_eq!(row.success_rate, 1.0, "{} {}", env.name(), row.task);
            assert!(row.mean_steps >= 10.0 && row.mean_steps <= 120.0, "{} {:?}", env.name(), row);
        }
    }
}

#[test]
fn random_policy_is_near_chance() {
    for env in envs() {
        let report = evaluate(&mut RandomController, env.as_ref(), &[0, 1, 2, 3, 4], 20, &[3]).unwrap();
        assert!(report.mean_success_rate() < 0.10, "{}: {}", env.name(), report.mean_success_rate());
    }
}

#[test]
fn expert_regime_mostly_succeeds() {
    for env in envs() {
        let (_, _, frac) = generate_dataset(env.as_ref(), Regime::Expert, 500, 11).unwrap();
        assert!(frac > 0.95, "{}: {frac}", env.name());
    }
}

#[test]
fn noisy_regime_covers_more_states() {
    for env in envs() {
        let (expert, _, _) = generate_dataset(env.as_ref(), Regime::Expert, 500, 5).unwrap();
        let (noisy, _, noisy_frac) = generate_dataset(env.as_ref(), Regime::Noisy, 500, 5).unwrap();
        let (ce, cn) = (coverage(env.as_ref(), &expert), coverage(env.as_ref(), &noisy));
        assert!(cn > ce, "{}: noisy {cn} vs expert {ce}", env.name());
        assert!(noisy_frac < 1.0, "{}: noisy regime never fails", env.name());
    }
}

#[test]
fn action_noise_autocorrelation() {
    for env in envs() {
        let expert = generate_episodes(env.as_ref(), Regime::Expert, 100, 21).unwrap();
        let noisy = generate_episodes(env.as_ref(), Regime::Noisy, 100, 21).unwrap();
        let (re, rn) = (lag1(&expert, 0), lag1(&noisy, 0));
        assert!((re - 0.9).abs() < 0.05, "{}: expert lag-1 {re}", env.name());
        assert!(rn.abs() < 0.05, "{}: noisy lag-1 {rn}", env.name());
    }
}

#[test]
fn expert_noise_has_the_stationary_scale() {
    let env = PointMass2D::default();
    let eps = generate_episodes(&env, Regime::Expert, 200, 2).unwrap();
    let all: Vec<f64> = eps.iter().flat_map(|e| e.noise.iter().map(|n| n[1])).collect();
    let var = all.iter().map(|v| v * v).sum::<f64>() / all.len() as f64;
    let expected = 0.005f64.powi(2) / (1.0 - 0.81);
    assert!((var / expected - 1.0).abs() < 0.15, "{var} vs {expected}");
}

#[test]
fn generated_trajectories_are_well_formed() {
    for env in envs() {
        for regime in [Regime::Expert, Regime::Noisy] {
            let (ds, meta, _) = generate_dataset(env.as_ref(), regime, 10, 4).unwrap();
            assert_eq!(meta.environment, env.name());
            assert_eq!(meta.generator, regime.name());
            assert_eq!(ds.trajectories().len(), 10);
            for t in ds.trajectories() {
                assert_eq!(t.len(), EPISODE_STEPS + 1);
                let actions = t.actions().unwrap();
                assert_eq!(actions.shape(), &[EPISODE_STEPS, env.action_dim()]);
                // recorded actions replay the recorded states exactly
                for i in 0..EPISODE_STEPS {
                    let a = &actions.data()[i * env.action_dim()..(i + 1) * env.action_dim()];
                    assert_eq!(env.step(t.state(i), a).unwrap(), t.state(i + 1));
                }
            }
        }
    }
}

#[test]
fn same_seed_gives_byte_identical_dataset_files() {
    let dir = tempfile::tempdir().unwrap();
    let env = PickPlace1D::default();
    let mut bytes = Vec::new();
    for name in ["a.padds", "b.padds"] {
        let (ds, meta, _) = generate_dataset(&env, Regime::Noisy, 20, 9).unwrap();
        let path = dir.path().join(name);
        pad_core::data::save_dataset(&path, &ds, &meta).unwrap();
        bytes.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    let (other, _, _) = generate_dataset(&env, Regime::Noisy, 20, 10).unwrap();
    assert_ne!(other.to_bytes(), bytes[0]);
}

#[test]
fn task_sampling_depends_only_on_seed_family_and_episode() {
    for env in envs() {
        for family in 0..TASK_FAMILIES {
            let a = env.sample_task(family, &mut stream(1, &[purpose::EPISODE, family as u64, 3]));
            let b = env.sample_task(family, &mut stream(1, &[purpose::EPISODE, family as u64, 3]));
            assert_eq!(a, b);
            assert!(!env.success(&a.0, &a.1, SUCCESS_EPS), "{} family {family} starts solved", env.name());
        }
    }
}

#[test]
fn report_files_are_well_formed() {
    let env = PointMass2D::default();
    let report = evaluate(&mut ScriptedController, &env, &[0, 2], 5, &[0, 1, 2]).unwrap();
    assert_eq!(report.rows.len(), 2 * 3);
    assert_eq!(report.episodes.len(), 2 * 3 * 5);
    let csv = report.csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(REPORT_HEADER));
    assert_eq!(lines.count(), 6);
    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path(), "eval").unwrap();
    let jsonl = std::fs::read_to_string(dir.path().join("eval.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 30);
    for line in jsonl.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
    let svg = std::fs::read_to_string(dir.path().join("eval_lengths.svg")).unwrap();
    assert_well_formed_xml(&svg);
}

#[test]
fn histogram_escapes_titles() {
    let svg = histogram_svg(&[1, 5, 5, 200], 200, "a < b & \"c\"");
    assert_well_formed_xml(&svg);
    assert!(svg.contains("&lt;"));
}

/// A minimal tag-balance check: every opened element is closed in order.
fn assert_well_formed_xml(s: &str) {
    let mut stack: Vec<String> = Vec::new();
    let mut rest = s;
    while let Some(i) = rest.find('<') {
        let text = &rest[..i];
        assert!(!text.contains('>'), "stray '>' in {text:?}");
        let end = rest[i..].find('>').expect("unterminated tag") + i;
        let tag = &rest[i + 1..end];
        if let Some(name) = tag.strip_prefix('/') {
            assert_eq!(stack.pop().as_deref(), Some(name.trim()));
        } else if !tag.starts_with('?') && !tag.starts_with('!') && !tag.ends_with('/') {
            stack.push(tag.split_whitespace().next().unwrap().to_string());
        }
        rest = &rest[end + 1..];
    }
    assert!(stack.is_empty(), "unclosed {stack:?}");
    assert!(s.contains("<svg "));
}
