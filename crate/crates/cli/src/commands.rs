use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context as _, Result};
use pad_core::data::{load_meta, meta_path, save_dataset, Dataset};
use pad_core::env::{coverage, evaluate, generate_dataset, Controller, Report, REPORT_HEADER, SUCCESS_EPS};
use pad_core::models::{InverseDynamics, PadModel};
use pad_core::planning::{diagnostics_csv, diagnostics_svg, PadController, PlanSettings, ReplanController};
use pad_core::rng::{purpose, stream};
use pad_core::training::{
    invdyn_checkpoint, restore_invdyn, restore_planner, train_invdyn, train_loop, Checkpoint, TrainConfig,
};
use pad_core::PadError;
use serde_json::json;
use toml::Value;

use crate::config::{load_table, set_path, Resolved, RunConfig};
use crate::{Cli, Command, Common, UsageError};

/// Extra column names appended to the evaluation CSV.
pub const EVAL_EXTRA_COLUMNS: &str = "N,K,planner_calls,steps_total";
pub const SUMMARY_HEADER: &str = "N,K,mean_success_rate,std_success_rate,mean_steps,planner_calls,steps_total";

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::InitConfig => {
            print!("{}", RunConfig::default().to_toml()?);
            Ok(())
        }
        Command::GenData {
            common,
            episodes,
            out,
            force,
        } => {
            let mut extra = Vec::new();
            if let Some(e) = episodes {
                extra.push(("data.episodes", Value::Integer(e as i64)));
            }
            if let Some(p) = &out {
                extra.push(("data.path", Value::String(p.display().to_string())));
            }
            gen_data(&resolve(&common, extra)?, force)
        }
        Command::Train {
            common,
            no_projector,
            steps,
        } => {
            let mut extra = projector(no_projector);
            if let Some(s) = steps {
                extra.push(("train.steps", Value::Integer(s as i64)));
            }
            train(&resolve(&common, extra)?)
        }
        Command::TrainInvdyn { common, no_projector } => train_inverse(&resolve(&common, projector(no_projector))?),
        Command::Eval {
            common,
            no_projector,
            replan_interval,
            top_k,
            out_name,
        } => eval(&resolve(&common, projector(no_projector))?, &replan_interval, &top_k, &out_name),
        Command::PlanDebug {
            common,
            no_projector,
            start,
            goal,
            family,
            max_steps,
        } => plan_debug(
            &resolve(&common, projector(no_projector))?,
            start,
            goal,
            family,
            max_steps,
        ),
    }
}

fn projector(off: bool) -> Vec<(&'static str, Value)> {
    if off {
        vec![("train.use_projector", Value::Boolean(false))]
    } else {
        Vec::new()
    }
}

/// Config file, then `--set` overrides, then dedicated flags.
pub fn resolve(common: &Common, extra: Vec<(&str, Value)>) -> Result<Resolved> {
    let mut sets = Vec::new();
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got {s:?}")))?;
        sets.push((k.trim().to_string(), v.trim().to_string()));
    }
    let mut table = load_table(common.config.as_deref(), &sets)?;
    if let Some(seed) = common.seed {
        let seed = i64::try_from(seed).map_err(|_| UsageError(format!("seed {seed} too large")))?;
        set_path(&mut table, "seed", Value::Integer(seed))?;
    }
    if let Some(env) = &common.env {
        set_path(&mut table, "env", Value::String(env.clone()))?;
    }
    if let Some(regime) = &common.regime {
        set_path(&mut table, "regime", Value::String(regime.clone()))?;
    }
    for (k, v) in extra {
        set_path(&mut table, k, v)?;
    }
    RunConfig::from_table(table)?.resolve()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn gen_data(r: &Resolved, force: bool) -> Result<()> {
    let path = r.data_path();
    if path.exists() && !force {
        return Err(UsageError(format!("{} exists; pass --force to overwrite", path.display())).into());
    }
    let env = r.env.build();
    let episodes = r.raw.data.episodes;
    let (dataset, meta, success) = generate_dataset(env.as_ref(), r.regime, episodes, r.seed())?;
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    save_dataset(&path, &dataset, &meta)?;
    println!(
        "wrote {} ({}): {episodes} episodes, {} transitions, success fraction {success:.3}, coverage {} of 400 cells",
        path.display(),
        meta_path(&path).display(),
        dataset.transitions(),
        coverage(env.as_ref(), &dataset)
    );
    Ok(())
}

fn load_dataset(r: &Resolved) -> Result<Dataset> {
    let path = r.data_path();
    if !path.exists() {
        return Err(PadError::Data(format!("dataset {} not found; run gen-data first", path.display())).into());
    }
    let dataset = Dataset::load(&path)?;
    let env = r.env.build();
    if dataset.state_dim() != env.state_dim() || dataset.action_dim() != env.action_dim() {
        return Err(PadError::Data(format!(
            "dataset {} has state/action dims {}/{}, {} needs {}/{}",
            path.display(),
            dataset.state_dim(),
            dataset.action_dim(),
            env.name(),
            env.state_dim(),
            env.action_dim()
        ))
        .into());
    }
    if let Ok(meta) = load_meta(&path) {
        if meta.environment != env.name() {
            return Err(PadError::Data(format!("dataset was generated for {}, not {}", meta.environment, env.name())).into());
        }
    }
    Ok(dataset)
}

fn record_config(r: &Resolved) -> Result<()> {
    let dir = r.run_dir();
    create_dir(&dir)?;
    write(&dir.join("config.toml"), r.raw.to_toml()?)?;
    let resolved = json!({
        "env": r.env.name(),
        "regime": r.regime.name(),
        "seed": r.seed(),
        "data": r.data_path(),
        "model": r.model,
        "train": r.train,
        "invdyn": r.invdyn,
        "plan": r.plan,
        "replan_interval": r.replan_interval,
    });
    write(&dir.join("resolved.json"), serde_json::to_string_pretty(&resolved)?)
}

fn train(r: &Resolved) -> Result<()> {
    let dataset = load_dataset(r)?;
    record_config(r)?;
    let mut model = PadModel::new(r.model.clone(), r.seed())?;
    let started = Instant::now();
    let out = train_loop(&mut model, &dataset, &r.train, Some(&r.train_dir()), None)?;
    let last = out.metrics.last();
    println!(
        "trained {} steps (now at {}) in {:.1}s; final loss {}; eta {}; checkpoint {}",
        out.metrics.len(),
        out.checkpoint.step,
        started.elapsed().as_secs_f64(),
        last.map_or("n/a".into(), |m| format!("{:.6}", m.loss)),
        last.map_or("n/a".into(), |m| format!("{:.4}", m.eta)),
        r.planner_path().display()
    );
    Ok(())
}

fn load_planner(r: &Resolved) -> Result<(PadModel, TrainConfig)> {
    let path = r.planner_path();
    if !path.exists() {
        return Err(PadError::Data(format!("planner checkpoint {} not found; run train first", path.display())).into());
    }
    let ckpt = Checkpoint::load(&path)?;
    let train: TrainConfig = serde_json::from_value(ckpt.train.clone())?;
    if ckpt.step < train.steps {
        return Err(PadError::Data(format!(
            "planner checkpoint is at step {} of {}; finish training first",
            ckpt.step, train.steps
        ))
        .into());
    }
    let (model, _) = restore_planner(&ckpt)?;
    Ok((model, train))
}

fn train_inverse(r: &Resolved) -> Result<()> {
    let (model, _) = load_planner(r)?;
    let dataset = load_dataset(r)?;
    let mut inv = InverseDynamics::new(&model.config, r.invdyn.seed)?;
    let started = Instant::now();
    let losses = train_invdyn(&mut inv, &model, &dataset, &r.invdyn)?;
    invdyn_checkpoint(&inv, &model.config, &r.invdyn)?.save(&r.invdyn_path())?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(csv, "{},{l}", i + 1);
    }
    write(&r.run_dir().join("invdyn_metrics.csv"), csv)?;
    println!(
        "trained inverse dynamics for {} steps in {:.1}s; final loss {:.3e}; checkpoint {}",
        losses.len(),
        started.elapsed().as_secs_f64(),
        losses.last().copied().unwrap_or(f64::NAN),
        r.invdyn_path().display()
    );
    Ok(())
}

/// Planner, decoder and the projector setting the planner was trained with.
fn load_models(r: &Resolved) -> Result<(PadModel, InverseDynamics, bool)> {
    let (model, train) = load_planner(r)?;
    let path = r.invdyn_path();
    if !path.exists() {
        return Err(PadError::Data(format!("inverse-dynamics checkpoint {} not found; run train-invdyn first", path.display())).into());
    }
    let ckpt = Checkpoint::load(&path)?;
    ckpt.check_config(pad_core::training::INVDYN_KIND, &serde_json::to_value(&model.config)?)?;
    let inv = restore_invdyn(&ckpt)?;
    Ok((model, inv, train.use_projector))
}

/// Success rate per evaluation seed, averaged over tasks.
fn per_seed_success(report: &Report) -> Vec<f64> {
    let mut seeds: Vec<u64> = report.rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    seeds
        .iter()
        .map(|s| {
            let rows: Vec<_> = report.rows.iter().filter(|r| r.seed == *s).collect();
            rows.iter().map(|r| r.success_rate).sum::<f64>() / rows.len() as f64
        })
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt())
}

fn eval(r: &Resolved, intervals: &[usize], top_ks: &[usize], out_name: &str) -> Result<()> {
    if out_name.is_empty() || out_name.contains(['/', '\\']) || out_name.starts_with('.') {
        return Err(UsageError(format!("--out-name must be a plain directory name, got {out_name:?}")).into());
    }
    let (model, inv, use_projector) = load_models(r)?;
    let env = r.env.build();
    let intervals = if intervals.is_empty() { vec![r.replan_interval] } else { intervals.to_vec() };
    let top_ks = if top_ks.is_empty() { vec![r.plan.top_k] } else { top_ks.to_vec() };
    let max_steps = r.raw.eval.max_steps;
    let settings = |k: usize| PlanSettings {
        top_k: k,
        use_projector,
        ..r.plan.clone()
    };
    for &n in &intervals {
        ReplanController { interval: n, max_steps }.validate(model.config.horizon)?;
    }
    for &k in &top_ks {
        settings(k).validate()?;
    }
    let dir = r.run_dir().join(out_name);
    create_dir(&dir)?;
    let mut csv = format!("{REPORT_HEADER},{EVAL_EXTRA_COLUMNS}\n");
    let mut summary = format!("{SUMMARY_HEADER}\n");
    for &n in &intervals {
        for &k in &top_ks {
            let started = Instant::now();
            let mut controller = PadController {
                model: &model,
                inverse: &inv,
                settings: settings(k),
                schedule: ReplanController { interval: n, max_steps },
                record_diagnostics: false,
            };
            let e = &r.raw.eval;
            let report = evaluate(&mut controller, env.as_ref(), &e.tasks, e.episodes_per_task, &e.seeds)?;
            report.write(&dir, &format!("N{n}_K{k}"))?;
            for row in &report.rows {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{n},{k},{},{}",
                    row.task, row.seed, row.success_rate, row.mean_steps, row.std_steps, row.n_success, row.planner_calls, row.steps_total
                );
            }
            let (mean, std) = mean_std(&per_seed_success(&report));
            let lengths: Vec<f64> = report.success_lengths().iter().map(|&l| l as f64).collect();
            let (mean_steps, _) = mean_std(&lengths);
            let calls: usize = report.rows.iter().map(|r| r.planner_calls).sum();
            let steps: usize = report.rows.iter().map(|r| r.steps_total).sum();
            let _ = writeln!(summary, "{n},{k},{mean},{std},{mean_steps},{calls},{steps}");
            println!(
                "N={n} K={k}: success {:.1}% ± {:.1} over {} seeds, mean steps {mean_steps:.1}, {calls} planner calls / {steps} steps ({:.1}s)",
                100.0 * mean,
                100.0 * std,
                e.seeds.len(),
                started.elapsed().as_secs_f64()
            );
        }
    }
    write(&dir.join("report.csv"), csv)?;
    write(&dir.join("summary.csv"), summary)?;
    println!("reports in {}", dir.display());
    Ok(())
}

fn plan_debug(r: &Resolved, start: Option<Vec<f64>>, goal: Option<Vec<f64>>, family: usize, max_steps: Option<usize>) -> Result<()> {
    let (model, inv, use_projector) = load_models(r)?;
    let env = r.env.build();
    if family >= pad_core::env::TASK_FAMILIES {
        return Err(UsageError(format!("--family must be below {}", pad_core::env::TASK_FAMILIES)).into());
    }
    let mut rng = stream(r.seed(), &[purpose::EPISODE, family as u64, 0]);
    let (sampled_start, sampled_goal) = env.sample_task(family, &mut rng);
    let start = start.unwrap_or(sampled_start);
    let goal = goal.unwrap_or(sampled_goal);
    for (name, v) in [("start", &start), ("goal", &goal)] {
        if v.len() != env.state_dim() || v.iter().any(|x| !x.is_finite()) {
            return Err(UsageError(format!("--{name} needs {} finite values for {}", env.state_dim(), env.name())).into());
        }
    }
    let max_steps = max_steps.unwrap_or(r.raw.eval.max_steps);
    let mut controller = PadController {
        model: &model,
        inverse: &inv,
        settings: PlanSettings {
            use_projector,
            ..r.plan.clone()
        },
        schedule: ReplanController {
            interval: r.replan_interval,
            max_steps,
        },
        record_diagnostics: true,
    };
    let result = controller.run_episode(env.as_ref(), &start, &goal, SUCCESS_EPS, max_steps, r.seed())?;
    let dir = r.run_dir().join("plan_debug");
    create_dir(&dir)?;
    write(&dir.join("diagnostics.csv"), diagnostics_csv(&result.diagnostics))?;
    write(&dir.join("diagnostics.svg"), diagnostics_svg(&result.diagnostics))?;
    let episode = json!({
        "start": start,
        "goal": goal,
        "success": result.success,
        "steps": result.steps,
        "planner_calls": result.planner_calls,
        "actions": result.actions,
        "final_state": result.final_state,
        "failure": result.failure,
    });
    write(&dir.join("episode.json"), serde_json::to_string_pretty(&episode)?)?;
    println!(
        "{} after {} steps ({} planner calls){}; diagnostics in {}",
        if result.success { "reached goal" } else { "did not reach goal" },
        result.steps,
        result.planner_calls,
        result.failure.map_or(String::new(), |f| format!(", failure: {f}")),
        dir.display()
    );
    Ok(())
}
