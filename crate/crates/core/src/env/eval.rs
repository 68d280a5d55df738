use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Env, MAX_EPISODE_STEPS, SUCCESS_EPS};
use crate::error::{io_err, Result};
use crate::planning::CandidateRecord;
use crate::rng::{purpose, stream};

/// Outcome of one goal-reaching episode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeResult {
    pub success: bool,
    pub steps: usize,
    pub planner_calls: usize,
    pub actions: Vec<Vec<f64>>,
    pub final_state: Vec<f64>,
    /// Why the episode ended early, if it did.
    pub failure: Option<String>,
    /// Per-replan candidate diagnostics (empty for non-planning controllers).
    pub diagnostics: Vec<CandidateRecord>,
}

/// Anything that can drive an environment from a start state to a goal.
pub trait Controller {
    fn run_episode(
        &mut self,
        env: &dyn Env,
        start: &[f64],
        goal: &[f64],
        eps: f64,
        max_steps: usize,
        seed: u64,
    ) -> Result<EpisodeResult>;
}

/// Steps `act` until success, failure or the step budget.
pub fn run_scripted(
    env: &dyn Env,
    start: &[f64],
    goal: &[f64],
    eps: f64,
    max_steps: usize,
    mut act: impl FnMut(&[f64]) -> Vec<f64>,
) -> EpisodeResult {
    let mut state = start.to_vec();
    let mut out = EpisodeResult::default();
    while !env.success(&state, goal, eps) && out.steps < max_steps {
        let a = act(&state);
        match env.step(&state, &a) {
            Ok(next) => state = next,
            Err(e) => {
                out.failure = Some(e.to_string());
                break;
            }
        }
        out.actions.push(a);
        out.steps += 1;
    }
    out.success = out.failure.is_none() && env.success(&state, goal, eps);
    out.final_state = state;
    out
}

/// The noise-free scripted expert.
pub struct ScriptedController;

impl Controller for ScriptedController {
    fn run_episode(&mut self, env: &dyn Env, start: &[f64], goal: &[f64], eps: f64, max_steps: usize, _seed: u64) -> Result<EpisodeResult> {
        Ok(run_scripted(env, start, goal, eps, max_steps, |s| env.expert_action(s, goal)))
    }
}

/// Uniformly random admissible actions.
pub struct RandomController;

impl Controller for RandomController {
    fn run_episode(&mut self, env: &dyn Env, start: &[f64], goal: &[f64], eps: f64, max_steps: usize, seed: u64) -> Result<EpisodeResult> {
        let mut rng = stream(seed, &[purpose::EPISODE]);
        Ok(run_scripted(env, start, goal, eps, max_steps, |_| env.random_action(&mut rng)))
    }
}

/// One line of the raw episode log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task: String,
    pub family: usize,
    pub seed: u64,
    pub episode: usize,
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    pub success: bool,
    pub steps: usize,
    pub planner_calls: usize,
    pub failure: Option<String>,
}

/// Success statistics of one task under one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub family: usize,
    pub seed: u64,
    pub episodes: usize,
    pub success_rate: f64,
    /// Over successful episodes only; NaN when there are none.
    pub mean_steps: f64,
    pub std_steps: f64,
    pub n_success: usize,
    pub planner_calls: usize,
    pub steps_total: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub episodes: Vec<EpisodeRecord>,
}

pub const REPORT_HEADER: &str = "task,seed,success_rate,mean_steps,std_steps,n_success";

impl Report {
    /// Mean over seeds of each seed's success rate across all tasks.
    pub fn mean_success_rate(&self) -> f64 {
        let mut seeds: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let per_seed: Vec<f64> = seeds
            .iter()
            .map(|s| {
                let rows: Vec<&ReportRow> = self.rows.iter().filter(|r| r.seed == *s).collect();
                let n: usize = rows.iter().map(|r| r.episodes).sum();
                rows.iter().map(|r| r.n_success).sum::<usize>() as f64 / n.max(1) as f64
            })
            .collect();
        per_seed.iter().sum::<f64>() / per_seed.len().max(1) as f64
    }

    pub fn csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.4},{:.3},{:.3},{}",
                r.task, r.seed, r.success_rate, r.mean_steps, r.std_steps, r.n_success
            )
            .expect("string write");
        }
        out
    }

    pub fn jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.episodes {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes `<stem>.csv`, `<stem>.jsonl` and `<stem>_lengths.svg` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let files = [
            (format!("{stem}.csv"), self.csv()),
            (format!("{stem}.jsonl"), self.jsonl()?),
            (format!("{stem}_lengths.svg"), histogram_svg(&self.success_lengths(), MAX_EPISODE_STEPS, "episode length (successful episodes)")),
        ];
        for (name, text) in files {
            let p = dir.join(name);
            fs::write(&p, text).map_err(io_err(p))?;
        }
        Ok(())
    }

    pub fn success_lengths(&self) -> Vec<usize> {
        self.episodes.iter().filter(|e| e.success).map(|e| e.steps).collect()
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

/// Runs `episodes_per_task` episodes of each task family under each seed.
/// Start and goal of episode `e` depend only on `(seed, family, e)`.
/// Controller errors mark the episode failed with the error as reason.
pub fn evaluate(
    controller: &mut dyn Controller,
    env: &dyn Env,
    families: &[usize],
    episodes_per_task: usize,
    seeds: &[u64],
) -> Result<Report> {
    let mut report = Report::default();
    for &seed in seeds {
        for &family in families {
            let mut lengths = Vec::new();
            let (mut calls, mut steps_total) = (0, 0);
            for episode in 0..episodes_per_task {
                let mut rng = stream(seed, &[purpose::EPISODE, family as u64, episode as u64]);
                let (start, goal) = env.sample_task(family, &mut rng);
                let episode_seed: u64 = rng.random();
                let result = controller
                    .run_episode(env, &start, &goal, SUCCESS_EPS, MAX_EPISODE_STEPS, episode_seed)
                    .unwrap_or_else(|e| EpisodeResult {
                        failure: Some(e.to_string()),
                        ..EpisodeResult::default()
                    });
                if result.success {
                    lengths.push(result.steps as f64);
                }
                calls += result.planner_calls;
                steps_total += result.steps;
                report.episodes.push(EpisodeRecord {
                    task: env.task_name(family).into(),
                    family,
                    seed,
                    episode,
                    start,
                    goal,
                    success: result.success,
                    steps: result.steps,
                    planner_calls: result.planner_calls,
                    failure: result.failure,
                });
            }
            let (mean_steps, std_steps) = mean_std(&lengths);
            report.rows.push(ReportRow {
                task: env.task_name(family).into(),
                family,
                seed,
                episodes: episodes_per_task,
                success_rate: lengths.len() as f64 / episodes_per_task.max(1) as f64,
                mean_steps,
                std_steps,
                n_success: lengths.len(),
                planner_calls: calls,
                steps_total,
            });
        }
    }
    Ok(report)
}

/// A standalone SVG bar chart of `values` in 20 bins over `[0, max]`.
pub fn histogram_svg(values: &[usize], max: usize, title: &str) -> String {
    const BINS: usize = 20;
    let (w, h, pad) = (640.0, 360.0, 48.0);
    let mut counts = [0usize; BINS];
    for &v in values {
        counts[(v * BINS / (max + 1)).min(BINS - 1)] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bw = (w - 2.0 * pad) / BINS as f64;
    let mut svg = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    );
    let _ = writeln!(svg, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(svg, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{}</text>", w / 2.0, escape(title));
    for (i, &c) in counts.iter().enumerate() {
        let bh = (h - 2.0 * pad) * c as f64 / top;
        let _ = writeln!(
            svg,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"steelblue\"><title>{}-{}: {c}</title></rect>",
            pad + i as f64 * bw,
            h - pad - bh,
            bw - 1.0,
            bh,
            i * (max + 1) / BINS,
            (i + 1) * (max + 1) / BINS - 1
        );
    }
    let _ = writeln!(svg, "<line x1=\"{pad}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>", h - pad, w - pad);
    let _ = writeln!(svg, "<text x=\"{pad}\" y=\"{}\" font-size=\"11\">0</text>", h - pad + 16.0);
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{max}</text>", w - pad, h - pad + 16.0);
    let _ = writeln!(svg, "<text x=\"4\" y=\"{}\" font-size=\"11\">{}</text>", pad, top as usize);
    svg.push_str("</svg>\n");
    svg
}

pub(crate) fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
